"""Test interfaces with closed-form initial level sets and exact oracles.

Every shape gives a distorted initial level set ``phi0`` (with gradient
``psi0``) and an oracle for the exact signed distance, its gradient, its
Hessian and its curvature. The oracle is built from the closest point on the
interface, the foot point:

- circle, sphere, dual circles and planes in closed form,
- ellipse and ellipsoid with a safeguarded Newton solve per point,
- star and 2D Cassini oval from a dense sampling of the curve, polished onto
  the exact zero set,
- 3D Cassini oval from a marching-cubes surface, available only near the
  interface.

Curvatures follow the outward-normal convention (1/R for a circle, 2/R for a
sphere). At distance d from a foot point with principal curvatures k_i the
level-set curvature is ``sum k_i / (1 + k_i d)``.
"""

import logging
from abc import ABC, abstractmethod
from functools import cached_property
from typing import Callable, Dict, NamedTuple, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree
from skimage.measure import marching_cubes

from .util import OracleUnavailableError


class OracleSample(NamedTuple):
    """Exact quantities at a batch of points.

    Attributes:
        distance: Signed distance, shape (M,).
        gradient: Gradient of the signed distance (unit normal at the foot), shape (M, d).
        hessian: Hessian of the signed distance, shape (M, d, d).
        kappa_foot: Sum of principal curvatures at the foot point, shape (M,).
        kappa: Curvature of the level set through the point, shape (M,).
        foot: Foot points, shape (M, d).
    """
    distance: np.ndarray
    gradient: np.ndarray
    hessian: np.ndarray
    kappa_foot: np.ndarray
    kappa: np.ndarray
    foot: np.ndarray


def _rows(points) -> np.ndarray:
    return np.atleast_2d(np.asarray(points, dtype=float))


def polish_feet(implicit: Callable, implicit_grad: Callable, implicit_hess: Callable,
                points: np.ndarray, feet: np.ndarray, iterations: int = 12) -> Tuple[np.ndarray, np.ndarray]:
    """Batched Newton on the projection optimality system for many points at once.

    Args:
        implicit: F(y) for (M, d) arrays.
        implicit_grad: grad F, (M, d).
        implicit_hess: Hessian of F, (M, d, d).
        points: Points being projected, (M, d).
        feet: Starting foot points near the zero set, (M, d).
        iterations: Newton iterations.

    Returns:
        (feet, converged mask).
    """
    m, d = points.shape
    y = feet.copy()
    g = implicit_grad(y)
    gg = np.einsum("ij,ij->i", g, g)
    lam = -np.einsum("ij,ij->i", y - points, g) / gg
    eye = np.eye(d)
    kkt = np.zeros((m, d + 1, d + 1))
    rhs = np.empty((m, d + 1))
    for _ in range(iterations):
        p = implicit(y)
        g = implicit_grad(y)
        kkt[:, :d, :d] = eye + lam[:, None, None] * implicit_hess(y)
        kkt[:, :d, d] = g
        kkt[:, d, :d] = g
        rhs[:, :d] = -((y - points) + lam[:, None] * g)
        rhs[:, d] = -p
        try:
            step = np.linalg.solve(kkt, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        step = np.where(np.isfinite(step), step, 0.0)
        y = y + step[:, :d]
        lam = lam + step[:, d]
    p = implicit(y)
    g = implicit_grad(y)
    gnorm = np.linalg.norm(g, axis=1)
    r = points - y
    rnorm = np.linalg.norm(r, axis=1)
    cos = np.abs(np.einsum("ij,ij->i", g, r)) / np.maximum(gnorm * rnorm, 1e-300)
    converged = (np.abs(p) <= 1e-10 * gnorm) & ((rnorm < 1e-12) | (cos >= 1.0 - 1e-10))
    return y, converged


class Shape(ABC):
    """An interface with an initial level set and an exact distance oracle.

    Subclasses define ``phi0``/``psi0`` and the foot-point search. The
    implicit function used for normals and curvatures at the foot defaults to
    ``phi0`` itself.
    """
    name: str = "shape"
    dim: int = 2
    requires_band: bool = False

    @abstractmethod
    def phi0(self, points) -> np.ndarray:
        """Initial (distorted) level set at (M, d) points."""

    @abstractmethod
    def psi0(self, points) -> np.ndarray:
        """Gradient of ``phi0``, (M, d)."""

    @abstractmethod
    def foot(self, points) -> np.ndarray:
        """Closest interface point for each of (M, d) points."""

    def hess0(self, points) -> np.ndarray:
        """Hessian of ``phi0`` by centered differences of ``psi0``."""
        pts = _rows(points)
        step = 1e-5
        cols = []
        for a in range(self.dim):
            shift = np.zeros(self.dim)
            shift[a] = step
            cols.append((self.psi0(pts + shift) - self.psi0(pts - shift)) / (2.0 * step))
        hess = np.stack(cols, axis=-1)
        return 0.5 * (hess + np.swapaxes(hess, -1, -2))

    def implicit(self, points) -> np.ndarray:
        return self.phi0(points)

    def implicit_grad(self, points) -> np.ndarray:
        return self.psi0(points)

    def implicit_hess(self, points) -> np.ndarray:
        return self.hess0(points)

    def sample(self, grid) -> Tuple[np.ndarray, np.ndarray]:
        """``phi0`` and ``psi0`` on every node of a grid."""
        pts = grid.points()
        return (self.phi0(pts).reshape(grid.shape),
                self.psi0(pts).reshape(grid.shape + (self.dim,)))

    def oracle(self, points, band: Optional[float] = None) -> OracleSample:
        """Exact signed distance and derivatives at (M, d) points.

        Args:
            points: Query points.
            band: Largest |distance| the caller needs; only shapes with
                ``requires_band`` use it.

        Raises:
            OracleUnavailableError: If the shape cannot answer for some point.
        """
        pts = _rows(points)
        feet = self.foot(pts)
        side = np.where(self.phi0(pts) < 0.0, -1.0, 1.0)
        distance = side * np.linalg.norm(pts - feet, axis=1)
        return self._from_feet(pts, feet, distance)

    def near(self, points, band: float) -> np.ndarray:
        """Mask of the points that may lie within ``band`` of the interface (a superset)."""
        return np.ones(len(_rows(points)), dtype=bool)

    def _from_feet(self, pts: np.ndarray, feet: np.ndarray, distance: np.ndarray) -> OracleSample:
        g = self.implicit_grad(feet)
        gnorm = np.linalg.norm(g, axis=1)
        n = g / gnorm[:, None]
        proj = np.eye(self.dim) - n[:, :, None] * n[:, None, :]
        shape_op = proj @ self.implicit_hess(feet) @ proj / gnorm[:, None, None]
        values, vectors = np.linalg.eigh(shape_op)
        normal_slot = np.argmax(np.abs(np.einsum("mi,mij->mj", n, vectors)), axis=1)
        tangent = np.ones_like(values, dtype=bool)
        tangent[np.arange(len(values)), normal_slot] = False
        k = np.where(tangent, values, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            level = np.where(tangent, k / (1.0 + k * distance[:, None]), 0.0)
        hessian = np.einsum("mij,mj,mkj->mik", vectors, level, vectors)
        return OracleSample(distance=distance, gradient=n, hessian=hessian,
                            kappa_foot=k.sum(axis=1), kappa=level.sum(axis=1), foot=feet)


class Plane(Shape):
    """Plane ``n . x = c`` with initial level set ``scale * (n . x - c)``."""

    def __init__(self, normal, offset: float = 0.0, scale: float = 1.0) -> None:
        normal = np.asarray(normal, dtype=float)
        self.normal = normal / np.linalg.norm(normal)
        self.offset = float(offset)
        self.scale = float(scale)
        self.dim = len(normal)
        self.name = f"plane{self.dim}d"

    def phi0(self, points):
        return self.scale * (_rows(points) @ self.normal - self.offset)

    def psi0(self, points):
        return np.tile(self.scale * self.normal, (len(_rows(points)), 1))

    def hess0(self, points):
        return np.zeros((len(_rows(points)), self.dim, self.dim))

    def foot(self, points):
        pts = _rows(points)
        return pts - (pts @ self.normal - self.offset)[:, None] * self.normal


class Sphere(Shape):
    """Circle (2D) or sphere (3D) with the distorted level set ``exp(|x - c|^2) - exp(R^2)``."""

    def __init__(self, dim: int = 2, radius: float = 1.0, center=None) -> None:
        self.dim = dim
        self.radius = float(radius)
        self.center = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        self.name = "circle" if dim == 2 else "sphere"

    def phi0(self, points):
        r2 = np.sum((_rows(points) - self.center) ** 2, axis=1)
        return np.exp(r2) - np.exp(self.radius ** 2)

    def psi0(self, points):
        rel = _rows(points) - self.center
        return 2.0 * rel * np.exp(np.sum(rel ** 2, axis=1))[:, None]

    def hess0(self, points):
        rel = _rows(points) - self.center
        ex = np.exp(np.sum(rel ** 2, axis=1))[:, None, None]
        return ex * (2.0 * np.eye(self.dim) + 4.0 * rel[:, :, None] * rel[:, None, :])

    def foot(self, points):
        rel = _rows(points) - self.center
        r = np.linalg.norm(rel, axis=1)
        unit = np.where(r[:, None] > 0.0, rel / np.where(r > 0.0, r, 1.0)[:, None], np.eye(self.dim)[0])
        return self.center + self.radius * unit

    def oracle(self, points, band: Optional[float] = None) -> OracleSample:
        pts = _rows(points)
        feet = self.foot(pts)
        distance = np.linalg.norm(pts - self.center, axis=1) - self.radius
        return self._from_feet(pts, feet, distance)


class DualCircles(Shape):
    """Union of two circles; ``phi0`` is the minimum of the two squared-radius forms."""
    name = "dual-circles"
    dim = 2

    def __init__(self, centers=((0.8125, 0.4125), (-0.8125, -0.4125)), radius: float = 0.75) -> None:
        self.centers = np.asarray(centers, dtype=float)
        self.radius = float(radius)

    def _active(self, pts: np.ndarray) -> np.ndarray:
        d2 = np.stack([np.sum((pts - c) ** 2, axis=1) for c in self.centers], axis=1)
        return np.argmin(d2, axis=1)

    def phi0(self, points):
        pts = _rows(points)
        return np.min(np.stack([np.sum((pts - c) ** 2, axis=1) for c in self.centers], axis=1), axis=1) - self.radius ** 2

    def psi0(self, points):
        pts = _rows(points)
        return 2.0 * (pts - self.centers[self._active(pts)])

    def hess0(self, points):
        return np.tile(2.0 * np.eye(2), (len(_rows(points)), 1, 1))

    def foot(self, points):
        pts = _rows(points)
        c = self.centers[self._active(pts)]
        rel = pts - c
        r = np.linalg.norm(rel, axis=1)
        unit = np.where(r[:, None] > 0.0, rel / np.where(r > 0.0, r, 1.0)[:, None], np.array([1.0, 0.0]))
        return c + self.radius * unit

    def oracle(self, points, band: Optional[float] = None) -> OracleSample:
        pts = _rows(points)
        feet = self.foot(pts)
        distance = np.min(np.stack([np.linalg.norm(pts - c, axis=1) for c in self.centers], axis=1), axis=1) - self.radius
        return self._from_feet(pts, feet, distance)


def ellipsoid_feet(points: np.ndarray, semi_axes: np.ndarray, iterations: int = 80) -> np.ndarray:
    """Closest points on the ellipse/ellipsoid ``sum (y_i / a_i)^2 = 1``.

    Solves ``sum (a_i q_i / (t + a_i^2))^2 = 1`` for t per point with Newton's
    method inside a bisection bracket (q = |p|), then maps back to the
    point's octant. Interior points on the plane of the smallest axis use the
    closed-form off-plane foot when it exists.
    """
    a = np.asarray(semi_axes, dtype=float)
    a2 = a * a
    q = np.abs(_rows(points))
    k = int(np.argmin(a))
    qnorm = np.linalg.norm(q, axis=1)

    def g_and_dg(t):
        denom = t[:, None] + a2
        safe = np.where(denom > 0.0, denom, 1.0)
        ratio = np.where(q > 0.0, a * q / safe, 0.0)
        return np.sum(ratio ** 2, axis=1) - 1.0, -2.0 * np.sum(ratio ** 2 / safe, axis=1)

    lo = -a2[k] + a[k] * q[:, k]
    hi = np.maximum(a.max() * qnorm, lo)
    t = 0.5 * (lo + hi)
    for _ in range(iterations):
        g, dg = g_and_dg(t)
        lo = np.where(g > 0.0, t, lo)
        hi = np.where(g <= 0.0, t, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = t - g / dg
        inside = np.isfinite(newton) & (newton > lo) & (newton < hi)
        t = np.where(inside, newton, 0.5 * (lo + hi))
    feet = a2 * q / (t[:, None] + a2)

    # points on the smallest-axis plane, inside: the foot leaves the plane
    others = [i for i in range(len(a)) if i != k]
    flat = q[:, k] == 0.0
    if np.any(flat):
        y = np.zeros((int(flat.sum()), len(a)))
        for i in others:
            y[:, i] = a2[i] * q[flat, i] / (a2[i] - a2[k])
        s = np.sum((y[:, others] / a[others]) ** 2, axis=1)
        off_plane = s < 1.0
        y[:, k] = a[k] * np.sqrt(np.clip(1.0 - s, 0.0, None))
        rows = np.flatnonzero(flat)[off_plane]
        feet[rows] = y[off_plane]

    signs = np.where(_rows(points) < 0.0, -1.0, 1.0)
    return signs * feet


class Ellipse(Shape):
    """Ellipse (2D) or ellipsoid (3D).

    The ellipse uses ``phi0 = sum (x_i / a_i)^2 - 1`` and the ellipsoid
    ``phi0 = sqrt(sum (x_i / a_i)^2) - 1``; both share the zero set.
    """

    def __init__(self, semi_axes=(1.5, 0.5)) -> None:
        self.semi_axes = np.asarray(semi_axes, dtype=float)
        self.dim = len(self.semi_axes)
        self.name = "ellipse" if self.dim == 2 else "ellipsoid"

    def _quad(self, pts: np.ndarray) -> np.ndarray:
        return np.sum((pts / self.semi_axes) ** 2, axis=1)

    def phi0(self, points):
        pts = _rows(points)
        if self.dim == 2:
            return self._quad(pts) - 1.0
        return np.sqrt(self._quad(pts)) - 1.0

    def psi0(self, points):
        pts = _rows(points)
        grad = 2.0 * pts / self.semi_axes ** 2
        if self.dim == 2:
            return grad
        root = np.sqrt(self._quad(pts))
        return 0.5 * grad / np.where(root > 0.0, root, 1.0)[:, None]

    def implicit(self, points):
        return self._quad(_rows(points)) - 1.0

    def implicit_grad(self, points):
        return 2.0 * _rows(points) / self.semi_axes ** 2

    def implicit_hess(self, points):
        return np.tile(np.diag(2.0 / self.semi_axes ** 2), (len(_rows(points)), 1, 1))

    def hess0(self, points):
        if self.dim == 2:
            return self.implicit_hess(points)
        return super().hess0(points)

    def foot(self, points):
        return ellipsoid_feet(_rows(points), self.semi_axes)


class SampledCurve(Shape, ABC):
    """2D shape whose oracle uses a dense polar sampling of the interface.

    The nearest sample (KD-tree) is polished onto the exact zero set of
    ``phi0``; points where polishing fails keep the nearest sample.
    """
    samples: int = 200_000

    @abstractmethod
    def radius_at(self, theta: np.ndarray) -> np.ndarray:
        """Polar radius of the interface at angle theta."""

    @cached_property
    def curve(self) -> np.ndarray:
        theta = np.linspace(0.0, 2.0 * np.pi, self.samples, endpoint=False)
        r = self.radius_at(theta)
        return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.curve)

    def foot(self, points):
        pts = _rows(points)
        _, idx = self.tree.query(pts)
        start = self.curve[idx]
        feet, ok = polish_feet(self.implicit, self.implicit_grad, self.implicit_hess, pts, start)
        if not np.all(ok):
            logging.debug("%s oracle: %s points kept their nearest sample", self.name, int((~ok).sum()))
        return np.where(ok[:, None], feet, start)


class Star(SampledCurve):
    """Five-pointed star ``r = 1 - sin(5 theta) / 4`` with ``phi0 = r - 1 + sin(5 theta) / 4``.

    The angle is the full-plane ``atan2(y, x)`` so that ``phi0`` is continuous.
    """
    name = "star"
    dim = 2

    def radius_at(self, theta):
        return 1.0 - np.sin(5.0 * theta) / 4.0

    def phi0(self, points):
        pts = _rows(points)
        r = np.linalg.norm(pts, axis=1)
        theta = np.arctan2(pts[:, 1], pts[:, 0])
        return r - 1.0 + np.sin(5.0 * theta) / 4.0

    def psi0(self, points):
        pts = _rows(points)
        r = np.linalg.norm(pts, axis=1)
        safe = np.where(r > 0.0, r, 1.0)
        theta = np.arctan2(pts[:, 1], pts[:, 0])
        radial = pts / safe[:, None]
        angular = np.stack([-pts[:, 1], pts[:, 0]], axis=1) / (safe ** 2)[:, None]
        grad = radial + (1.25 * np.cos(5.0 * theta))[:, None] * angular
        return np.where(r[:, None] > 0.0, grad, 0.0)


class Cassini(Shape):
    """Cassini oval ``((x - a)^2 + |x'|^2)((x + a)^2 + |x'|^2) = b^4`` (x' the other coordinates).

    In 3D the surface is the oval rotated about the x axis.
    """

    def __init__(self, dim: int = 2, a: float = 0.99, b: float = 1.01) -> None:
        if b <= a:
            raise ValueError("only the single-loop oval (b > a) is supported")
        self.dim = dim
        self.a = float(a)
        self.b = float(b)
        self.name = f"cassini{dim}d"
        self.requires_band = dim == 3

    def _uv(self, pts: np.ndarray):
        rest = np.sum(pts[:, 1:] ** 2, axis=1)
        u = (pts[:, 0] - self.a) ** 2 + rest
        v = (pts[:, 0] + self.a) ** 2 + rest
        du = 2.0 * pts.copy()
        du[:, 0] = 2.0 * (pts[:, 0] - self.a)
        dv = 2.0 * pts.copy()
        dv[:, 0] = 2.0 * (pts[:, 0] + self.a)
        return u, v, du, dv

    def phi0(self, points):
        u, v, _, _ = self._uv(_rows(points))
        return u * v - self.b ** 4

    def psi0(self, points):
        u, v, du, dv = self._uv(_rows(points))
        return v[:, None] * du + u[:, None] * dv

    def hess0(self, points):
        u, v, du, dv = self._uv(_rows(points))
        eye = np.eye(self.dim)
        return (2.0 * (u + v)[:, None, None] * eye
                + du[:, :, None] * dv[:, None, :] + dv[:, :, None] * du[:, None, :])

    def profile(self, theta: np.ndarray) -> np.ndarray:
        """Polar radius of the planar oval at angle theta."""
        s2 = np.sin(2.0 * theta)
        return np.sqrt(self.a ** 2 * np.cos(2.0 * theta) + np.sqrt(self.b ** 4 - self.a ** 4 * s2 * s2))

    @cached_property
    def curve(self) -> np.ndarray:
        theta = np.linspace(0.0, 2.0 * np.pi, 200_000, endpoint=False)
        r = self.profile(theta)
        return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)

    @cached_property
    def surface(self) -> np.ndarray:
        """Marching-cubes vertices of the 3D oval on a fine box."""
        extent_x = float(self.profile(np.array([0.0]))[0]) + 0.1
        extent_r = self.b ** 2 / (2.0 * self.a) + 0.15
        spacing = 0.0125
        xs = np.arange(-extent_x, extent_x + spacing, spacing)
        rs = np.arange(-extent_r, extent_r + spacing, spacing)
        X, Y, Z = np.meshgrid(xs, rs, rs, indexing="ij", sparse=True)
        rest = Y ** 2 + Z ** 2
        volume = ((X - self.a) ** 2 + rest) * ((X + self.a) ** 2 + rest) - self.b ** 4
        verts, _, _, _ = marching_cubes(volume, level=0.0, spacing=(spacing, spacing, spacing))
        logging.info("Cassini surface sampled with %s marching-cubes vertices", len(verts))
        return verts + np.array([xs[0], rs[0], rs[0]])

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.curve if self.dim == 2 else self.surface)

    def foot(self, points):
        pts = _rows(points)
        _, idx = self.tree.query(pts)
        start = (self.curve if self.dim == 2 else self.surface)[idx]
        feet, ok = polish_feet(self.implicit, self.implicit_grad, self.implicit_hess, pts, start)
        if not np.all(ok):
            logging.debug("%s oracle: %s points kept their nearest sample", self.name, int((~ok).sum()))
        return np.where(ok[:, None], feet, start)

    def near(self, points, band: float) -> np.ndarray:
        if self.dim == 2:
            return super().near(points, band)
        # vertices sit within one sampling cell of the surface
        dist, _ = self.tree.query(_rows(points), distance_upper_bound=band + 0.025)
        return np.isfinite(dist)

    def oracle(self, points, band: Optional[float] = None) -> OracleSample:
        if self.requires_band and band is None:
            raise OracleUnavailableError(f"the {self.name} oracle is only available within a band around the interface")
        sample = super().oracle(points)
        if self.requires_band and np.any(np.abs(sample.distance) > band):
            raise OracleUnavailableError(f"the {self.name} oracle was asked for points beyond |phi| <= {band:g}")
        return sample


SHAPES: Dict[str, Callable[[], Shape]] = {
    "circle": lambda: Sphere(2),
    "ellipse": lambda: Ellipse((1.5, 0.5)),
    "dual-circles": DualCircles,
    "cassini2d": lambda: Cassini(2, 0.99, 1.01),
    "star": Star,
    "plane2d": lambda: Plane((1.0, 0.0), 0.05, 2.0),
    "sphere": lambda: Sphere(3),
    "ellipsoid": lambda: Ellipse((1.6, 1.2, 0.5)),
    "cassini3d": lambda: Cassini(3, 1.29, 1.3),
    "plane3d": lambda: Plane((0.0, 0.0, 1.0), 0.05, 2.0),
}


def get_shape(name: str) -> Shape:
    """Look up a shape by name.

    Raises:
        ValueError: For unknown names.
    """
    try:
        return SHAPES[name]()
    except KeyError:
        raise ValueError(f"unknown shape {name!r}, expected one of {sorted(SHAPES)}") from None
