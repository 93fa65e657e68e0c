"""Closest-point projection onto the zero set of a smooth implicit function.

The projection minimizes ``|y - x0|^2`` subject to ``P(y) = 0`` with Newton's
method on the optimality (KKT) system

    (y - x0) + lam * grad P(y) = 0,   P(y) = 0.

Patches that defeat the direct solve (near-degenerate saddles where two
contour branches almost touch) are handled by sampling the zero set on a
lattice and polishing the best sample.
"""

import logging
from typing import Callable, Tuple

import numpy as np

from .interp import CubicPatch
from .models import ProjectionResult
from .util import NoConvergenceError

ScalarFn = Callable[[np.ndarray], float]
VectorFn = Callable[[np.ndarray], np.ndarray]

LATTICE_POINTS = 32
LATTICE_MARGIN = 0.25


def _cross_norm(g: np.ndarray, r: np.ndarray) -> float:
    if g.shape[0] == 2:
        return abs(g[0] * r[1] - g[1] * r[0])
    return float(np.linalg.norm(np.cross(g, r)))


def projection_converged(p: float, g: np.ndarray, x0: np.ndarray, y: np.ndarray, tol: float, h: float) -> bool:
    """Both optimality conditions: on the zero set, and grad P parallel to x0 - y."""
    gnorm = float(np.linalg.norm(g))
    if not np.isfinite(p) or gnorm == 0.0:
        return False
    r = x0 - y
    on_set = abs(p) / gnorm <= tol * h
    collinear = _cross_norm(g, r) <= tol * gnorm * max(float(np.linalg.norm(r)), h)
    return on_set and collinear


def lagrange_newton(value: ScalarFn, grad: VectorFn, hess: VectorFn, x0: np.ndarray, y: np.ndarray,
                    tol: float, h: float, max_iter: int = 50) -> Tuple[np.ndarray, int, bool]:
    """Newton iteration on the KKT system of the projection problem.

    Args:
        value: P(y).
        grad: Gradient of P, shape (d,).
        hess: Hessian of P, shape (d, d).
        x0: The point being projected.
        y: Starting guess, ideally close to the zero set.
        tol: Relative tolerance (scaled by ``h``).
        h: Length scale of the problem (the grid spacing).
        max_iter: Iteration budget.

    Returns:
        (y, iterations, converged).
    """
    x0 = np.asarray(x0, dtype=float)
    y = np.asarray(y, dtype=float).copy()
    dim = x0.shape[0]
    g = grad(y)
    gg = float(g @ g)
    if gg == 0.0 or not np.isfinite(gg):
        return y, 0, False
    lam = -float((y - x0) @ g) / gg
    kkt = np.zeros((dim + 1, dim + 1))
    rhs = np.empty(dim + 1)
    for it in range(max_iter + 1):
        p = value(y)
        g = grad(y)
        if projection_converged(p, g, x0, y, tol, h):
            return y, it, True
        if it == max_iter:
            break
        kkt[:dim, :dim] = np.eye(dim) + lam * hess(y)
        kkt[:dim, dim] = g
        kkt[dim, :dim] = g
        kkt[dim, dim] = 0.0
        rhs[:dim] = -((y - x0) + lam * g)
        rhs[dim] = -p
        try:
            step = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            return y, it, False
        if not np.all(np.isfinite(step)):
            return y, it, False
        y = y + step[:dim]
        lam += step[dim]
    return y, max_iter, False


def newton_onto_zero_set(patch: CubicPatch, points: np.ndarray, steps: int = 12) -> np.ndarray:
    """Move many points onto P = 0 along the gradient (vectorized scalar Newton)."""
    y = np.array(points, dtype=float)
    for _ in range(steps):
        p = patch.value(y)
        g = patch.gradient(y)
        gg = np.einsum("ij,ij->i", g, g)
        with np.errstate(divide="ignore", invalid="ignore"):
            y = y - (p / gg)[:, None] * g
    return y


def _lattice_fallback(patch: CubicPatch, x0: np.ndarray, tol: float, max_iter: int) -> Tuple[np.ndarray, int]:
    ticks = np.linspace(-LATTICE_MARGIN, 1.0 + LATTICE_MARGIN, LATTICE_POINTS)
    local = np.stack(np.meshgrid(*([ticks] * patch.dim), indexing="ij"), axis=-1).reshape(-1, patch.dim)
    samples = newton_onto_zero_set(patch, patch.origin + patch.h * local)
    p = patch.value(samples)
    g = np.linalg.norm(patch.gradient(samples), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        on_set = np.isfinite(p) & (np.abs(p) <= 1e-8 * patch.h * g)
    if not np.any(on_set):
        raise NoConvergenceError("patch zero set could not be sampled on the fallback lattice")
    candidates = samples[on_set]
    order = np.argsort(np.linalg.norm(candidates - x0, axis=1))
    for k in order[:4]:
        y, iters, ok = lagrange_newton(patch.value, patch.gradient, patch.hessian, x0, candidates[k],
                                       tol, patch.h, max_iter)
        if ok:
            return y, iters
    raise NoConvergenceError(f"closest point from {x0.tolist()} did not converge after the lattice fallback")


def closest_point(patch: CubicPatch, x0, tol: float = 1e-10, max_iter: int = 50) -> ProjectionResult:
    """Project a point onto the zero set of a cell patch.

    The foot point may lie outside the patch's cell; the polynomial is
    evaluated by extrapolation there.

    Args:
        patch: Bicubic or tricubic patch.
        x0: Point to project, shape (d,).
        tol: Relative tolerance; ``|P(y)| / |grad P(y)| <= tol * h`` and the
            collinearity residual ``|grad P x (x0 - y)| <= tol * |grad P| * max(|x0 - y|, h)``.
        max_iter: Newton iteration budget for each solve.

    Returns:
        A ``ProjectionResult`` with the foot point, the distance and ``sign(P(x0))``.

    Raises:
        NoConvergenceError: If the direct solve and the lattice fallback both fail.

    Examples:
        For P = x - 0.3 and x0 = (0.5, 0.5) the foot point is (0.3, 0.5), distance 0.2.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    x0 = np.asarray(x0, dtype=float)
    p0 = patch.value(x0)
    g0 = patch.gradient(x0)
    gg = float(g0 @ g0)
    fallback = False
    y, iters, ok = x0, 0, False
    if gg > 0.0 and np.isfinite(p0):
        y_init = x0 - (p0 / gg) * g0
        y, iters, ok = lagrange_newton(patch.value, patch.gradient, patch.hessian, x0, y_init,
                                       tol, patch.h, max_iter)
    if not ok:
        logging.debug("Direct projection of %s failed, sampling the patch zero set", x0.tolist())
        fallback = True
        y, iters = _lattice_fallback(patch, x0, tol, max_iter)
    return ProjectionResult(point=tuple(float(v) for v in y),
                            distance=float(np.linalg.norm(x0 - y)),
                            side=float(np.sign(p0)),
                            iterations=iters,
                            fallback=fallback)
