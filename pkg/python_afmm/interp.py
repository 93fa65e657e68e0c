"""Bicubic and tricubic Hermite patches over one grid cell.

A patch is fitted from the jet data at the cell corners (value, first
derivatives and mixed derivatives) and evaluated in local coordinates
``u = (x - origin) / h``. Derivative data is scaled by powers of h before the
fit, so the coefficient system does not depend on the spacing.
"""

import itertools
from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

from .models import GridSpec
from .util import NodeIndex

# 1D cubic Hermite on [0, 1]: monomial coefficients from (p0, p1, dp0, dp1).
HERMITE = np.array([[1.0, 0.0, 0.0, 0.0],
                    [0.0, 0.0, 1.0, 0.0],
                    [-3.0, 3.0, -2.0, -1.0],
                    [2.0, -2.0, 1.0, 1.0]])

# Mixed-derivative multi-indices prescribed at every corner, beyond value and gradient.
CROSS_TERMS: Dict[int, Tuple[Tuple[int, ...], ...]] = {
    2: ((1, 1),),
    3: ((1, 1, 0), (1, 0, 1), (0, 1, 1), (1, 1, 1)),
}


def cross_derivative_fields(psi: np.ndarray, h: float) -> np.ndarray:
    """Mixed derivatives at every node, differenced from the gradient field.

    In 2D ``phi_xy = (D_x psi_y + D_y psi_x) / 2``. In 3D each pair uses the
    same average and the triple term is ``(D_yz psi_x + D_xz psi_y + D_xy psi_z) / 3``.
    Differences are second order, centered inside and one-sided on the boundary.

    Args:
        psi: Gradient field, shape ``grid.shape + (dim,)``.
        h: Grid spacing.

    Returns:
        Array of shape ``grid.shape + (1,)`` in 2D (xy) or ``grid.shape + (4,)``
        in 3D (xy, xz, yz, xyz).

    Examples:
        For phi = x*y (psi = (y, x)) every node gives 1.0.
    """
    dim = psi.shape[-1]

    def d(arr, axis):
        return np.gradient(arr, h, axis=axis, edge_order=2)

    if dim == 2:
        return (0.5 * (d(psi[..., 1], 0) + d(psi[..., 0], 1)))[..., None]
    out = [0.5 * (d(psi[..., b], a) + d(psi[..., a], b)) for a, b in ((0, 1), (0, 2), (1, 2))]
    out.append((d(d(psi[..., 0], 1), 2) + d(d(psi[..., 1], 0), 2) + d(d(psi[..., 2], 0), 1)) / 3.0)
    return np.stack(out, axis=-1)


def _basis(u: np.ndarray, order: int) -> np.ndarray:
    """Monomials 1, u, u^2, u^3 (or their derivatives) for an array of coordinates, shape (M, 4)."""
    one, zero = np.ones_like(u), np.zeros_like(u)
    if order == 0:
        return np.stack([one, u, u * u, u * u * u], axis=-1)
    if order == 1:
        return np.stack([zero, one, 2.0 * u, 3.0 * u * u], axis=-1)
    if order == 2:
        return np.stack([zero, zero, 2.0 * one, 6.0 * u], axis=-1)
    raise ValueError(f"derivative order {order} is not supported")


_CONTRACT = {2: "ij,mi,mj->m", 3: "ijk,mi,mj,mk->m"}


@dataclass(frozen=True)
class CubicPatch:
    """Tensor-product cubic polynomial over one cell.

    Attributes:
        dim: 2 (bicubic, 16 coefficients) or 3 (tricubic, 64 coefficients).
        origin: Physical coordinates of the cell's lower corner.
        h: Cell size.
        coeffs: Array of shape (4,)*dim; ``coeffs[i, j]`` multiplies ``u**i * v**j``.
    """
    dim: int
    origin: np.ndarray
    h: float
    coeffs: np.ndarray

    def local(self, points) -> Tuple[np.ndarray, bool]:
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        return (pts - self.origin) / self.h, single

    def derivative(self, points, orders: Sequence[int]):
        """Evaluate a partial derivative of P at one point (d,) or many (M, d).

        Args:
            points: Physical coordinates.
            orders: Derivative order per axis, e.g. (1, 0) for d/dx.

        Returns:
            A float for a single point, an (M,) array otherwise.
        """
        u, single = self.local(points)
        bases = [_basis(u[:, a], orders[a]) for a in range(self.dim)]
        val = np.einsum(_CONTRACT[self.dim], self.coeffs, *bases) / self.h ** sum(orders)
        return float(val[0]) if single else val

    def value(self, points):
        return self.derivative(points, (0,) * self.dim)

    def gradient(self, points) -> np.ndarray:
        """Gradient of P, shape (d,) for one point or (M, d)."""
        u, single = self.local(points)
        b0 = [_basis(u[:, a], 0) for a in range(self.dim)]
        b1 = [_basis(u[:, a], 1) for a in range(self.dim)]
        cols = []
        for a in range(self.dim):
            bases = [b1[k] if k == a else b0[k] for k in range(self.dim)]
            cols.append(np.einsum(_CONTRACT[self.dim], self.coeffs, *bases))
        grad = np.stack(cols, axis=-1) / self.h
        return grad[0] if single else grad

    def hessian(self, points) -> np.ndarray:
        """Hessian of P, shape (d, d) for one point or (M, d, d)."""
        u, single = self.local(points)
        b = [[_basis(u[:, a], q) for q in range(3)] for a in range(self.dim)]
        out = np.empty((u.shape[0], self.dim, self.dim))
        for a in range(self.dim):
            for c in range(a, self.dim):
                orders = [0] * self.dim
                orders[a] += 1
                orders[c] += 1
                bases = [b[k][orders[k]] for k in range(self.dim)]
                out[:, a, c] = out[:, c, a] = np.einsum(_CONTRACT[self.dim], self.coeffs, *bases)
        out /= self.h ** 2
        return out[0] if single else out


def fit_hermite(dim: int, origin, h: float, corner_derivs: Dict[Tuple[int, ...], np.ndarray]) -> CubicPatch:
    """Fit the tensor Hermite cubic matching all prescribed corner derivatives.

    Args:
        dim: 2 or 3.
        origin: Lower corner of the cell.
        h: Cell size.
        corner_derivs: For every multi-index m in {0, 1}^dim, the physical
            derivative d^m phi at the 2**dim corners (``cell_corners`` order).

    Returns:
        The fitted ``CubicPatch``.
    """
    data = np.empty((4,) * dim)
    for m in itertools.product((0, 1), repeat=dim):
        values = np.asarray(corner_derivs[m], dtype=float) * h ** sum(m)
        for k in range(2 ** dim):
            slot = tuple(2 * m[a] + ((k >> a) & 1) for a in range(dim))
            data[slot] = values[k]
    if dim == 2:
        coeffs = HERMITE @ data @ HERMITE.T
    else:
        coeffs = np.einsum("ia,jb,kc,abc->ijk", HERMITE, HERMITE, HERMITE, data)
    return CubicPatch(dim=dim, origin=np.asarray(origin, dtype=float), h=float(h), coeffs=coeffs)


def fit_bicubic(phi, psi, phixy, h: float, origin=(0.0, 0.0)) -> CubicPatch:
    """Fit a bicubic patch from corner data.

    Args:
        phi: Values at the 4 corners, shape (4,).
        psi: Gradients at the corners, shape (4, 2).
        phixy: Mixed derivatives at the corners, shape (4,).
        h: Cell size.
        origin: Lower-left corner of the cell.

    Returns:
        A patch whose value, gradient and phi_xy at the corners equal the inputs.

    Examples:
        Data sampled from x + y on the unit cell reproduces x + y everywhere.
    """
    psi = np.asarray(psi, dtype=float)
    return fit_hermite(2, origin, h, {(0, 0): phi, (1, 0): psi[:, 0], (0, 1): psi[:, 1], (1, 1): phixy})


def fit_tricubic(phi, psi, cross, h: float, origin=(0.0, 0.0, 0.0)) -> CubicPatch:
    """Fit a tricubic patch from corner data.

    Args:
        phi: Values at the 8 corners.
        psi: Gradients at the corners, shape (8, 3).
        cross: Mixed derivatives (xy, xz, yz, xyz) at the corners, shape (8, 4).
        h: Cell size.
        origin: Lower corner of the cell.
    """
    psi = np.asarray(psi, dtype=float)
    cross = np.asarray(cross, dtype=float)
    derivs = {(0, 0, 0): phi, (1, 0, 0): psi[:, 0], (0, 1, 0): psi[:, 1], (0, 0, 1): psi[:, 2]}
    for k, m in enumerate(CROSS_TERMS[3]):
        derivs[m] = cross[:, k]
    return fit_hermite(3, origin, h, derivs)


def fit_cell(cell: NodeIndex, grid: GridSpec, phi: np.ndarray, psi: np.ndarray, cross: np.ndarray) -> CubicPatch:
    """Fit the patch of one cell from whole-field arrays.

    Args:
        cell: Cell index.
        grid: The grid.
        phi: Level set values, shape ``grid.shape``.
        psi: Gradient, shape ``grid.shape + (dim,)``.
        cross: Output of ``cross_derivative_fields``.
    """
    corners = np.asarray(cell) + np.array([[(k >> a) & 1 for a in range(grid.dim)] for k in range(2 ** grid.dim)])
    idx = tuple(corners.T)
    origin = grid.coords(cell)
    if grid.dim == 2:
        return fit_bicubic(phi[idx], psi[idx], cross[idx][:, 0], grid.h, origin)
    return fit_tricubic(phi[idx], psi[idx], cross[idx], grid.h, origin)


def evaluate(patch: CubicPatch, point):
    """Value of the patch at a point (extrapolation outside the cell is allowed)."""
    return patch.value(point)


def evaluate_grad(patch: CubicPatch, point) -> np.ndarray:
    """Gradient of the patch at a point."""
    return patch.gradient(point)
