"""Curvature, error norms, convergence orders and the diagonal stencil study.

Errors are measured against a shape's exact oracle on the whole grid or on
the band ``|d| <= band_width * h`` around the interface. Curvature errors are
relative, ``|kappa - kappa_e| / |kappa_e|``; nodes where the exact curvature
vanishes or the computed gradient is degenerate are left out and counted.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .grid import HESS_NAMES, JetField, hess_to_matrix, matrix_to_hess
from .models import ErrorReport, GridSpec, Quantity, Region, StencilResult
from .shapes import Shape
from .systems import NeighborData, UpdateCase, jacobian_grad, newton_solve, residual_grad
from .util import DegenerateGradientError, EmptyRegionError, NonPositiveError

DEFAULT_BAND_WIDTH = 9.0
# Below this gradient magnitude curvature is not evaluated.
DEGENERATE_GRADIENT = 0.1
# Exact curvatures below this are left out of relative errors.
FLAT_CURVATURE = 1e-6


def curvature(psi, hess, dim: Optional[int] = None) -> float:
    """Curvature ``div(psi / |psi|)`` of a level set from its jet at one node.

    Args:
        psi: Gradient, shape (d,).
        hess: Hessian, either stored slots (3 or 6) or a (d, d) matrix.
        dim: Dimension; taken from ``psi`` when omitted.

    Returns:
        ``(trace(H) |psi|^2 - psi^T H psi) / |psi|^3``; positive for a circle
        or sphere with the outward-normal sign convention.

    Raises:
        DegenerateGradientError: If ``|psi| <= 0.1``.

    Examples:
        >>> curvature([1.0, 0.0], [[0.0, 0.0], [0.0, 3.0]])
        3.0
    """
    psi = np.asarray(psi, dtype=float)
    dim = dim or psi.shape[0]
    hess = np.asarray(hess, dtype=float)
    matrix = hess if hess.ndim == 2 else hess_to_matrix(hess, dim)
    norm = float(np.linalg.norm(psi))
    if not norm > DEGENERATE_GRADIENT:
        raise DegenerateGradientError(f"gradient magnitude {norm:.3g} is too small for a curvature")
    return float((np.trace(matrix) * norm ** 2 - psi @ matrix @ psi) / norm ** 3)


def curvature_field(psi: np.ndarray, hess: np.ndarray) -> np.ndarray:
    """Curvature at every node; NaN where the gradient is degenerate.

    Args:
        psi: Gradients, shape ``S + (d,)``.
        hess: Stored Hessian slots, shape ``S + (3,)`` or ``S + (6,)``.
    """
    psi = np.asarray(psi, dtype=float)
    matrix = hess_to_matrix(hess, psi.shape[-1])
    norm = np.linalg.norm(psi, axis=-1)
    trace = np.trace(matrix, axis1=-2, axis2=-1)
    quad = np.einsum("...i,...ij,...j->...", psi, matrix, psi)
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = (trace * norm ** 2 - quad) / norm ** 3
    return np.where(norm > DEGENERATE_GRADIENT, kappa, np.nan)


def jet_from_phi(phi: np.ndarray, h: float) -> JetField:
    """Gradient and Hessian of a value-only field by second-order centered differences."""
    phi = np.asarray(phi, dtype=float)
    grads = np.gradient(phi, h, edge_order=2)
    grads = grads if isinstance(grads, (list, tuple)) else [grads]
    psi = np.stack(grads, axis=-1)
    rows = [np.stack(np.gradient(g, h, edge_order=2), axis=-1) for g in grads]
    matrix = np.stack(rows, axis=-2)
    return JetField(phi=phi.copy(), psi=psi, hess=matrix_to_hess(matrix))


def curvature_from_phi(phi: np.ndarray, h: float) -> np.ndarray:
    """Curvature of a value-only field (classical FMM output) from centered differences."""
    jet = jet_from_phi(phi, h)
    return curvature_field(jet.psi, jet.hess)


def unit_gradient_residuals(psi: np.ndarray, phi: np.ndarray, h: float,
                            band_width: float = DEFAULT_BAND_WIDTH) -> Dict[str, float]:
    """Median of ``| |psi| - 1 |`` over all nodes and its max over the ``|phi| <= band_width * h`` band."""
    dev = np.abs(np.linalg.norm(psi, axis=-1) - 1.0)
    band = np.abs(phi) <= band_width * h
    return {"median": float(np.nanmedian(dev)),
            "band_max": float(np.nanmax(dev[band])) if np.any(band) else 0.0}


@dataclass
class ExactField:
    """Exact signed distance and derivatives on a grid, NaN where the oracle was not asked.

    Attributes:
        distance: Shape ``grid.shape``.
        gradient: Shape ``grid.shape + (d,)``.
        hess: Stored Hessian slots, ``grid.shape + (3 or 6,)``.
        kappa: Level-set curvature through each node.
        available: Nodes where the oracle answered.
    """
    distance: np.ndarray
    gradient: np.ndarray
    hess: np.ndarray
    kappa: np.ndarray
    available: np.ndarray


def exact_oracle(shape: Shape, points, band: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Exact signed distance and level-set curvature at (M, d) points.

    Raises:
        OracleUnavailableError: If the shape can only answer inside a band and
            the points are not within ``band``.
    """
    sample = shape.oracle(points, band)
    return sample.distance, sample.kappa


def exact_field(shape: Shape, grid: GridSpec, band: Optional[float] = None) -> ExactField:
    """Evaluate a shape's oracle on the grid nodes.

    Args:
        shape: The test shape.
        grid: The grid.
        band: Only needed by band-limited oracles; nodes whose exact
            distance exceeds ``band`` are then marked unavailable.

    Raises:
        OracleUnavailableError: For band-limited oracles when ``band`` is None.
    """
    pts = grid.points()
    dim = grid.dim
    distance = np.full(len(pts), np.nan)
    gradient = np.full((len(pts), dim), np.nan)
    hess = np.full((len(pts), dim * (dim + 1) // 2), np.nan)
    kappa = np.full(len(pts), np.nan)

    rows = np.arange(len(pts))
    if shape.requires_band and band is not None:
        rows = np.flatnonzero(shape.near(pts, band))
    sample = shape.oracle(pts[rows], band if shape.requires_band else None)
    keep = np.abs(sample.distance) <= band if (shape.requires_band and band is not None) else slice(None)
    rows = rows[keep]
    distance[rows] = sample.distance[keep]
    gradient[rows] = sample.gradient[keep]
    hess[rows] = matrix_to_hess(sample.hessian[keep])
    kappa[rows] = sample.kappa[keep]
    logging.info("Exact %s field evaluated at %s of %s nodes", shape.name, len(rows), len(pts))
    return ExactField(distance=distance.reshape(grid.shape),
                      gradient=gradient.reshape(grid.shape + (dim,)),
                      hess=hess.reshape(grid.shape + (hess.shape[-1],)),
                      kappa=kappa.reshape(grid.shape),
                      available=np.isfinite(distance).reshape(grid.shape))


def region_mask(exact: ExactField, grid: GridSpec, region: Region,
                band_width: float = DEFAULT_BAND_WIDTH) -> np.ndarray:
    mask = exact.available.copy()
    if region == "band":
        with np.errstate(invalid="ignore"):
            mask &= np.abs(exact.distance) <= band_width * grid.h
    return mask


def norms(errors: np.ndarray) -> Tuple[float, float]:
    """(root mean square, max) of a flat error array.

    Raises:
        EmptyRegionError: If the array is empty.
    """
    errors = np.asarray(errors, dtype=float).ravel()
    if errors.size == 0:
        raise EmptyRegionError("no nodes in the error region")
    return float(np.sqrt(np.mean(errors ** 2))), float(np.max(errors))


def _pointwise(quantity: str, field: JetField, exact: ExactField, mask: np.ndarray) -> Tuple[np.ndarray, int]:
    """Errors of one quantity at the masked nodes and the number of nodes left out."""
    dim = field.dim
    if quantity == "phi":
        return np.abs(field.phi - exact.distance)[mask], 0
    if quantity == "psi":
        return np.linalg.norm(field.psi - exact.gradient, axis=-1)[mask], 0
    if quantity == "hess":
        diff = hess_to_matrix(field.hess - exact.hess, dim)
        return np.linalg.norm(diff, axis=(-2, -1))[mask], 0
    if quantity in HESS_NAMES[dim]:
        k = HESS_NAMES[dim].index(quantity)
        return np.abs(field.hess[..., k] - exact.hess[..., k])[mask], 0
    if quantity == "kappa":
        kappa = curvature_field(field.psi, field.hess)
        with np.errstate(invalid="ignore"):
            usable = mask & np.isfinite(kappa) & np.isfinite(exact.kappa) & (np.abs(exact.kappa) >= FLAT_CURVATURE)
        excluded = int(mask.sum() - usable.sum())
        rel = np.abs(kappa[usable] - exact.kappa[usable]) / np.abs(exact.kappa[usable])
        return rel, excluded
    raise ValueError(f"quantity {quantity!r} is not defined in {dim}D")


def error_norms(field: JetField, exact: ExactField, grid: GridSpec, region: Region = "whole",
                band_width: float = DEFAULT_BAND_WIDTH, quantities: Sequence[Quantity] = ("phi", "psi", "kappa"),
                subset: Optional[np.ndarray] = None, shape: str = "input", method: str = "afmm") -> List[ErrorReport]:
    """L2 (root mean square) and L-infinity errors of a computed field.

    Args:
        field: Computed jet field (use ``jet_from_phi`` for value-only fields).
        exact: Exact field from ``exact_field``.
        grid: The grid.
        region: "whole" or "band".
        band_width: Band half-width in units of h.
        quantities: Which quantities to measure.
        subset: Optional extra node mask (for example the seeded nodes).
        shape: Shape name recorded in the reports.
        method: Engine recorded in the reports.

    Returns:
        One ``ErrorReport`` per quantity.

    Raises:
        EmptyRegionError: If the region holds no usable node.
    """
    mask = region_mask(exact, grid, region, band_width)
    if subset is not None:
        mask &= np.asarray(subset, dtype=bool)
    reports = []
    for quantity in quantities:
        errors, excluded = _pointwise(quantity, field, exact, mask)
        if excluded:
            logging.warning("%s nodes left out of the %s curvature error (flat exact curvature or degenerate gradient)",
                            excluded, region)
        if errors.size and not np.all(np.isfinite(errors)):
            raise ValueError(f"the computed {quantity} field is not finite on the {region} region")
        l2, linf = norms(errors)
        reports.append(ErrorReport(shape=shape, method=method, n=grid.nodes_per_axis, h=grid.h,
                                   quantity=quantity, region=region, l2=l2, linf=linf,
                                   count=int(errors.size), excluded=excluded))
    return reports


def _log_pairs(samples: Iterable[Tuple[float, float]]) -> Tuple[np.ndarray, np.ndarray]:
    samples = sorted(samples, reverse=True)
    hs = np.array([s[0] for s in samples], dtype=float)
    errs = np.array([s[1] for s in samples], dtype=float)
    if np.any(hs <= 0.0) or np.any(errs <= 0.0):
        raise NonPositiveError("grid spacings and errors must be positive to fit an order")
    return np.log(hs), np.log(errs)


def fit_order(samples: Sequence[Tuple[float, float]]) -> float:
    """Least-squares slope of log(error) against log(h).

    Args:
        samples: (h, error) pairs from at least three grids.

    Raises:
        ValueError: With fewer than three grids.
        NonPositiveError: If an error or a spacing is not positive.

    Examples:
        >>> round(fit_order([(0.1, 0.01), (0.05, 0.0025), (0.025, 0.000625)]), 12)
        2.0
    """
    if len(samples) < 3:
        raise ValueError("fitting an order needs at least three grids")
    log_h, log_e = _log_pairs(samples)
    return float(np.polyfit(log_h, log_e, 1)[0])


def pairwise_orders(samples: Sequence[Tuple[float, float]]) -> List[float]:
    """Orders between successive grids, coarsest first."""
    log_h, log_e = _log_pairs(samples)
    return [float((log_e[k] - log_e[k + 1]) / (log_h[k] - log_h[k + 1])) for k in range(len(log_h) - 1)]


def attach_orders(reports: Sequence[ErrorReport]) -> List[ErrorReport]:
    """Copies of the reports with fitted orders per (shape, method, quantity, region) sweep.

    Orders stay None for sweeps with fewer than three grids or with zero errors.
    """
    groups: Dict[tuple, List[ErrorReport]] = {}
    for rep in reports:
        groups.setdefault((rep.shape, rep.method, rep.quantity, rep.region), []).append(rep)
    fitted: Dict[tuple, Tuple[Optional[float], Optional[float]]] = {}
    for key, reps in groups.items():
        orders: List[Optional[float]] = [None, None]
        if len({r.n for r in reps}) >= 3:
            for slot, norm in enumerate(("l2", "linf")):
                try:
                    orders[slot] = fit_order([(r.h, getattr(r, norm)) for r in reps])
                except NonPositiveError:
                    logging.warning("No %s order for %s/%s: a zero error in the sweep", norm, key[2], key[3])
        fitted[key] = (orders[0], orders[1])
    return [rep.model_copy(update={"order_l2": fitted[k][0], "order_linf": fitted[k][1]})
            for rep, k in ((r, (r.shape, r.method, r.quantity, r.region)) for r in reports)]


CONVERGENCE_COLUMNS = ["shape", "method", "n", "h", "quantity", "region", "norm", "error",
                       "count", "excluded", "pairwise_order", "fitted_order"]


def convergence_frame(reports: Sequence[ErrorReport]) -> pd.DataFrame:
    """Long table with one row per (n, quantity, norm, region).

    ``pairwise_order`` is the order against the next coarser grid of the same
    sweep (empty on the coarsest); ``fitted_order`` is the least-squares slope
    of the sweep (empty with fewer than three grids).
    """
    rows = []
    for rep in attach_orders(reports):
        for norm in ("l2", "linf"):
            rows.append({"shape": rep.shape, "method": rep.method, "n": rep.n, "h": rep.h,
                         "quantity": rep.quantity, "region": rep.region, "norm": norm,
                         "error": getattr(rep, norm), "count": rep.count, "excluded": rep.excluded,
                         "fitted_order": getattr(rep, f"order_{norm}")})
    frame = pd.DataFrame(rows, columns=[c for c in CONVERGENCE_COLUMNS if c != "pairwise_order"])
    frame = frame.sort_values(["shape", "method", "quantity", "region", "norm", "n"], kind="stable")
    keys = ["shape", "method", "quantity", "region", "norm"]
    log_e = np.log(frame["error"].where(frame["error"] > 0.0))
    log_h = np.log(frame["h"])
    frame["pairwise_order"] = log_e.groupby([frame[k] for k in keys]).diff() / log_h.groupby([frame[k] for k in keys]).diff()
    return frame[CONVERGENCE_COLUMNS].reset_index(drop=True)


def _check_stencil(x: float, h: float, r0: float) -> None:
    if not 0.0 < math.sqrt(2.0) * x < r0:
        raise ValueError(f"the stencil needs 0 < sqrt(2) * x < r0, got x={x:g}, r0={r0:g}")
    if h <= 0.0:
        raise ValueError("h must be positive")


def stencil_study(x: float, h: float, r0: float = 1.0) -> StencilResult:
    """Closed-form solution of the diagonal stencil inside a circle of radius r0.

    The node sits at (x, x) with Accepted neighbours at (x + h, x) and
    (x, x + h) carrying exact distance data. Errors are measured against
    ``sqrt(2) x - r0`` for the value and against the exact unit gradient for
    the gradient (Euclidean norm of the error vector). Both are written in a
    form without cancellation, so they stay accurate as h/x grows or shrinks.

    Raises:
        ValueError: Unless ``0 < sqrt(2) x < r0`` and ``h > 0``.

    Examples:
        x=0.2, h=0.1, r0=1 gives phi=-0.7115559 with error 0.0056014, and
        gradient components 0.6933752 with error 0.0194194.
    """
    _check_stencil(x, h, r0)
    eps = h / x
    g = math.sqrt(1.0 + eps + 0.5 * eps * eps)
    half = 1.0 + 0.5 * eps
    gap = 0.25 * eps * eps / (g + half)
    rho = math.sqrt(h * h + 2.0 * h * x + 2.0 * x * x)
    return StencilResult(x=x, h=h, r0=r0,
                         phi=2.0 * x * rho / (h + 2.0 * x) - r0,
                         psi=(h + 2.0 * x) / (2.0 * rho),
                         phi_error=math.sqrt(2.0) * x * gap / half,
                         gradient_error=gap / g)


def stencil_numeric(x: float, h: float, r0: float = 1.0, tol: float = 1e-13) -> StencilResult:
    """Newton solve of the two-axis gradient system on the diagonal stencil.

    Uses the same residuals as the march, with exact neighbour data, so it
    must agree with ``stencil_study`` to round-off.
    """
    _check_stencil(x, h, r0)
    case = UpdateCase(dim=2, axes=(0, 1), signs=(1, 1), neighbors=((1, 0), (0, 1)))
    east = np.array([x + h, x])
    north = np.array([x, x + h])
    nb = NeighborData(available=np.ones(2, dtype=bool), sigma=np.ones(2),
                      phi=np.array([np.linalg.norm(east) - r0, np.linalg.norm(north) - r0]),
                      psi=np.stack([east / np.linalg.norm(east), north / np.linalg.norm(north)]),
                      hess=np.zeros((2, 3)))
    guess = np.concatenate([[nb.phi.mean()], nb.psi.mean(axis=0)])
    result = newton_solve(lambda v: residual_grad(case, v, nb, h),
                          lambda v: jacobian_grad(case, v, nb, h), guess, tol * max(1.0, r0 / h))
    phi, psi = float(result.x[0]), result.x[1:]
    exact = np.full(2, 1.0 / math.sqrt(2.0))
    return StencilResult(x=x, h=h, r0=r0, phi=phi, psi=float(psi[0]),
                         phi_error=abs(phi - (math.sqrt(2.0) * x - r0)),
                         gradient_error=float(np.linalg.norm(psi - exact)))


def stencil_frame(xs: Iterable[float], hs: Iterable[float], r0: float = 1.0) -> pd.DataFrame:
    """``stencil_study`` over every (x, h) pair, one row each."""
    xs, hs = list(xs), list(hs)
    if xs and math.sqrt(2.0) * max(xs) >= r0:
        raise ValueError(f"r0={r0:g} must exceed sqrt(2) * max(x) = {math.sqrt(2.0) * max(xs):g}")
    rows = [stencil_study(x, h, r0).to_row() for h in hs for x in xs]
    return pd.DataFrame(rows, columns=list(StencilResult.model_fields))
