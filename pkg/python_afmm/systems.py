"""Upwind-discretized jet systems and their Newton solves.

Every node update solves the derivative-augmented Eikonal system

    sum_b psi_b d_b phi = 1,        sum_b psi_b d_b psi_c = 0,
    sum_e H_ce H_de + sum_b psi_b d_b H_cd = 0,

where ``d_b`` is a first-order one-sided difference towards an Accepted
neighbour along axis b. When no neighbour is available along b the
derivative is rewritten through a direction that is available, using
``d_b phi = psi_b``, ``d_b psi_c = d_c psi_b`` and
``d_b H_cd = d_c H_bd = d_d H_cb`` (averaged when both c and d are available).
Terms with no available rewrite are dropped. This single rule produces every
two- and three-dimensional case, including the single-axis systems.

The gradient unknowns ``(phi, psi)`` are solved first during the march. The
Hessian unknowns are solved afterwards, replaying the recorded cases.
"""

import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import OptimizeResult

from .grid import JetField, StateGrid, hess_index, hess_size, neighbors, HESS_PAIRS
from .models import GridSpec, SolveReport
from .util import (MaxIterationsError, NoConvergenceError, NodeIndex, SingularJacobianError,
                   UpdateFailureError)

DEFAULT_TOL = 1e-10
MAX_ITER = 40
MAX_HALVINGS = 8
# Round-off slack on the validity comparisons.
VALIDITY_SLACK = 1e-12


@dataclass(frozen=True)
class UpdateCase:
    """Which Accepted neighbours feed a node update.

    Attributes:
        dim: 2 or 3.
        axes: Axes with an upwind neighbour, sorted.
        signs: Offset (+1 or -1) of the neighbour along each axis in ``axes``.
        neighbors: The neighbour node along each axis in ``axes``.
    """
    dim: int
    axes: Tuple[int, ...]
    signs: Tuple[int, ...]
    neighbors: Tuple[NodeIndex, ...]

    def __post_init__(self) -> None:
        if not self.axes:
            raise ValueError("an update case needs at least one axis")
        if len(self.signs) != len(self.axes) or len(self.neighbors) != len(self.axes):
            raise ValueError("axes, signs and neighbors must have the same length")

    def restrict(self, axes: Sequence[int]) -> "UpdateCase":
        """The reduced case that keeps only ``axes``."""
        keep = [k for k, a in enumerate(self.axes) if a in axes]
        return UpdateCase(self.dim, tuple(self.axes[k] for k in keep),
                          tuple(self.signs[k] for k in keep), tuple(self.neighbors[k] for k in keep))

    @property
    def name(self) -> str:
        return "".join("xyz"[a] for a in self.axes)


@dataclass
class NeighborData:
    """Neighbour jets of a case, laid out per axis (zeros where no neighbour is used).

    Attributes:
        available: Bool per axis.
        sigma: Neighbour offset per axis (0.0 where unavailable).
        phi: Neighbour value per axis.
        psi: ``psi[b, c]`` is component c of the gradient at the neighbour along b.
        hess: ``hess[b, k]`` is Hessian slot k at the neighbour along b.
    """
    available: np.ndarray
    sigma: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    hess: np.ndarray

    @classmethod
    def gather(cls, case: UpdateCase, field: JetField) -> "NeighborData":
        d = case.dim
        data = cls(available=np.zeros(d, dtype=bool), sigma=np.zeros(d), phi=np.zeros(d),
                   psi=np.zeros((d, d)), hess=np.zeros((d, hess_size(d))))
        for axis, sign, node in zip(case.axes, case.signs, case.neighbors):
            data.available[axis] = True
            data.sigma[axis] = sign
            data.phi[axis] = field.phi[node]
            data.psi[axis] = field.psi[node]
            data.hess[axis] = field.hess[node]
        return data

    def used(self) -> np.ndarray:
        return np.flatnonzero(self.available)


class Candidate(NamedTuple):
    phi: float
    psi: np.ndarray
    case: UpdateCase
    report: SolveReport


@lru_cache(maxsize=None)
def _gradient_terms(dim: int, axes: Tuple[int, ...]) -> Tuple[Tuple[Tuple[int, int, int], ...], ...]:
    """Transport terms of each psi_c equation as (b, a, comp): psi_b * d_a psi_comp."""
    out = []
    for c in range(dim):
        terms = []
        for b in range(dim):
            if b in axes:
                terms.append((b, b, c))
            elif c in axes:
                terms.append((b, c, b))
        out.append(tuple(terms))
    return tuple(out)


@lru_cache(maxsize=None)
def _hessian_terms(dim: int, axes: Tuple[int, ...]) -> Tuple[Tuple[Tuple[int, int, int, float], ...], ...]:
    """Transport terms of each H_cd equation as (b, a, slot, weight): weight * psi_b * d_a H[slot]."""
    out = []
    for k, (c, d) in enumerate(HESS_PAIRS[dim]):
        terms = []
        for b in range(dim):
            if b in axes:
                terms.append((b, b, k, 1.0))
                continue
            rewrites = [a for a in sorted({c, d}) if a in axes]
            for a in rewrites:
                pair = (b, d) if a == c else (c, b)
                terms.append((b, a, hess_index(*pair, dim), 1.0 / len(rewrites)))
        out.append(tuple(terms))
    return tuple(out)


def residual_grad(case: UpdateCase, unknowns: np.ndarray, nb: NeighborData, h: float) -> np.ndarray:
    """Residual of the d+1 gradient equations at trial unknowns ``(phi, psi_0, ..., psi_{d-1})``.

    Args:
        case: The update case.
        unknowns: Array of length d+1.
        nb: Neighbour jets of the case.
        h: Grid spacing.

    Returns:
        Residual vector of length d+1.
    """
    d = case.dim
    phi, psi = unknowns[0], unknowns[1:]
    res = np.empty(d + 1)
    total = -1.0
    for b in range(d):
        if nb.available[b]:
            total += psi[b] * nb.sigma[b] * (nb.phi[b] - phi) / h
        else:
            total += psi[b] * psi[b]
    res[0] = total
    for c, terms in enumerate(_gradient_terms(d, case.axes)):
        total = 0.0
        for b, a, comp in terms:
            total += psi[b] * nb.sigma[a] * (nb.psi[a, comp] - psi[comp]) / h
        res[1 + c] = total
    return res


def jacobian_grad(case: UpdateCase, unknowns: np.ndarray, nb: NeighborData, h: float) -> np.ndarray:
    d = case.dim
    phi, psi = unknowns[0], unknowns[1:]
    jac = np.zeros((d + 1, d + 1))
    for b in range(d):
        if nb.available[b]:
            jac[0, 0] -= psi[b] * nb.sigma[b] / h
            jac[0, 1 + b] += nb.sigma[b] * (nb.phi[b] - phi) / h
        else:
            jac[0, 1 + b] += 2.0 * psi[b]
    for c, terms in enumerate(_gradient_terms(d, case.axes)):
        for b, a, comp in terms:
            jac[1 + c, 1 + b] += nb.sigma[a] * (nb.psi[a, comp] - psi[comp]) / h
            jac[1 + c, 1 + comp] -= psi[b] * nb.sigma[a] / h
    return jac


def residual_hess(case: UpdateCase, hess: np.ndarray, psi: np.ndarray, nb: NeighborData, h: float) -> np.ndarray:
    """Residual of the d(d+1)/2 Hessian equations at trial Hessian slots.

    Args:
        case: The update case.
        hess: Trial Hessian in storage order (3 or 6 slots).
        psi: Solved gradient at the node.
        nb: Neighbour jets of the case.
        h: Grid spacing.
    """
    d = case.dim
    pairs = HESS_PAIRS[d]
    res = np.empty(len(pairs))
    for k, terms in enumerate(_hessian_terms(d, case.axes)):
        c, dd = pairs[k]
        total = 0.0
        for e in range(d):
            total += hess[hess_index(c, e, d)] * hess[hess_index(dd, e, d)]
        for b, a, slot, weight in terms:
            total += weight * psi[b] * nb.sigma[a] * (nb.hess[a, slot] - hess[slot]) / h
        res[k] = total
    return res


def jacobian_hess(case: UpdateCase, hess: np.ndarray, psi: np.ndarray, nb: NeighborData, h: float) -> np.ndarray:
    d = case.dim
    pairs = HESS_PAIRS[d]
    jac = np.zeros((len(pairs), len(pairs)))
    for k, terms in enumerate(_hessian_terms(d, case.axes)):
        c, dd = pairs[k]
        for e in range(d):
            ce, de = hess_index(c, e, d), hess_index(dd, e, d)
            jac[k, ce] += hess[de]
            jac[k, de] += hess[ce]
        for b, a, slot, weight in terms:
            jac[k, slot] -= weight * psi[b] * nb.sigma[a] / h
    return jac


def newton_solve(residual: Callable[[np.ndarray], np.ndarray], jacobian: Callable[[np.ndarray], np.ndarray],
                 guess, tol: float, max_iter: int = MAX_ITER, max_halvings: int = MAX_HALVINGS) -> OptimizeResult:
    """Damped Newton iteration for a small dense system.

    A full step that does not reduce the max-norm of the residual is halved
    up to ``max_halvings`` times; the last trial is taken either way.

    Args:
        residual: F(x), returns a 1D array.
        jacobian: J(x), returns a square 2D array.
        guess: Starting point.
        tol: Convergence threshold on ``max |F(x)|``.
        max_iter: Iteration budget.
        max_halvings: Step halvings per iteration.

    Returns:
        A ``scipy.optimize.OptimizeResult`` with ``x``, ``fun``, ``nit`` and ``success``.

    Raises:
        MaxIterationsError: If the budget runs out before ``max |F| <= tol``.
        SingularJacobianError: If a Newton step cannot be computed.

    Examples:
        >>> newton_solve(lambda v: v**2 - 4, lambda v: np.array([[2 * v[0]]]), [3.0], 1e-12).x
        array([2.])
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    x = np.array(guess, dtype=float, ndmin=1)
    if not np.all(np.isfinite(x)):
        raise ValueError("the Newton guess must be finite")
    f = np.asarray(residual(x), dtype=float)
    norm = float(np.max(np.abs(f)))
    for it in range(max_iter):
        if norm <= tol:
            return OptimizeResult(x=x, fun=f, nit=it, success=True, status=0, message="converged")
        try:
            step = np.linalg.solve(jacobian(x), -f)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobianError(f"singular Jacobian at iteration {it}") from exc
        if not np.all(np.isfinite(step)):
            raise SingularJacobianError(f"non-finite Newton step at iteration {it}")
        t = 1.0
        for _ in range(max_halvings + 1):
            trial = x + t * step
            f_trial = np.asarray(residual(trial), dtype=float)
            n_trial = float(np.max(np.abs(f_trial)))
            if n_trial < norm:
                break
            t *= 0.5
        x, f, norm = trial, f_trial, n_trial
    if norm <= tol:
        return OptimizeResult(x=x, fun=f, nit=max_iter, success=True, status=0, message="converged")
    raise MaxIterationsError(f"no convergence in {max_iter} iterations (residual {norm:.3e}, tol {tol:.3e})")


def gradient_tolerance(phi_guess: float, h: float, base: float = DEFAULT_TOL) -> float:
    return base * max(1.0, abs(phi_guess) / h)


def validate_gradient(phi: float, psi: np.ndarray, case: UpdateCase, field: JetField) -> bool:
    """Validity of a gradient candidate against the neighbours it was built from.

    The candidate must not be closer to the interface than any used
    neighbour (compared by magnitude so the inside and outside march alike),
    must lie on the same side of the interface, and its gradient must point
    the same general way as every neighbour gradient (non-negative dot product).
    """
    if not (np.isfinite(phi) and np.all(np.isfinite(psi))):
        return False
    for node in case.neighbors:
        phi_nb = float(field.phi[node])
        if abs(phi) < abs(phi_nb) * (1.0 - VALIDITY_SLACK) - VALIDITY_SLACK:
            return False
        if phi * phi_nb < 0.0:
            return False
        if float(psi @ field.psi[node]) < -VALIDITY_SLACK:
            return False
    return True


def select_case(node: NodeIndex, field: JetField, states: StateGrid, grid: GridSpec) -> Optional[UpdateCase]:
    """Full upwind case of a node: per axis, the Accepted neighbour with the smaller |phi|."""
    best = {}
    for nb in neighbors(node, grid):
        if not states.is_accepted(nb.node):
            continue
        current = best.get(nb.axis)
        if current is None or abs(field.phi[nb.node]) < abs(field.phi[current.node]):
            best[nb.axis] = nb
    if not best:
        return None
    axes = tuple(sorted(best))
    return UpdateCase(grid.dim, axes, tuple(best[a].sign for a in axes), tuple(best[a].node for a in axes))


def solve_gradient(case: UpdateCase, field: JetField, h: float, base_tol: float = DEFAULT_TOL) -> Tuple[float, np.ndarray, OptimizeResult]:
    """Newton solve of one case from the neighbour-average guess."""
    nb = NeighborData.gather(case, field)
    used = nb.used()
    guess = np.concatenate([[nb.phi[used].mean()], nb.psi[used].mean(axis=0)])
    tol = gradient_tolerance(guess[0], h, base_tol)
    result = newton_solve(lambda v: residual_grad(case, v, nb, h),
                          lambda v: jacobian_grad(case, v, nb, h), guess, tol)
    return float(result.x[0]), result.x[1:].copy(), result


def solve_eikonal_quadratic(values: Sequence[float], h: float) -> float:
    """Classical upwind update from neighbour distance magnitudes.

    Solves ``sum_i (phi - a_i)^2 = h^2`` over the smallest neighbours,
    adding one neighbour at a time while the root exceeds the next value, so
    the returned root is the smallest one above all neighbours it uses.

    Examples:
        >>> round(solve_eikonal_quadratic([0.0, 0.0], 0.1), 7)
        0.0707107
    """
    a = np.sort(np.asarray(values, dtype=float))
    if a.size == 0:
        raise ValueError("at least one neighbour value is needed")
    root = a[0] + h
    for m in range(1, a.size + 1):
        s, s2 = a[:m].sum(), (a[:m] ** 2).sum()
        disc = s * s - m * (s2 - h * h)
        root = (s + np.sqrt(max(disc, 0.0))) / m
        if m == a.size or root <= a[m]:
            break
    return float(root)


def _classical_candidate(case: UpdateCase, field: JetField, h: float) -> Tuple[float, np.ndarray]:
    nb = NeighborData.gather(case, field)
    used = nb.used()
    side = 1.0 if nb.phi[used].sum() >= 0.0 else -1.0
    phi = side * solve_eikonal_quadratic(np.abs(nb.phi[used]), h)
    psi = nb.psi[used].mean(axis=0)
    for b in used:
        psi[b] = nb.sigma[b] * (nb.phi[b] - phi) / h
    norm = float(np.linalg.norm(psi))
    if norm > 0.0:
        psi = psi / norm
    return phi, psi


def update_node(node: NodeIndex, field: JetField, states: StateGrid, grid: GridSpec,
                base_tol: float = DEFAULT_TOL) -> Candidate:
    """Tentative gradient jet of a Trial node from its Accepted neighbours.

    Tier 0 solves the full case. When that fails or the result is invalid,
    tier 1 tries the reduced cases, largest first, keeping the valid result
    with the smallest |phi| of the first size that yields one. Tier 2 is the
    classical quadratic update for phi with an upwind-difference gradient
    (neighbour-average components along axes without a neighbour), normalized.

    Raises:
        ValueError: If the node has no Accepted neighbour.
        UpdateFailureError: If even the classical update is not finite.
    """
    h = grid.h
    full = select_case(node, field, states, grid)
    if full is None:
        raise ValueError(f"node {node} has no accepted neighbour")

    def attempt(case: UpdateCase, tier: int) -> Optional[Candidate]:
        try:
            phi, psi, result = solve_gradient(case, field, h, base_tol)
        except NoConvergenceError as exc:
            logging.debug("Case %s at node %s failed: %s", case.name, node, exc)
            return None
        if not validate_gradient(phi, psi, case, field):
            return None
        report = SolveReport(converged=True, iterations=int(result.nit),
                             residual=float(np.max(np.abs(result.fun))), valid=True, tier=tier, axes=case.axes)
        return Candidate(phi, psi, case, report)

    found = attempt(full, 0)
    if found is not None:
        return found
    for size in range(len(full.axes) - 1, 0, -1):
        options = [c for c in (attempt(full.restrict(sub), 1)
                               for sub in itertools.combinations(full.axes, size)) if c is not None]
        if options:
            return min(options, key=lambda c: abs(c.phi))

    phi, psi = _classical_candidate(full, field, h)
    if not (np.isfinite(phi) and np.all(np.isfinite(psi))):
        raise UpdateFailureError(f"every update tier failed at node {node}")
    logging.debug("Node %s fell back to the classical update", node)
    report = SolveReport(converged=False, iterations=0, residual=float("nan"), valid=False, tier=2, axes=full.axes)
    return Candidate(phi, psi, full, report)


def solve_hessian(node: NodeIndex, case: UpdateCase, field: JetField, grid: GridSpec,
                  base_tol: float = DEFAULT_TOL) -> Tuple[np.ndarray, SolveReport]:
    """Hessian of a marched node from the recorded case.

    Starts from the neighbour-average Hessian; when Newton fails the average
    itself is returned and the report carries tier 2.
    """
    h = grid.h
    nb = NeighborData.gather(case, field)
    used = nb.used()
    psi = field.psi[node].copy()
    guess = nb.hess[used].mean(axis=0)
    tol = base_tol * max(1.0, float(np.max(np.abs(guess))) / h)
    try:
        result = newton_solve(lambda v: residual_hess(case, v, psi, nb, h),
                              lambda v: jacobian_hess(case, v, psi, nb, h), guess, tol)
    except NoConvergenceError as exc:
        logging.debug("Hessian solve at node %s failed (%s), using the neighbour average", node, exc)
        return guess, SolveReport(converged=False, residual=float("nan"), valid=False, tier=2, axes=case.axes)
    return result.x.copy(), SolveReport(converged=True, iterations=int(result.nit),
                                        residual=float(np.max(np.abs(result.fun))), tier=0, axes=case.axes)
