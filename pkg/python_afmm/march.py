"""Marching engines: the classical fast marching method and the jet-augmented march.

Both engines place all seeds first, then update the seeds' neighbours and
repeatedly accept the Trial node with the smallest distance magnitude, so
the inside and the outside of the interface march in one pass. The
augmented engine records its acceptance order and the update case of every
node, and replays them in a second pass that solves for the Hessian.
"""

import logging
import time
from dataclasses import dataclass, field as dc_field
from typing import Dict, List, Optional

import numpy as np

from .analysis import DEFAULT_BAND_WIDTH, unit_gradient_residuals
from .grid import JetField, MarchOrder, StateGrid, TrialHeap, neighbors
from .models import GridSpec, RunStatistics
from .seed import seed_distances, seed_nodes
from .systems import Candidate, DEFAULT_TOL, solve_eikonal_quadratic, solve_hessian, update_node
from .util import MarchInvariantError, NodeIndex

@dataclass
class FMMResult:
    """Output of the classical engine.

    Attributes:
        phi: Signed distance, shape ``grid.shape``.
        order: Acceptance order.
        stats: Run statistics.
        pop_keys: Heap keys in the order they were popped.
    """
    phi: np.ndarray
    order: MarchOrder
    stats: RunStatistics
    pop_keys: List[float] = dc_field(default_factory=list)


@dataclass
class AFMMResult:
    """Output of the augmented engine.

    Attributes:
        field: Value, gradient and Hessian at every node.
        order: Seeds and the marched nodes with their update cases.
        stats: Run statistics (fallback tiers, residuals, timings).
        pop_keys: Heap keys in the order they were popped.
    """
    field: JetField
    order: MarchOrder
    stats: RunStatistics
    pop_keys: List[float] = dc_field(default_factory=list)


class _Frontier:
    """Trial heap plus the best candidate per Trial node (keep-best re-updates)."""

    def __init__(self, states: StateGrid) -> None:
        self.heap = TrialHeap()
        self.states = states
        self.clamped = 0

    def key(self, magnitude: float) -> float:
        front = self.heap.last_popped()
        if magnitude < front:
            self.clamped += 1
            return front
        return magnitude

    def offer(self, node: NodeIndex, magnitude: float) -> None:
        key = self.key(magnitude)
        if node in self.heap:
            self.heap.update(node, key)
        else:
            self.states.mark_trial(node)
            self.heap.push(node, key)


def _check_causality(frontier: _Frontier) -> None:
    """Pop keys must not decrease. Keys clamped to the front are logged."""
    if not frontier.heap.is_monotone():
        raise MarchInvariantError("trial heap released keys out of order")
    if frontier.clamped:
        logging.warning("%s trial keys fell below the front and were clamped to it", frontier.clamped)


def run_standard_fmm(phi0: np.ndarray, psi0: Optional[np.ndarray], grid: GridSpec,
                     tol: float = DEFAULT_TOL) -> FMMResult:
    """Classical fast marching with the upwind quadratic update.

    Seeds are the corners of the interface cells, set to their signed
    closest-point distance on the cell patches.

    Args:
        phi0: Initial level set, shape ``grid.shape``.
        psi0: Its gradient, or None to difference phi0.
        grid: The grid.
        tol: Projection tolerance for the seeds.

    Returns:
        An ``FMMResult``.

    Raises:
        EmptyInterfaceError: If phi0 has no sign change.
    """
    t0 = time.perf_counter()
    seeded = seed_distances(phi0, psi0, grid, tol)
    t_seed = time.perf_counter() - t0
    phi = seeded.field.phi
    states = StateGrid(grid)
    order = MarchOrder(seeds=list(seeded.seeds))
    for node in seeded.seeds:
        states.accept(node)
    frontier = _Frontier(states)
    best: Dict[NodeIndex, float] = {}

    def refresh(node: NodeIndex) -> None:
        per_axis: Dict[int, float] = {}
        side = 1.0
        for nb in neighbors(node, grid):
            if states.is_accepted(nb.node):
                value = abs(phi[nb.node])
                per_axis[nb.axis] = min(value, per_axis.get(nb.axis, np.inf))
                side = 1.0 if phi[nb.node] >= 0.0 else -1.0
        candidate = side * solve_eikonal_quadratic(list(per_axis.values()), grid.h)
        if node not in best or abs(candidate) < abs(best[node]):
            best[node] = candidate
            frontier.offer(node, abs(candidate))

    def touch(node: NodeIndex) -> None:
        for nb in neighbors(node, grid):
            if not states.is_accepted(nb.node):
                refresh(nb.node)

    t1 = time.perf_counter()
    for node in seeded.seeds:
        touch(node)
    while len(frontier.heap):
        node, _ = frontier.heap.pop()
        states.accept(node)
        phi[node] = best.pop(node)
        order.append(node)
        touch(node)
    _check_causality(frontier)

    stats = RunStatistics(method="fmm", nodes=int(np.prod(grid.shape)), seeds=len(seeded.seeds),
                          clamped_keys=frontier.clamped,
                          timings={"seed": t_seed, "march": time.perf_counter() - t1})
    logging.info("Classical march accepted %s nodes after %s seeds in %.2fs",
                 len(order), len(seeded.seeds), stats.timings["march"])
    return FMMResult(phi=phi, order=order, stats=stats, pop_keys=list(frontier.heap.pops))


def _check_replay(field: JetField, order: MarchOrder, grid: GridSpec, tol: float) -> None:
    again = field.copy()
    hessian_pass(again, order, grid, tol)
    if not np.array_equal(again.hess, field.hess, equal_nan=True):
        raise MarchInvariantError("replaying the Hessian pass changed the result")


def _better(new: Candidate, old: Candidate) -> bool:
    if new.report.valid != old.report.valid:
        return new.report.valid
    return abs(new.phi) < abs(old.phi)


def march_gradient(field: JetField, seeds: List[NodeIndex], grid: GridSpec,
                   tol: float = DEFAULT_TOL) -> tuple:
    """Gradient pass: march value and gradient outward from the seeded nodes.

    Returns:
        (order, frontier, candidates accepted per tier, max residual).
    """
    states = StateGrid(grid)
    order = MarchOrder(seeds=list(seeds))
    for node in seeds:
        states.accept(node)
    frontier = _Frontier(states)
    best: Dict[NodeIndex, Candidate] = {}
    tiers = {0: 0, 1: 0, 2: 0}
    max_residual = 0.0

    def touch(node: NodeIndex) -> None:
        for nb in neighbors(node, grid):
            if states.is_accepted(nb.node):
                continue
            candidate = update_node(nb.node, field, states, grid, tol)
            current = best.get(nb.node)
            if current is None or _better(candidate, current):
                best[nb.node] = candidate
                frontier.offer(nb.node, abs(candidate.phi))

    for node in seeds:
        touch(node)
    while len(frontier.heap):
        node, _ = frontier.heap.pop()
        candidate = best.pop(node)
        states.accept(node)
        field.set_gradient(node, candidate.phi, candidate.psi)
        order.append(node, candidate.case)
        tiers[candidate.report.tier] += 1
        if candidate.report.converged:
            max_residual = max(max_residual, candidate.report.residual)
        touch(node)
    _check_causality(frontier)
    return order, frontier, tiers, max_residual


def hessian_pass(field: JetField, order: MarchOrder, grid: GridSpec, tol: float = DEFAULT_TOL) -> Dict[str, object]:
    """Solve the Hessian of every marched node in acceptance order.

    Seeds keep the Hessian they were seeded with. Running the pass again on
    the same field reproduces the same Hessians bit for bit.

    Returns:
        ``{"tiers": {0: n, 2: n}, "max_residual": r}``.
    """
    tiers = {0: 0, 1: 0, 2: 0}
    max_residual = 0.0
    for node, case in order.entries:
        if case is None:
            raise ValueError("the march order carries no update cases (classical run?)")
        hess, report = solve_hessian(node, case, field, grid, tol)
        field.hess[node] = hess
        tiers[report.tier] += 1
        if report.converged:
            max_residual = max(max_residual, report.residual)
    return {"tiers": tiers, "max_residual": max_residual}


def run_afmm(phi0: np.ndarray, psi0: Optional[np.ndarray], grid: GridSpec, alpha: float = 0.1,
             tol: float = DEFAULT_TOL, band_width: float = DEFAULT_BAND_WIDTH,
             check_replay: bool = True) -> AFMMResult:
    """Reinitialize a level set into a signed distance with gradient and Hessian.

    Steps: seed the interface nodes from the sub-grid, march value and
    gradient to every node, then replay the acceptance order for the Hessian.

    Args:
        phi0: Initial level set, shape ``grid.shape``.
        psi0: Its gradient, or None to difference phi0.
        grid: The grid.
        alpha: Sub-grid spacing factor for seeding.
        tol: Base tolerance for projections and Newton solves.
        band_width: Band half-width (in units of h) for the unit-gradient statistic.
        check_replay: Replay the Hessian pass on a copy and require identical results.

    Returns:
        An ``AFMMResult``.

    Raises:
        EmptyInterfaceError: If phi0 has no sign change.
        InitFailureError: If an interface node cannot be seeded.
        UpdateFailureError: If a node update fails at every tier.
        MarchInvariantError: If the pop keys decrease or the Hessian replay differs.
    """
    timings = {}
    t0 = time.perf_counter()
    seeded = seed_nodes(phi0, psi0, grid, alpha=alpha, tol=tol)
    timings["seed"] = time.perf_counter() - t0
    field = seeded.field

    t1 = time.perf_counter()
    order, frontier, tiers, max_grad_residual = march_gradient(field, seeded.seeds, grid, tol)
    timings["gradient"] = time.perf_counter() - t1

    t2 = time.perf_counter()
    hess_info = hessian_pass(field, order, grid, tol)
    timings["hessian"] = time.perf_counter() - t2
    if check_replay:
        _check_replay(field, order, grid, tol)

    residuals = unit_gradient_residuals(field.psi, field.phi, grid.h, band_width)
    stats = RunStatistics(method="afmm", nodes=int(np.prod(grid.shape)), seeds=len(seeded.seeds),
                          gradient_tiers=tiers, hessian_tiers=hess_info["tiers"],
                          clamped_keys=frontier.clamped, seed_fallbacks=seeded.fallbacks,
                          max_gradient_residual=max_grad_residual,
                          max_hessian_residual=hess_info["max_residual"],
                          unit_gradient_median=residuals["median"],
                          unit_gradient_band_max=residuals["band_max"],
                          timings=timings)
    if stats.fallback_fraction() > 0.01:
        logging.warning("%.2f%% of marched nodes used the classical fallback", 100.0 * stats.fallback_fraction())
    logging.info("Augmented march: %s seeds, %s marched, tiers %s, %.2fs total",
                 stats.seeds, stats.marched, tiers, sum(timings.values()))
    return AFMMResult(field=field, order=order, stats=stats, pop_keys=list(frontier.heap.pops))
