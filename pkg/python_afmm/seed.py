"""Initialization of the Accepted set next to the interface.

Interface cells are the cells whose corner values of the initial level set
are not all of one strict sign. Every corner of such a cell is seeded:

- the cell patch nearest to the node is chosen among its interface cells,
- signed distances are computed on a small sub-grid (spacing ``alpha * h``)
  around the node by closest-point projection onto that patch,
- value, gradient and Hessian come from centered differences of those
  sub-grid distances.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .grid import JetField, cell_corners, hess_index, hess_size
from .interp import CubicPatch, cross_derivative_fields, fit_cell
from .models import GridSpec
from .project import closest_point
from .util import EmptyInterfaceError, InitFailureError, NoConvergenceError, NodeIndex, as_node


def subgrid_offsets(dim: int) -> np.ndarray:
    """Integer offsets of the sub-grid points around a node.

    2D uses the full 3x3 block (9 points); 3D drops the 8 cube corners of the
    3x3x3 block, keeping the center, 6 faces and 12 edges (19 points).
    """
    offsets = [o for o in itertools.product((-1, 0, 1), repeat=dim) if sum(map(abs, o)) <= 2]
    return np.array(offsets, dtype=int)


@dataclass
class SeedResult:
    """Output of the seeding step.

    Attributes:
        field: Jet field with the seeded nodes filled in and NaN elsewhere.
        seeds: Seeded node indices, in C order.
        cells: The interface cells that were used.
        fallbacks: Nodes seeded from a second-choice cell after a projection failure.
        projection_fallbacks: Projections that needed the lattice fallback.
    """
    field: JetField
    seeds: List[NodeIndex]
    cells: List[NodeIndex]
    fallbacks: int = 0
    projection_fallbacks: int = 0


def detect_interface_cells(phi0: np.ndarray, grid: GridSpec) -> List[NodeIndex]:
    """Cells whose corner values are not all of one strict sign.

    A corner that is exactly zero counts as a crossing.

    Args:
        phi0: Initial level set, shape ``grid.shape``.
        grid: The grid.

    Returns:
        Interface cell indices in C order.

    Raises:
        EmptyInterfaceError: If no cell contains the interface.
        ValueError: If phi0 is not finite or has the wrong shape.
    """
    phi0 = np.asarray(phi0, dtype=float)
    if phi0.shape != grid.shape:
        raise ValueError(f"phi0 has shape {phi0.shape}, the grid needs {grid.shape}")
    if not np.all(np.isfinite(phi0)):
        raise ValueError("phi0 must be finite everywhere")
    n = grid.nodes_per_axis
    all_pos = np.ones((n - 1,) * grid.dim, dtype=bool)
    all_neg = np.ones_like(all_pos)
    for offset in itertools.product((0, 1), repeat=grid.dim):
        corner = phi0[tuple(slice(o, o + n - 1) for o in offset)]
        all_pos &= corner > 0.0
        all_neg &= corner < 0.0
    cells = [as_node(c) for c in np.argwhere(~(all_pos | all_neg))]
    if not cells:
        raise EmptyInterfaceError("the initial level set does not change sign on the grid")
    logging.debug("Found %s interface cells", len(cells))
    return cells


def gradient_field(phi0: np.ndarray, h: float) -> np.ndarray:
    """Second-order finite-difference gradient, shape ``phi0.shape + (dim,)``."""
    return np.stack(np.gradient(np.asarray(phi0, dtype=float), h, edge_order=2), axis=-1)


class _PatchCache:
    def __init__(self, grid: GridSpec, phi0: np.ndarray, psi0: np.ndarray) -> None:
        self.grid = grid
        self.phi0 = phi0
        self.psi0 = psi0
        self.cross = cross_derivative_fields(psi0, grid.h)
        self._patches: Dict[NodeIndex, CubicPatch] = {}

    def __getitem__(self, cell: NodeIndex) -> CubicPatch:
        patch = self._patches.get(cell)
        if patch is None:
            patch = fit_cell(cell, self.grid, self.phi0, self.psi0, self.cross)
            self._patches[cell] = patch
        return patch


def _node_cells(cells: List[NodeIndex], grid: GridSpec) -> Dict[NodeIndex, List[NodeIndex]]:
    by_node: Dict[NodeIndex, List[NodeIndex]] = {}
    for cell in cells:
        for node in cell_corners(cell, grid):
            by_node.setdefault(node, []).append(cell)
    return by_node


def _ranked_cells(node: NodeIndex, candidates: List[NodeIndex], patches: _PatchCache,
                  grid: GridSpec, tol: float) -> Tuple[List[Tuple[float, NodeIndex]], int]:
    """Candidate cells ordered by the node's distance to each patch zero set."""
    x0 = grid.coords(node)
    ranked, fallbacks = [], 0
    for cell in candidates:
        try:
            res = closest_point(patches[cell], x0, tol)
        except NoConvergenceError:
            logging.debug("Cell %s gives no foot point for node %s", cell, node)
            continue
        fallbacks += res.fallback
        ranked.append((res.distance, cell))
    ranked.sort()
    return ranked, fallbacks


def _subgrid_jet(node: NodeIndex, patch: CubicPatch, grid: GridSpec, phi0: np.ndarray,
                 offsets: np.ndarray, alpha: float, tol: float) -> Tuple[float, np.ndarray, np.ndarray, int]:
    dim = grid.dim
    delta = alpha * grid.h
    x0 = grid.coords(node)
    tie = 1.0 if phi0[node] >= 0.0 else -1.0
    s = {}
    fallbacks = 0
    for off in offsets:
        res = closest_point(patch, x0 + delta * off, tol)
        fallbacks += res.fallback
        side = res.side if res.side != 0.0 else tie
        s[tuple(int(o) for o in off)] = side * res.distance

    def at(*shifts: Tuple[int, int]) -> float:
        key = [0] * dim
        for axis, step in shifts:
            key[axis] = step
        return s[tuple(key)]

    center = s[(0,) * dim]
    psi = np.empty(dim)
    hess = np.empty(hess_size(dim))
    for a in range(dim):
        plus, minus = at((a, 1)), at((a, -1))
        psi[a] = (plus - minus) / (2.0 * delta)
        hess[hess_index(a, a, dim)] = (plus - 2.0 * center + minus) / delta ** 2
    for a, b in itertools.combinations(range(dim), 2):
        mixed = at((a, 1), (b, 1)) - at((a, 1), (b, -1)) - at((a, -1), (b, 1)) + at((a, -1), (b, -1))
        hess[hess_index(a, b, dim)] = mixed / (4.0 * delta ** 2)
    return center, psi, hess, fallbacks


def seed_nodes(phi0: np.ndarray, psi0: Optional[np.ndarray], grid: GridSpec,
               alpha: float = 0.1, tol: float = 1e-10) -> SeedResult:
    """Seed every corner of every interface cell with a full jet.

    Args:
        phi0: Initial level set, shape ``grid.shape``.
        psi0: Its gradient, shape ``grid.shape + (dim,)``, or None to difference phi0.
        grid: The grid.
        alpha: Sub-grid spacing factor (sub-grid spacing is ``alpha * h``).
        tol: Projection tolerance.

    Returns:
        A ``SeedResult``; the seeded phi is negative where phi0 < 0.

    Raises:
        EmptyInterfaceError: If phi0 has no sign change.
        InitFailureError: If some node cannot be seeded from any of its interface cells.
    """
    if not 0.0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 0.5)")
    phi0 = np.asarray(phi0, dtype=float)
    cells = detect_interface_cells(phi0, grid)
    psi0 = gradient_field(phi0, grid.h) if psi0 is None else np.asarray(psi0, dtype=float)
    patches = _PatchCache(grid, phi0, psi0)
    offsets = subgrid_offsets(grid.dim)
    field = JetField.empty(grid)
    result = SeedResult(field=field, seeds=[], cells=cells)

    for node, candidates in sorted(_node_cells(cells, grid).items()):
        ranked, proj_fallbacks = _ranked_cells(node, candidates, patches, grid, tol)
        result.projection_fallbacks += proj_fallbacks
        for attempt, (_, cell) in enumerate(ranked):
            try:
                phi, psi, hess, fb = _subgrid_jet(node, patches[cell], grid, phi0, offsets, alpha, tol)
            except NoConvergenceError:
                logging.debug("Sub-grid projection failed for node %s in cell %s", node, cell)
                continue
            result.projection_fallbacks += fb
            result.fallbacks += attempt > 0
            break
        else:
            raise InitFailureError(f"node {node} could not be seeded from any of {len(candidates)} interface cells")
        field.phi[node] = phi
        field.psi[node] = psi
        field.hess[node] = hess
        result.seeds.append(node)

    logging.info("Seeded %s nodes from %s interface cells (%s cell fallbacks)",
                 len(result.seeds), len(cells), result.fallbacks)
    return result


def seed_distances(phi0: np.ndarray, psi0: Optional[np.ndarray], grid: GridSpec,
                   tol: float = 1e-10) -> SeedResult:
    """Classical initialization: signed closest-point distance at the interface nodes only.

    The gradient of each seed is the unit normal ``(x0 - y) / |x0 - y|`` oriented
    by the sign of phi0; no Hessian is produced.
    """
    phi0 = np.asarray(phi0, dtype=float)
    cells = detect_interface_cells(phi0, grid)
    psi0 = gradient_field(phi0, grid.h) if psi0 is None else np.asarray(psi0, dtype=float)
    patches = _PatchCache(grid, phi0, psi0)
    field = JetField.empty(grid)
    result = SeedResult(field=field, seeds=[], cells=cells)

    for node, candidates in sorted(_node_cells(cells, grid).items()):
        x0 = grid.coords(node)
        best = None
        for cell in candidates:
            try:
                res = closest_point(patches[cell], x0, tol)
            except NoConvergenceError:
                continue
            result.projection_fallbacks += res.fallback
            if best is None or res.distance < best.distance:
                best = res
        if best is None:
            raise InitFailureError(f"node {node} could not be projected onto any interface cell")
        side = best.side if best.side != 0.0 else (1.0 if phi0[node] >= 0.0 else -1.0)
        field.phi[node] = side * best.distance
        if best.distance > 0.0:
            field.psi[node] = side * (x0 - np.asarray(best.point)) / best.distance
        else:
            g = psi0[node]
            field.psi[node] = g / np.linalg.norm(g)
        result.seeds.append(node)

    logging.info("Seeded %s nodes by direct projection", len(result.seeds))
    return result
