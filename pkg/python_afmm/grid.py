"""Grid plumbing for the marching engines.

Node and cell indexing on a ``GridSpec``, the jet field (value, gradient and
Hessian per node), node-state bookkeeping, the trial heap and the record of
the acceptance order.
"""

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import TYPE_CHECKING, Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from .models import GridSpec
from .util import NodeIndex, as_node

if TYPE_CHECKING:
    from .systems import UpdateCase

# Hessian storage order: 2D (xx, yy, xy), 3D (xx, yy, zz, xy, xz, yz).
HESS_PAIRS: Dict[int, Tuple[Tuple[int, int], ...]] = {
    2: ((0, 0), (1, 1), (0, 1)),
    3: ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)),
}
HESS_NAMES: Dict[int, Tuple[str, ...]] = {
    2: ("hxx", "hyy", "hxy"),
    3: ("hxx", "hyy", "hzz", "hxy", "hxz", "hyz"),
}


def hess_size(dim: int) -> int:
    return dim * (dim + 1) // 2


def hess_index(a: int, b: int, dim: int) -> int:
    """Storage slot of the Hessian entry H[a, b] (symmetric, so order does not matter).

    Examples:
        >>> hess_index(1, 0, 2)
        2
        >>> hess_index(2, 1, 3)
        5
    """
    pair = (min(a, b), max(a, b))
    return HESS_PAIRS[dim].index(pair)


def hess_to_matrix(packed: np.ndarray, dim: int) -> np.ndarray:
    """Unpack stored Hessian slots (..., 3 or 6) into symmetric matrices (..., d, d)."""
    packed = np.asarray(packed, dtype=float)
    out = np.empty(packed.shape[:-1] + (dim, dim))
    for k, (a, b) in enumerate(HESS_PAIRS[dim]):
        out[..., a, b] = packed[..., k]
        out[..., b, a] = packed[..., k]
    return out


def matrix_to_hess(matrix: np.ndarray) -> np.ndarray:
    """Pack symmetric matrices (..., d, d) into storage slots, averaging off-diagonal pairs."""
    matrix = np.asarray(matrix, dtype=float)
    dim = matrix.shape[-1]
    return np.stack([0.5 * (matrix[..., a, b] + matrix[..., b, a]) for a, b in HESS_PAIRS[dim]], axis=-1)


class Neighbor(NamedTuple):
    axis: int
    sign: int
    node: NodeIndex


def neighbors(node: NodeIndex, grid: GridSpec) -> List[Neighbor]:
    """Axis-aligned neighbours of a node that exist on the grid.

    Neighbours are ordered by axis, the ``-`` side before the ``+`` side.
    Boundary nodes simply get fewer entries.

    Args:
        node: In-grid node index.
        grid: The grid.

    Returns:
        A list of ``Neighbor(axis, sign, node)``.

    Examples:
        >>> neighbors((0, 0), GridSpec.cube(2, 5))
        [Neighbor(axis=0, sign=1, node=(1, 0)), Neighbor(axis=1, sign=1, node=(0, 1))]
    """
    n = grid.nodes_per_axis
    out = []
    for axis in range(grid.dim):
        for sign in (-1, 1):
            j = node[axis] + sign
            if 0 <= j < n:
                nb = list(node)
                nb[axis] = j
                out.append(Neighbor(axis, sign, tuple(nb)))
    return out


def cell_corners(cell: NodeIndex, grid: GridSpec) -> List[NodeIndex]:
    """Corner nodes of a cell, x varying fastest.

    Corner ``k`` sits at offset ``(k & 1, (k >> 1) & 1[, (k >> 2) & 1])`` from the
    cell's lower node, so a 2D cell ``(i, j)`` gives
    ``[(i, j), (i+1, j), (i, j+1), (i+1, j+1)]``.

    Raises:
        ValueError: If the cell is not in the grid.
    """
    if len(cell) != grid.dim or not all(0 <= c < grid.nodes_per_axis - 1 for c in cell):
        raise ValueError(f"cell {cell} is not in the grid")
    return [tuple(c + ((k >> a) & 1) for a, c in enumerate(cell)) for k in range(2 ** grid.dim)]


def corner_offsets(dim: int) -> np.ndarray:
    """Offsets of the corners returned by ``cell_corners``, shape (2**dim, dim)."""
    return np.array([[(k >> a) & 1 for a in range(dim)] for k in range(2 ** dim)], dtype=int)


def cells_of_node(node: NodeIndex, grid: GridSpec) -> List[NodeIndex]:
    """Every cell that has ``node`` as a corner."""
    out = []
    for offset in corner_offsets(grid.dim):
        cell = tuple(int(i - o) for i, o in zip(node, offset))
        if all(0 <= c < grid.nodes_per_axis - 1 for c in cell):
            out.append(cell)
    return out


@dataclass
class JetField:
    """Value, gradient and Hessian of a level set at every grid node.

    Attributes:
        phi: Array of shape ``grid.shape``.
        psi: Array of shape ``grid.shape + (dim,)``.
        hess: Array of shape ``grid.shape + (3,)`` in 2D or ``(6,)`` in 3D, see ``HESS_PAIRS``.
    """
    phi: np.ndarray
    psi: np.ndarray
    hess: np.ndarray

    @classmethod
    def empty(cls, grid: GridSpec) -> "JetField":
        """A field filled with NaN, so untouched nodes are easy to spot."""
        shape = grid.shape
        return cls(phi=np.full(shape, np.nan),
                   psi=np.full(shape + (grid.dim,), np.nan),
                   hess=np.full(shape + (hess_size(grid.dim),), np.nan))

    @property
    def dim(self) -> int:
        return self.psi.shape[-1]

    def jet(self, node: NodeIndex) -> Tuple[float, np.ndarray, np.ndarray]:
        return float(self.phi[node]), self.psi[node].copy(), self.hess[node].copy()

    def set_gradient(self, node: NodeIndex, phi: float, psi: np.ndarray) -> None:
        self.phi[node] = phi
        self.psi[node] = psi

    def hess_matrix(self, node: NodeIndex) -> np.ndarray:
        return hess_to_matrix(self.hess[node], self.dim)

    def copy(self) -> "JetField":
        return JetField(self.phi.copy(), self.psi.copy(), self.hess.copy())

    def gradient_norm(self) -> np.ndarray:
        return np.linalg.norm(self.psi, axis=-1)


class NodeState(IntEnum):
    """Tag of a node in the marching order. Values only ever increase."""
    DISTANT = 0
    TRIAL = 1
    ACCEPTED = 2


class StateGrid:
    """Per-node ``NodeState`` tags with monotone transitions.

    Attributes:
        tags: int8 array of ``NodeState`` values, shape ``grid.shape``.
        history: (node, old, new) transitions, kept only when ``record=True``.
    """

    def __init__(self, grid: GridSpec, record: bool = False) -> None:
        self.tags = np.full(grid.shape, NodeState.DISTANT, dtype=np.int8)
        self.record = record
        self.history: List[Tuple[NodeIndex, NodeState, NodeState]] = []

    def __getitem__(self, node: NodeIndex) -> NodeState:
        return NodeState(int(self.tags[node]))

    def _move(self, node: NodeIndex, new: NodeState) -> None:
        old = self[node]
        if new < old:
            raise ValueError(f"node {node} cannot go from {old.name} back to {new.name}")
        if new == old:
            return
        self.tags[node] = new
        if self.record:
            self.history.append((node, old, new))

    def mark_trial(self, node: NodeIndex) -> None:
        if self[node] == NodeState.ACCEPTED:
            raise ValueError(f"node {node} is already accepted")
        self._move(node, NodeState.TRIAL)

    def accept(self, node: NodeIndex) -> None:
        if self[node] == NodeState.ACCEPTED:
            raise ValueError(f"node {node} is already accepted")
        self._move(node, NodeState.ACCEPTED)

    def is_accepted(self, node: NodeIndex) -> bool:
        return self.tags[node] == NodeState.ACCEPTED

    def count(self, state: NodeState) -> int:
        return int(np.count_nonzero(self.tags == state))


class TrialHeap:
    """Binary min-heap of trial nodes with a per-node handle for key updates.

    Keys are distance magnitudes. Every pop is recorded so the march can
    check that keys leave the heap in nondecreasing order.
    """

    class Handle:
        __slots__ = ("index", "key", "node")

        def __init__(self, index: int, key: float, node: NodeIndex) -> None:
            self.index = index
            self.key = key
            self.node = node

    def __init__(self) -> None:
        self._heap: List[TrialHeap.Handle] = []
        self._handles: Dict[NodeIndex, TrialHeap.Handle] = {}
        self.pops: List[float] = []

    def __len__(self) -> int:
        return len(self._heap)

    def __contains__(self, node: NodeIndex) -> bool:
        return node in self._handles

    def key(self, node: NodeIndex) -> float:
        return self._handles[node].key

    def push(self, node: NodeIndex, key: float) -> None:
        """Insert a node that is not in the heap yet.

        Raises:
            ValueError: If the node is already present.
        """
        if node in self._handles:
            raise ValueError(f"node {node} is already in the heap")
        h = TrialHeap.Handle(len(self._heap), float(key), node)
        self._heap.append(h)
        self._handles[node] = h
        self._siftup(h)

    def update(self, node: NodeIndex, key: float) -> None:
        """Change the key of a node already in the heap (either direction)."""
        h = self._handles[node]
        h.key = float(key)
        if h.index != 0 and self._parent(h).key > h.key:
            self._siftup(h)
        else:
            self._siftdown(h)

    def pop(self) -> Tuple[NodeIndex, float]:
        """Remove and return the node with the smallest key.

        Raises:
            IndexError: If the heap is empty.
        """
        if not self._heap:
            raise IndexError("pop from an empty trial heap")
        top = self._heap[0]
        last = self._heap[-1]
        self._swap(top, last)
        self._heap.pop()
        del self._handles[top.node]
        if self._heap and last is not top:
            self._siftdown(last)
        self.pops.append(top.key)
        return top.node, top.key

    def last_popped(self) -> float:
        return self.pops[-1] if self.pops else 0.0

    def is_monotone(self) -> bool:
        """Whether every recorded pop key is >= the one before it."""
        keys = np.asarray(self.pops)
        return bool(np.all(np.diff(keys) >= 0.0)) if keys.size > 1 else True

    def _parent(self, h: "TrialHeap.Handle") -> "TrialHeap.Handle":
        return self._heap[(h.index - 1) // 2]

    def _best_child(self, h: "TrialHeap.Handle") -> Optional["TrialHeap.Handle"]:
        left = 2 * h.index + 1
        if left >= len(self._heap):
            return None
        right = left + 1
        if right < len(self._heap) and self._heap[right].key < self._heap[left].key:
            return self._heap[right]
        return self._heap[left]

    def _swap(self, a: "TrialHeap.Handle", b: "TrialHeap.Handle") -> None:
        self._heap[b.index] = a
        self._heap[a.index] = b
        a.index, b.index = b.index, a.index

    def _siftup(self, h: "TrialHeap.Handle") -> None:
        while h.index != 0:
            parent = self._parent(h)
            if parent.key <= h.key:
                break
            self._swap(h, parent)

    def _siftdown(self, h: "TrialHeap.Handle") -> None:
        child = self._best_child(h)
        while child is not None and child.key < h.key:
            self._swap(h, child)
            child = self._best_child(h)


@dataclass
class MarchOrder:
    """Seeds followed by marched nodes in acceptance order.

    Attributes:
        seeds: Nodes accepted during initialization.
        entries: (node, update case) per marched node; the case is None for the classical engine.
    """
    seeds: List[NodeIndex] = field(default_factory=list)
    entries: List[Tuple[NodeIndex, Optional["UpdateCase"]]] = field(default_factory=list)

    def append(self, node: NodeIndex, case: Optional["UpdateCase"] = None) -> None:
        self.entries.append((as_node(node), case))

    @property
    def nodes(self) -> List[NodeIndex]:
        return [node for node, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def is_permutation_of_non_seeds(self, grid: GridSpec) -> bool:
        """Whether the marched nodes cover every non-seed node exactly once."""
        marched = self.nodes
        seeds = set(self.seeds)
        if len(set(marched)) != len(marched) or seeds.intersection(marched):
            return False
        total = grid.nodes_per_axis ** grid.dim
        if len(marched) + len(seeds) != total:
            logging.debug("March order covers %s of %s nodes", len(marched) + len(seeds), total)
            return False
        return True
