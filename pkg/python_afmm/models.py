from typing import Annotated, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import Field, field_validator, model_validator

from . import base_model

Quantity = Literal["phi", "psi", "kappa", "hxx", "hyy", "hzz", "hxy", "hxz", "hyz", "hess"]
Region = Literal["whole", "band"]
Norm = Literal["l2", "linf"]


class GridSpec(base_model.BaseModel):
    """A uniform Cartesian grid in 2D or 3D.

    Nodes are counted per axis, so a grid reported as "100^2" has 100 nodes
    along each axis and spacing ``h = (hi - lo) / (N - 1)``.

    Attributes:
        dim: Spatial dimension, 2 or 3.
        lo: Lower domain corner, one coordinate per axis.
        hi: Upper domain corner, one coordinate per axis.
        nodes_per_axis: Node count N along every axis (N >= 4).
    """
    dim: Literal[2, 3]
    lo: Tuple[float, ...]
    hi: Tuple[float, ...]
    nodes_per_axis: Annotated[int, Field(ge=4)]

    @model_validator(mode="after")
    def check_box(self) -> "GridSpec":
        if len(self.lo) != self.dim or len(self.hi) != self.dim:
            raise ValueError(f"lo and hi must have {self.dim} coordinates")
        extents = [b - a for a, b in zip(self.lo, self.hi)]
        if min(extents) <= 0.0:
            raise ValueError("hi must exceed lo on every axis")
        if max(extents) - min(extents) > 1e-12 * max(extents):
            raise ValueError("the grid spacing must be identical on every axis (use a cubic box)")
        return self

    @classmethod
    def cube(cls, dim: int, n: int, lo: float = -2.0, hi: float = 2.0) -> "GridSpec":
        """Build the grid ``[lo, hi]^dim`` with ``n`` nodes per axis.

        Examples:
            >>> GridSpec.cube(2, 41).h
            0.1
        """
        return cls(dim=dim, lo=(lo,) * dim, hi=(hi,) * dim, nodes_per_axis=n)

    @property
    def h(self) -> float:
        return (self.hi[0] - self.lo[0]) / (self.nodes_per_axis - 1)

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.nodes_per_axis,) * self.dim

    @property
    def origin(self) -> np.ndarray:
        return np.asarray(self.lo, dtype=float)

    def coords(self, node) -> np.ndarray:
        """Physical coordinates of a node index."""
        return self.origin + self.h * np.asarray(node, dtype=float)

    def axes(self) -> List[np.ndarray]:
        """One coordinate array per axis."""
        return [self.lo[a] + self.h * np.arange(self.nodes_per_axis) for a in range(self.dim)]

    def mesh(self) -> List[np.ndarray]:
        """Coordinate arrays of every node, ``indexing="ij"`` so ``mesh()[0][i, j] = x_i``."""
        return np.meshgrid(*self.axes(), indexing="ij")

    def points(self) -> np.ndarray:
        """All node coordinates as an ``(M, dim)`` array in C order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=1)

    def contains(self, node) -> bool:
        return len(node) == self.dim and all(0 <= i < self.nodes_per_axis for i in node)


class SolveReport(base_model.BaseModel):
    """Outcome of one node update or one Hessian replay.

    Attributes:
        converged: Whether the accepted candidate came from a converged solve.
        iterations: Newton iterations spent on the accepted candidate.
        residual: Max-norm residual of the accepted candidate.
        valid: Whether the candidate passed the validity checks.
        tier: 0 = full upwind case, 1 = reduced case, 2 = classical fallback.
        axes: Axes of the update case that produced the candidate.
    """
    converged: bool
    iterations: int = 0
    residual: float = 0.0
    valid: bool = True
    tier: Literal[0, 1, 2] = 0
    axes: Tuple[int, ...] = ()

    @model_validator(mode="after")
    def check_converged(self) -> "SolveReport":
        if self.converged and not np.isfinite(self.residual):
            raise ValueError("a converged report needs a finite residual")
        return self


class RunStatistics(base_model.BaseModel):
    """Instrumentation of one marching run.

    Attributes:
        method: "fmm" or "afmm".
        nodes: Total node count.
        seeds: Number of seeded (initially Accepted) nodes.
        gradient_tiers: Count of accepted candidates per fallback tier (gradient pass).
        hessian_tiers: Count of Hessian replays per tier (2 = neighbour-average fallback).
        clamped_keys: Heap pushes whose key had to be lifted to the current front.
        seed_fallbacks: Seeds taken from a second-choice cell after a projection failure.
        max_gradient_residual: Largest residual among accepted gradient solves.
        max_hessian_residual: Largest residual among converged Hessian solves.
        unit_gradient_median: Median of | |psi| - 1 | over all nodes.
        unit_gradient_band_max: Max of | |psi| - 1 | over the |phi| <= band_width*h band.
        timings: Wall-clock seconds per phase ("seed", "gradient", "hessian").
    """
    method: Literal["fmm", "afmm"]
    nodes: int = 0
    seeds: int = 0
    gradient_tiers: Dict[int, int] = Field(default_factory=lambda: {0: 0, 1: 0, 2: 0})
    hessian_tiers: Dict[int, int] = Field(default_factory=lambda: {0: 0, 1: 0, 2: 0})
    clamped_keys: int = 0
    seed_fallbacks: int = 0
    max_gradient_residual: float = 0.0
    max_hessian_residual: float = 0.0
    unit_gradient_median: Optional[float] = None
    unit_gradient_band_max: Optional[float] = None
    timings: Dict[str, float] = Field(default_factory=dict)

    @property
    def marched(self) -> int:
        return self.nodes - self.seeds

    def fallback_fraction(self) -> float:
        """Fraction of marched nodes that needed the classical tier-2 fallback."""
        return self.gradient_tiers.get(2, 0) / self.marched if self.marched else 0.0


class ErrorReport(base_model.BaseModel):
    """One error measurement: a quantity, a norm and a region on one grid.

    Attributes:
        shape: Name of the test shape (or "input").
        method: "fmm" or "afmm".
        n: Nodes per axis.
        h: Grid spacing.
        quantity: Which field was measured.
        region: "whole" domain or the near-interface "band".
        l2: Root mean square error over the region.
        linf: Maximum error over the region.
        count: Number of nodes that entered the norm.
        excluded: Nodes left out (relative curvature where the exact value vanishes).
        order_l2: Fitted convergence order of ``l2`` across the sweep, if known.
        order_linf: Fitted convergence order of ``linf`` across the sweep, if known.
    """
    shape: str = "input"
    method: Literal["fmm", "afmm"] = "afmm"
    n: int
    h: float
    quantity: Quantity
    region: Region
    l2: float
    linf: float
    count: int
    excluded: int = 0
    order_l2: Optional[float] = None
    order_linf: Optional[float] = None

    @field_validator("l2", "linf")
    @classmethod
    def non_negative(cls, value: float) -> float:
        if value < 0.0:
            raise ValueError("error norms are non-negative")
        return value


class StencilResult(base_model.BaseModel):
    """Closed-form solution of the diagonal circle stencil and its errors.

    Attributes:
        x: Stencil position along the diagonal.
        h: Grid spacing.
        r0: Circle radius.
        phi: Discrete level set value at the updated node.
        psi: Each (equal) gradient component at the updated node.
        phi_error: Level set error against the true distance.
        gradient_error: Gradient component error against 1/sqrt(2).
    """
    x: float
    h: float
    r0: float
    phi: float
    psi: float
    phi_error: float
    gradient_error: float


class ProjectionResult(base_model.BaseModel):
    """Result of a closest-point projection onto a patch zero set.

    Attributes:
        point: The foot point y.
        distance: ``|x0 - y|``.
        side: Sign of the patch at x0 (+1 outside, -1 inside).
        iterations: Newton iterations of the final (polishing) solve.
        fallback: Whether the lattice fallback was needed.
    """
    point: Tuple[float, ...]
    distance: float
    side: float
    iterations: int = 0
    fallback: bool = False

    @property
    def signed_distance(self) -> float:
        return self.side * self.distance
