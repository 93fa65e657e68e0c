import asyncio
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Dict, List, Optional, Self, Sequence

import numpy as np
import pandas as pd

from . import fieldio
from .analysis import (attach_orders, convergence_frame, curvature_field, error_norms, exact_field,
                       jet_from_phi, stencil_frame)
from .config import RunSettings
from .grid import JetField
from .march import run_afmm, run_standard_fmm
from .models import ErrorReport, GridSpec, RunStatistics
from .shapes import Shape, get_shape
from .util import build_id


@dataclass
class RunOutcome:
    """One reinitialization and its measurements.

    Attributes:
        shape: Shape name, or "input" for a field read from disk.
        grid: The grid.
        method: "afmm" or "fmm".
        field: Value, gradient and Hessian (differenced from phi for "fmm").
        kappa: Curvature per node, NaN where the gradient is degenerate.
        stats: Run statistics of the engine.
        errors: Error reports against the exact oracle (empty for input fields).
    """
    shape: str
    grid: GridSpec
    method: str
    field: JetField
    kappa: np.ndarray
    stats: RunStatistics
    errors: List[ErrorReport] = dc_field(default_factory=list)

    def summary(self, settings: RunSettings) -> Dict[str, object]:
        """JSON-compatible run summary with the build id and every setting."""
        return {"build": build_id(), "shape": self.shape, "method": self.method,
                "grid": self.grid.to_row(), "h": self.grid.h,
                "stats": self.stats.to_row(), "fallback_fraction": self.stats.fallback_fraction(),
                "errors": [r.to_row() for r in self.errors], "settings": settings.echo()}


def _measure(shape: Shape, grid: GridSpec, field: JetField, settings: RunSettings, method: str) -> List[ErrorReport]:
    band = settings.band_width * grid.h
    exact = exact_field(shape, grid, band=band if shape.requires_band else None)
    reports = []
    for region in settings.regions:
        if region == "whole" and shape.requires_band:
            logging.warning("The %s oracle only covers the band, skipping whole-domain errors", shape.name)
            continue
        reports += error_norms(field, exact, grid, region, settings.band_width,
                               shape=shape.name, method=method)
    return reports


def reinitialize(settings: RunSettings, shape_name: Optional[str] = None, n: Optional[int] = None,
                 data: Optional[fieldio.FieldData] = None) -> RunOutcome:
    """Run one reinitialization of a named shape or of an input field.

    Args:
        settings: Run settings (method, alpha, tolerances, domain).
        shape_name: Named shape; defaults to ``settings.shape``.
        n: Nodes per axis; defaults to ``settings.n``.
        data: Input field, used instead of a shape.

    Raises:
        ValueError: If neither a shape nor an input field is given.
        AFMMError: For numerical failures of the engines or the oracle.
    """
    shape: Optional[Shape] = None
    if data is not None:
        grid, phi0, psi0, name = data.grid, data.phi, data.psi, "input"
    else:
        name = shape_name or settings.shape
        if name is None:
            raise ValueError("a shape or an input field is needed")
        shape = get_shape(name)
        grid = GridSpec.cube(shape.dim, n or settings.n, settings.lo, settings.hi)
        phi0, psi0 = shape.sample(grid)

    logging.info("Reinitializing %s on %s^%s nodes with %s", name, grid.nodes_per_axis, grid.dim, settings.method)
    if settings.method == "afmm":
        result = run_afmm(phi0, psi0, grid, alpha=settings.alpha, tol=settings.tol, band_width=settings.band_width)
        field, stats = result.field, result.stats
    else:
        result = run_standard_fmm(phi0, psi0, grid, tol=settings.tol)
        field, stats = jet_from_phi(result.phi, grid.h), result.stats
    kappa = curvature_field(field.psi, field.hess)
    outcome = RunOutcome(shape=name, grid=grid, method=settings.method, field=field, kappa=kappa, stats=stats)
    if shape is not None:
        t0 = time.perf_counter()
        outcome.errors = _measure(shape, grid, field, settings, settings.method)
        stats.timings["errors"] = time.perf_counter() - t0
    return outcome


def _convergence_case(settings_row: Dict[str, object], shape_name: str, n: int) -> List[Dict[str, object]]:
    """Worker entry point: one grid of a sweep, reports as plain dicts (picklable)."""
    settings = RunSettings.model_validate(settings_row)
    outcome = reinitialize(settings, shape_name, n)
    return [r.to_row() for r in outcome.errors]


def write_outputs(outcome: RunOutcome, settings: RunSettings, out: Path) -> Dict[str, Path]:
    """Write the field dump (and optionally the raw dump) plus the JSON summary."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{outcome.shape}_{outcome.method}_n{outcome.grid.nodes_per_axis}"
    keep_jet = outcome.method == "afmm"
    data = fieldio.FieldData(grid=outcome.grid, phi=outcome.field.phi,
                             psi=outcome.field.psi if keep_jet else None,
                             hess=outcome.field.hess if keep_jet else None,
                             kappa=outcome.kappa if keep_jet else None)
    paths = {"field": fieldio.write_structured_points(out / f"{stem}.vtk", data,
                                                      title=f"{outcome.shape} {outcome.method}")}
    if settings.raw:
        paths["raw"] = fieldio.write_raw(out / f"{stem}.raw", data)
    summary = out / f"{stem}_summary.json"
    summary.write_text(json.dumps(outcome.summary(settings), indent=2), encoding="utf-8")
    paths["summary"] = summary
    if outcome.errors:
        errors = out / f"{stem}_errors.csv"
        pd.DataFrame([r.to_row() for r in outcome.errors]).to_csv(errors, index=False)
        paths["errors"] = errors
    return paths


class Reinitializer:
    """Orchestrates reinitializations, convergence sweeps and the stencil study.

    Use it as an async context manager; convergence sweeps run their grids
    in a process pool of ``settings.workers`` processes, every case being
    single-threaded.

    Attributes:
        settings: The run settings.
        executor: Process pool of the current context, if any.
    """

    def __init__(self, settings: Optional[RunSettings] = None) -> None:
        self.settings: RunSettings = settings or RunSettings()
        self.executor: Optional[ProcessPoolExecutor] = None
        self.started: Optional[float] = None

    async def __aenter__(self) -> Self:
        """Start a session; the process pool is only created for sweeps with several workers."""
        self.started = time.perf_counter()
        if self.settings.workers > 1:
            self.executor = ProcessPoolExecutor(max_workers=self.settings.workers)
        logging.info("Reinitializer started (build %s, %s workers)", build_id(), self.settings.workers)
        return self

    async def __aexit__(self, exc_type, exc_val, exc_tb) -> None:
        """Shut the process pool down and log how the session ended."""
        if exc_type is None:
            logging.info("Reinitializer finished after %.2fs", time.perf_counter() - (self.started or 0.0))
        else:
            logging.warning("Reinitializer is stopping due to an error:\n%s, with value %s", exc_type, exc_val)
        if self.executor is not None:
            self.executor.shutdown(wait=True, cancel_futures=exc_type is not None)
            self.executor = None

    def reinitialize(self, shape: Optional[str] = None, n: Optional[int] = None,
                     data: Optional[fieldio.FieldData] = None) -> RunOutcome:
        return reinitialize(self.settings, shape, n, data)

    async def convergence(self, shape: Optional[str] = None, n_list: Optional[Sequence[int]] = None) -> List[ErrorReport]:
        """Error reports over a sweep of grids, with fitted orders attached.

        Raises:
            ValueError: Without a shape or with fewer than two grids.
        """
        name = shape or self.settings.shape
        if name is None:
            raise ValueError("a convergence sweep needs a named shape")
        sizes = sorted(set(n_list or self.settings.n_list))
        if len(sizes) < 2:
            raise ValueError("a convergence sweep needs at least two grid sizes")
        if len(sizes) < 3:
            logging.warning("Only %s grids: reporting pairwise orders without a fitted slope", len(sizes))
        row = self.settings.echo()
        if self.executor is None:
            cases = [await asyncio.to_thread(_convergence_case, row, name, n) for n in sizes]
        else:
            loop = asyncio.get_running_loop()
            cases = await asyncio.gather(*(loop.run_in_executor(self.executor, _convergence_case, row, name, n)
                                           for n in sizes))
        rows = [r for case in cases for r in case]
        reports = attach_orders(ErrorReport.from_list(rows))
        logging.info("Convergence sweep of %s over %s done: %s reports", name, sizes, len(reports))
        return reports

    def convergence_table(self, reports: Sequence[ErrorReport]) -> pd.DataFrame:
        return convergence_frame(reports)

    def stencil_study(self) -> pd.DataFrame:
        """Closed-form diagonal stencil errors over the configured x range and spacings."""
        s = self.settings
        xs = np.linspace(s.x_min, s.x_max, s.x_count)
        return stencil_frame(xs, s.h_list, s.r0)
