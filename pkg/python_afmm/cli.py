"""Command-line front-end.

Verbs:

    reinit          reinitialize a named shape or an input field, write the field dump and a summary
    convergence     sweep grid sizes for a shape and write the error table with fitted orders
    stencil-study   closed-form errors of the diagonal stencil over x and h

Exit codes: 0 success, 2 usage or invalid input, 3 numerical failure, 1 I/O failure.
"""

import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import pydantic

from . import fieldio
from .analysis import fit_order
from .api import Reinitializer, write_outputs
from .config import RunSettings, load_settings
from .shapes import SHAPES
from .util import AFMMError, build_id

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="JSON or TOML file with settings")
    parser.add_argument("--out", type=Path, default=None, help="Output directory")
    parser.add_argument("--log-level", dest="log_level", default=None,
                        choices=("DEBUG", "INFO", "WARNING", "ERROR"), type=str.upper)


def _engine(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--method", choices=("fmm", "afmm"), default=None)
    parser.add_argument("--region", choices=("whole", "band"), default=None,
                        help="Report one error region only (default: both)")
    parser.add_argument("--band-width", dest="band_width", type=float, default=None,
                        help="Band half-width in units of h (default 9)")
    parser.add_argument("--alpha", type=float, default=None, help="Sub-grid spacing factor (default 0.1)")
    parser.add_argument("--tol", type=float, default=None, help="Base solver tolerance (default 1e-10)")
    parser.add_argument("--lo", type=float, default=None, help="Lower domain bound (default -2)")
    parser.add_argument("--hi", type=float, default=None, help="Upper domain bound (default 2)")
    parser.add_argument("--raw", action="store_true", default=None, help="Also write the raw binary dump")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="afmm", description="Level-set reinitialization with gradient and Hessian")
    sub = parser.add_subparsers(dest="command", required=True)

    reinit = sub.add_parser("reinit", help="Reinitialize one shape or input field")
    source = reinit.add_mutually_exclusive_group()
    source.add_argument("--shape", choices=sorted(SHAPES), default=None)
    source.add_argument("--input", type=Path, default=None, help="Input field (.vtk or .raw)")
    reinit.add_argument("--n", type=int, default=None, help="Nodes per axis")
    _engine(reinit)
    _common(reinit)

    conv = sub.add_parser("convergence", help="Error table over several grid sizes")
    conv.add_argument("--shape", choices=sorted(SHAPES), default=None)
    conv.add_argument("--n", dest="n_list", type=int, nargs="+", default=None, help="Nodes per axis of each grid")
    conv.add_argument("--workers", type=int, default=None, help="Grids run in parallel")
    _engine(conv)
    _common(conv)

    stencil = sub.add_parser("stencil-study", help="Closed-form diagonal stencil errors")
    stencil.add_argument("--x-min", dest="x_min", type=float, default=None)
    stencil.add_argument("--x-max", dest="x_max", type=float, default=None)
    stencil.add_argument("--x-count", dest="x_count", type=int, default=None)
    stencil.add_argument("--h", dest="h_list", type=float, nargs="+", default=None, help="Grid spacings")
    stencil.add_argument("--r0", type=float, default=None, help="Circle radius (default 1)")
    _common(stencil)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    values = {k: v for k, v in vars(args).items() if k not in ("command", "config", "region")}
    if getattr(args, "region", None):
        values["regions"] = (args.region,)
    return values


def _write_json(path: Path, payload: Dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return path


def cmd_reinit(settings: RunSettings) -> int:
    runner = Reinitializer(settings)
    data = fieldio.read_field(settings.input) if settings.input is not None else None
    if data is None and settings.shape is None:
        raise ValueError("reinit needs --shape or --input")
    outcome = runner.reinitialize(data=data)
    paths = write_outputs(outcome, settings, settings.out)
    stats = outcome.stats
    logging.info("Done: %s marched, %.2f%% classical fallback, unit-gradient band max %s",
                 stats.marched, 100.0 * stats.fallback_fraction(), stats.unit_gradient_band_max)
    for kind, path in paths.items():
        logging.info("Wrote %s: %s", kind, path)
    return EXIT_OK


def _fitted(reports) -> List[Dict[str, Any]]:
    rows = []
    for rep in reports:
        if rep.n == max(r.n for r in reports):
            rows.append({"quantity": rep.quantity, "region": rep.region,
                         "order_l2": rep.order_l2, "order_linf": rep.order_linf})
    return rows


async def _convergence(settings: RunSettings) -> int:
    if settings.shape is None:
        raise ValueError("convergence needs --shape")
    async with Reinitializer(settings) as runner:
        reports = await runner.convergence()
        table = runner.convergence_table(reports)
    out = Path(settings.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{settings.shape}_{settings.method}_convergence"
    table.to_csv(out / f"{stem}.csv", index=False)
    _write_json(out / f"{stem}_summary.json",
                {"build": build_id(), "settings": settings.echo(), "orders": _fitted(reports)})
    logging.info("Wrote %s rows to %s", len(table), out / f"{stem}.csv")
    return EXIT_OK


def cmd_convergence(settings: RunSettings) -> int:
    return asyncio.run(_convergence(settings))


def cmd_stencil_study(settings: RunSettings) -> int:
    table = Reinitializer(settings).stencil_study()
    out = Path(settings.out)
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "stencil_study.csv", index=False)
    orders = {}
    if len(settings.h_list) >= 3:
        for x, rows in table.groupby("x"):
            orders[repr(float(x))] = {"phi": fit_order(list(zip(rows["h"], rows["phi_error"]))),
                                      "gradient": fit_order(list(zip(rows["h"], rows["gradient_error"])))}
    _write_json(out / "stencil_study_summary.json",
                {"build": build_id(), "settings": settings.echo(), "orders_in_h": orders})
    logging.info("Wrote %s stencil rows to %s", len(table), out / "stencil_study.csv")
    return EXIT_OK


COMMANDS = {"reinit": cmd_reinit, "convergence": cmd_convergence, "stencil-study": cmd_stencil_study}


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, load settings and run one verb.

    Returns:
        The process exit code.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
    try:
        settings = load_settings(args.config, _overrides(args))
        logging.getLogger().setLevel(settings.log_level)
        return COMMANDS[args.command](settings)
    except pydantic.ValidationError as exc:
        logging.error("Invalid settings:\n%s", exc)
        return EXIT_USAGE
    except AFMMError as exc:
        logging.error("Numerical failure (%s): %s", type(exc).__name__, exc)
        return EXIT_NUMERIC
    except ValueError as exc:
        logging.error("Invalid input: %s", exc)
        return EXIT_USAGE
    except OSError as exc:
        logging.error("I/O failure: %s", exc)
        return EXIT_IO


def run() -> None:
    sys.exit(main())
