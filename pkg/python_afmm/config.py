"""Run settings for the CLI and the ``Reinitializer``.

Values are merged from, lowest priority first: the model defaults,
``AFMM_*`` environment variables (a ``.env`` file is loaded first), one
JSON or TOML config file, and explicit keyword overrides (the CLI flags).
"""

import json
import logging
import os
import tomllib
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Mapping, Optional, Tuple

import dotenv
from pydantic import Field, field_validator, model_validator

from . import base_model
from .models import Region

ENV_PREFIX = "AFMM_"


class RunSettings(base_model.BaseModel):
    """Every tunable of a run.

    Attributes:
        shape: Named test shape (see ``shapes.SHAPES``); exclusive with ``input``.
        input: Path of an input field (``.vtk`` or ``.raw``).
        n: Nodes per axis for a single reinitialization.
        n_list: Nodes per axis of a convergence sweep.
        method: "afmm" (value, gradient and Hessian) or "fmm" (classical, value only).
        regions: Error regions to report.
        band_width: Band half-width in units of h.
        alpha: Sub-grid spacing factor for seeding.
        tol: Base tolerance of the projections and Newton solves.
        out: Output directory.
        workers: Parallel cases of a convergence sweep.
        lo: Lower domain bound on every axis.
        hi: Upper domain bound on every axis.
        raw: Also write the raw binary dump.
        log_level: Logging level name.
        x_min: First stencil position of the stencil study.
        x_max: Last stencil position.
        x_count: Number of stencil positions.
        h_list: Grid spacings of the stencil study.
        r0: Circle radius of the stencil study.
    """
    shape: Optional[str] = None
    input: Optional[Path] = None
    n: Annotated[int, Field(ge=4)] = 100
    n_list: List[Annotated[int, Field(ge=4)]] = Field(default_factory=lambda: [25, 50, 100, 200])
    method: Literal["fmm", "afmm"] = "afmm"
    regions: Tuple[Region, ...] = ("whole", "band")
    band_width: Annotated[float, Field(gt=0.0)] = 9.0
    alpha: Annotated[float, Field(gt=0.0, lt=0.5)] = 0.1
    tol: Annotated[float, Field(gt=0.0)] = 1e-10
    out: Path = Path("afmm_out")
    workers: Annotated[int, Field(ge=1)] = 1
    lo: float = -2.0
    hi: float = 2.0
    raw: bool = False
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    x_min: Annotated[float, Field(gt=0.0)] = 0.005
    x_max: Annotated[float, Field(gt=0.0)] = 0.7
    x_count: Annotated[int, Field(ge=1)] = 140
    h_list: List[Annotated[float, Field(gt=0.0)]] = Field(default_factory=lambda: [0.1, 0.05, 0.025])
    r0: Annotated[float, Field(gt=0.0)] = 1.0

    @field_validator("shape")
    @classmethod
    def known_shape(cls, value: Optional[str]) -> Optional[str]:
        from .shapes import SHAPES
        if value is not None and value not in SHAPES:
            raise ValueError(f"unknown shape {value!r}, expected one of {sorted(SHAPES)}")
        return value

    @field_validator("log_level", mode="before")
    @classmethod
    def upper_level(cls, value: Any) -> Any:
        return value.upper() if isinstance(value, str) else value

    @model_validator(mode="after")
    def check_ranges(self) -> "RunSettings":
        if self.hi <= self.lo:
            raise ValueError("hi must exceed lo")
        if self.x_max < self.x_min:
            raise ValueError("x_max must not be below x_min")
        if self.shape is not None and self.input is not None:
            raise ValueError("give either a shape or an input field, not both")
        return self

    def echo(self) -> Dict[str, Any]:
        """Every setting as JSON-compatible values, for the run summary."""
        return self.model_dump(mode="json")


_LIST_FIELDS = {"n_list": int, "h_list": float, "regions": str}


def _parse_env(name: str, raw: str) -> Any:
    if name in _LIST_FIELDS:
        return [_LIST_FIELDS[name](v) for v in raw.replace(";", ",").split(",") if v.strip()]
    return raw


def settings_from_env(env_file: Optional[str] = None) -> Dict[str, Any]:
    """``AFMM_<FIELD>`` variables (after loading ``.env``) as raw setting values."""
    dotenv.load_dotenv(env_file or "./.env")
    found = {}
    for name in RunSettings.model_fields:
        value = os.getenv(ENV_PREFIX + name.upper())
        if value is not None:
            found[name] = _parse_env(name, value)
    if found:
        logging.debug("Settings from the environment: %s", sorted(found))
    return found


def settings_from_file(path: Path) -> Dict[str, Any]:
    """Read a JSON or TOML config file (by suffix).

    Raises:
        ValueError: For other suffixes or a file that is not a table of settings.
        OSError: If the file cannot be read.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".json":
        data = json.loads(path.read_text(encoding="utf-8"))
    elif suffix == ".toml":
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    else:
        raise ValueError(f"config files must be .json or .toml, got {path.name}")
    if not isinstance(data, dict):
        raise ValueError(f"{path} must hold a table of settings")
    unknown = set(data) - set(RunSettings.model_fields)
    if unknown:
        raise ValueError(f"unknown settings in {path}: {sorted(unknown)}")
    return data


def load_settings(config: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None,
                  use_env: bool = True) -> RunSettings:
    """Merge defaults, environment, config file and overrides into ``RunSettings``.

    Args:
        config: Optional JSON or TOML file.
        overrides: Explicit values (None entries are ignored so unset CLI flags
            do not mask lower sources).
        use_env: Read ``AFMM_*`` variables.

    Raises:
        pydantic.ValidationError: If the merged values are invalid.
    """
    merged: Dict[str, Any] = {}
    if use_env:
        merged.update(settings_from_env())
    if config is not None:
        merged.update(settings_from_file(config))
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    return RunSettings.model_validate(merged)
