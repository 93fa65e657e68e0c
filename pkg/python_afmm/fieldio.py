"""Field dumps and input fields.

Two formats:

- legacy structured points (``.vtk``, ASCII): dimensions, origin and spacing,
  then ``phi`` as scalars, ``psi`` as vectors (padded to three components in
  2D) and the Hessian slots and curvature as field arrays. Standard
  scientific viewers open it directly. Nodes are written x-fastest.
- raw binary (``.raw``): one JSON header line followed by little-endian
  float64 arrays in C order, for exact round trips.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Union

import numpy as np

from .grid import HESS_NAMES, hess_size
from .models import GridSpec

PathLike = Union[str, Path]
VTK_SUFFIXES = (".vtk",)
RAW_SUFFIXES = (".raw", ".bin")


@dataclass
class FieldData:
    """Arrays on a grid, as read from or written to disk.

    Attributes:
        grid: The grid.
        phi: Level set values, shape ``grid.shape``.
        psi: Gradient, ``grid.shape + (d,)``, if present.
        hess: Hessian slots, ``grid.shape + (3 or 6,)``, if present.
        kappa: Curvature, ``grid.shape``, if present.
    """
    grid: GridSpec
    phi: np.ndarray
    psi: Optional[np.ndarray] = None
    hess: Optional[np.ndarray] = None
    kappa: Optional[np.ndarray] = None

    def arrays(self) -> Dict[str, np.ndarray]:
        out = {"phi": self.phi}
        for name in ("psi", "hess", "kappa"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out


def _components(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """(nodes, components) in x-fastest node order."""
    values = np.asarray(values, dtype=float)
    extra = values.shape[grid.dim:]
    per_node = int(np.prod(extra)) if extra else 1
    flat = values.reshape(grid.shape + (per_node,))
    return flat.transpose(tuple(reversed(range(grid.dim))) + (grid.dim,)).reshape(-1, per_node)


def _from_components(rows: np.ndarray, grid: GridSpec) -> np.ndarray:
    per_node = rows.shape[1]
    arr = rows.reshape(tuple(reversed(grid.shape)) + (per_node,))
    arr = arr.transpose(tuple(reversed(range(grid.dim))) + (grid.dim,))
    return arr[..., 0] if per_node == 1 else arr


def _block(rows: np.ndarray) -> str:
    return "\n".join(" ".join(repr(float(v)) for v in row) for row in rows)


def write_structured_points(path: PathLike, data: FieldData, title: str = "signed distance jet") -> Path:
    """Write a legacy ASCII structured-points file.

    Args:
        path: Destination file.
        data: Arrays to write; only ``phi`` is required.
        title: Free-text title line.

    Returns:
        The path written.
    """
    path = Path(path)
    grid = data.grid
    dims = list(grid.shape) + [1] * (3 - grid.dim)
    origin = list(grid.lo) + [0.0] * (3 - grid.dim)
    count = int(np.prod(grid.shape))
    parts = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET STRUCTURED_POINTS",
             "DIMENSIONS {} {} {}".format(*dims),
             "ORIGIN {!r} {!r} {!r}".format(*map(float, origin)),
             "SPACING {0!r} {0!r} {0!r}".format(grid.h),
             f"POINT_DATA {count}",
             "SCALARS phi double 1", "LOOKUP_TABLE default",
             _block(_components(data.phi, grid))]
    if data.psi is not None:
        rows = _components(data.psi, grid)
        if grid.dim == 2:
            rows = np.hstack([rows, np.zeros((count, 1))])
        parts += ["VECTORS psi double", _block(rows)]
    extras = [(name, getattr(data, name)) for name in ("hess", "kappa") if getattr(data, name) is not None]
    if extras:
        parts.append(f"FIELD jet {len(extras)}")
        for name, values in extras:
            rows = _components(values, grid)
            parts += [f"{name} {rows.shape[1]} {count} double", _block(rows)]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")
    logging.info("Wrote structured points to %s", path)
    return path


class _Tokens:
    def __init__(self, text: str) -> None:
        self._it: Iterator[str] = iter(text.split())

    def next(self) -> str:
        try:
            return next(self._it)
        except StopIteration:
            raise ValueError("structured-points file ended early") from None

    def numbers(self, count: int) -> np.ndarray:
        return np.array([float(self.next()) for _ in range(count)])

    def __iter__(self) -> Iterator[str]:
        return self._it


def read_structured_points(path: PathLike) -> FieldData:
    """Read a file written by ``write_structured_points`` (or any compatible writer).

    Raises:
        ValueError: If the file is not legacy ASCII structured points, the
            spacing is not uniform, or the grid is not a cube.
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").split("\n", 3)
    if len(lines) < 4 or not lines[0].startswith("# vtk DataFile") or lines[2].strip().upper() != "ASCII":
        raise ValueError(f"{path} is not a legacy ASCII structured-points file")
    tokens = _Tokens(lines[3])
    header: Dict[str, List[str]] = {}
    for key, width in (("DATASET", 1), ("DIMENSIONS", 3), ("ORIGIN", 3), ("SPACING", 3), ("POINT_DATA", 1)):
        found = tokens.next().upper()
        if found != key:
            raise ValueError(f"expected {key} in {path}, found {found}")
        header[key] = [tokens.next() for _ in range(width)]
    if header["DATASET"][0].upper() != "STRUCTURED_POINTS":
        raise ValueError(f"{path} holds {header['DATASET'][0]}, not STRUCTURED_POINTS")

    dims = [int(v) for v in header["DIMENSIONS"]]
    dim = 2 if dims[2] == 1 else 3
    dims = dims[:dim]
    spacing = [float(v) for v in header["SPACING"]][:dim]
    if len(set(dims)) != 1 or not np.allclose(spacing, spacing[0], rtol=1e-12):
        raise ValueError(f"{path} is not a cube with uniform spacing")
    origin = [float(v) for v in header["ORIGIN"]][:dim]
    n = dims[0]
    grid = GridSpec(dim=dim, lo=tuple(origin), hi=tuple(o + (n - 1) * spacing[0] for o in origin),
                    nodes_per_axis=n)
    count = int(header["POINT_DATA"][0])

    arrays: Dict[str, np.ndarray] = {}
    for token in tokens:
        section = token.upper()
        if section == "SCALARS":
            name, _ = tokens.next(), tokens.next()
            ncomp = 1
            word = tokens.next()
            if word.upper() != "LOOKUP_TABLE":
                ncomp = int(word)
                tokens.next()
            tokens.next()
            arrays[name] = tokens.numbers(count * ncomp).reshape(count, ncomp)
        elif section == "VECTORS":
            name, _ = tokens.next(), tokens.next()
            arrays[name] = tokens.numbers(count * 3).reshape(count, 3)[:, :dim]
        elif section == "FIELD":
            tokens.next()
            for _ in range(int(tokens.next())):
                name, ncomp, ntuples, _ = tokens.next(), int(tokens.next()), int(tokens.next()), tokens.next()
                arrays[name] = tokens.numbers(ncomp * ntuples).reshape(ntuples, ncomp)
        else:
            raise ValueError(f"unsupported section {token!r} in {path}")
    if "phi" not in arrays:
        raise ValueError(f"{path} has no phi scalars")
    fields = {name: _from_components(rows, grid) for name, rows in arrays.items()}
    return FieldData(grid=grid, phi=fields["phi"], psi=fields.get("psi"),
                     hess=fields.get("hess"), kappa=fields.get("kappa"))


def write_raw(path: PathLike, data: FieldData) -> Path:
    """Write the JSON header line and the arrays as little-endian float64, C order."""
    path = Path(path)
    arrays = data.arrays()
    header = {"dim": data.grid.dim, "lo": list(data.grid.lo), "hi": list(data.grid.hi),
              "nodes_per_axis": data.grid.nodes_per_axis, "dtype": "<f8", "order": "C",
              "arrays": [{"name": name, "shape": list(values.shape)} for name, values in arrays.items()]}
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("utf-8"))
        for values in arrays.values():
            fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())
    logging.info("Wrote %s raw arrays to %s", len(arrays), path)
    return path


def read_raw(path: PathLike) -> FieldData:
    path = Path(path)
    with path.open("rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        payload = fh.read()
    grid = GridSpec(dim=header["dim"], lo=tuple(header["lo"]), hi=tuple(header["hi"]),
                    nodes_per_axis=header["nodes_per_axis"])
    arrays, offset = {}, 0
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) * 8
        if offset + size > len(payload):
            raise ValueError(f"{path} is truncated in array {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(payload, dtype="<f8", count=size // 8, offset=offset).reshape(shape).copy()
        offset += size
    return FieldData(grid=grid, phi=arrays["phi"], psi=arrays.get("psi"),
                     hess=arrays.get("hess"), kappa=arrays.get("kappa"))


def read_field(path: PathLike) -> FieldData:
    """Read an input or dumped field, choosing the format by suffix.

    Raises:
        ValueError: For unknown suffixes or arrays that do not match the grid.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in VTK_SUFFIXES:
        data = read_structured_points(path)
    elif suffix in RAW_SUFFIXES:
        data = read_raw(path)
    else:
        raise ValueError(f"unknown field format {suffix!r}; use one of {VTK_SUFFIXES + RAW_SUFFIXES}")
    grid = data.grid
    expected = {"phi": grid.shape, "psi": grid.shape + (grid.dim,),
                "hess": grid.shape + (hess_size(grid.dim),), "kappa": grid.shape}
    for name, values in data.arrays().items():
        if values.shape != expected[name]:
            raise ValueError(f"{name} in {path} has shape {values.shape}, expected {expected[name]}")
    logging.info("Read %s field on %s^%s nodes from %s", "/".join(data.arrays()), grid.nodes_per_axis, grid.dim, path)
    return data


def write_field(path: PathLike, data: FieldData) -> Path:
    suffix = Path(path).suffix.lower()
    if suffix in RAW_SUFFIXES:
        return write_raw(path, data)
    return write_structured_points(path, data)


def hess_columns(dim: int) -> List[str]:
    """Names of the stored Hessian slots, in file order."""
    return list(HESS_NAMES[dim])
