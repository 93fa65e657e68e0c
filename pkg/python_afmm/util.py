"""Utility functions and exceptions shared by the reinitialization engine.

This module provides:
- The exception hierarchy raised by seeding, solving, marching and analysis
- Small numeric helpers (sign with tie-breaking, index conversion)
- The build identifier echoed in every run summary
"""

import hashlib
import logging
import subprocess
from pathlib import Path
from typing import TypeAlias, Tuple

NodeIndex: TypeAlias = Tuple[int, ...]

_PACKAGE_DIR = Path(__file__).resolve().parent


class AFMMError(Exception):
    """Base class for every numerical failure raised by this package.

    The CLI maps any subclass to the "numerical failure" exit code.
    """

    def __init__(self, message: str):
        """Initialize the error.

        Args:
            message: Explanation of the error.
        """
        super().__init__(message)


class EmptyInterfaceError(AFMMError):
    """Raised when no grid cell contains a sign change of the initial level set."""


class InitFailureError(AFMMError):
    """Raised when a node next to the interface cannot be seeded from any adjacent cell."""


class UpdateFailureError(AFMMError):
    """Raised when every fallback tier of a node update fails.

    This should not happen on sane input and is treated as a bug signal.
    """


class NoConvergenceError(AFMMError):
    """Raised when an iterative solver does not meet its tolerance."""


class MaxIterationsError(NoConvergenceError):
    """Raised by the Newton solver when the iteration budget is exhausted."""


class SingularJacobianError(NoConvergenceError):
    """Raised by the Newton solver when the linearized system cannot be solved."""


class DegenerateGradientError(AFMMError):
    """Raised when curvature is requested at a node whose gradient is too short."""


class EmptyRegionError(AFMMError):
    """Raised when an error norm is requested over a region with no nodes."""


class NonPositiveError(AFMMError):
    """Raised when an order fit receives an error or spacing that is not strictly positive."""


class OracleUnavailableError(AFMMError):
    """Raised when an exact oracle is asked for a point it does not cover."""


class MarchInvariantError(AFMMError):
    """Raised when a finished march breaks causality or its Hessian replay is not reproducible."""


def sign(value: float, tie: float = 1.0) -> float:
    """Return +1.0 or -1.0 for a scalar, using ``tie`` to break exact zeros.

    Args:
        value: The scalar to classify.
        tie: Value whose sign is used when ``value`` is exactly zero.

    Returns:
        1.0 or -1.0.

    Examples:
        >>> sign(-0.3)
        -1.0
        >>> sign(0.0, tie=-2.0)
        -1.0
    """
    if value > 0.0:
        return 1.0
    if value < 0.0:
        return -1.0
    return 1.0 if tie >= 0.0 else -1.0


def as_node(index) -> NodeIndex:
    """Convert any integer sequence (list, array row) to a hashable node tuple."""
    return tuple(int(i) for i in index)


def build_id() -> str:
    """Return a git-style identifier of the code that produced a run.

    The short commit hash is used when the package lives in a git checkout
    (with a ``-dirty`` suffix for uncommitted changes). Otherwise a short
    digest of the package sources is returned, prefixed with ``src-``.

    Returns:
        An identifier such as ``"3f2a9c1"``, ``"3f2a9c1-dirty"`` or ``"src-8b1e44d0"``.
    """
    try:
        commit = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=_PACKAGE_DIR,
                                capture_output=True, text=True, timeout=5, check=True).stdout.strip()
        dirty = subprocess.run(["git", "status", "--porcelain", "--untracked-files=no"], cwd=_PACKAGE_DIR,
                               capture_output=True, text=True, timeout=5, check=True).stdout.strip()
        if commit:
            return f"{commit}-dirty" if dirty else commit
    except (OSError, subprocess.SubprocessError):
        logging.debug("git is unavailable, falling back to a source digest for the build id")
    digest = hashlib.sha1()
    for path in sorted(_PACKAGE_DIR.glob("*.py")):
        digest.update(path.read_bytes())
    return f"src-{digest.hexdigest()[:8]}"
