"""Input validation helpers used by the public entry points."""

from __future__ import annotations

import numpy as np

from .exceptions import DataError, ShapeError


def check_matrix(x, name: str = "X", dtype=None) -> np.ndarray:
    """Coerce to a 2-D ndarray and verify all entries are finite."""
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr


def check_paired(x: np.ndarray, y: np.ndarray, names: tuple[str, str] = ("X", "Y")) -> None:
    """Verify two paired matrices have the same number of rows."""
    if x.shape[0] != y.shape[0]:
        raise ShapeError(
            f"{names[0]} and {names[1]} must be paired row-for-row: "
            f"{x.shape[0]} != {y.shape[0]}"
        )


def check_finite(arr: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")


def row_norms(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", x, x))
