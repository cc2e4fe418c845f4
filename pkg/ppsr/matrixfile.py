"""Plain-text matrix dumps and atomic file writes.

Dump layout: a ``# ppsr-matrix v1`` line, a ``rows cols`` line, then one
tab-separated row per line. Floats are written with ``repr`` so they read back
bit-for-bit.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Iterator

import numpy as np

from ppsr.errors import DataError

MATRIX_MAGIC = "# ppsr-matrix v1"


def atomic_write_text(path: Path | str, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _format_value(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def format_rows(array: np.ndarray) -> list[str]:
    """Row-major lines for a 2-D array."""
    array = np.atleast_2d(array)
    return ["\t".join(_format_value(x) for x in row) for row in array]


def parse_rows(lines: Iterator[str], rows: int, cols: int, dtype=float) -> np.ndarray:
    """Read ``rows`` lines of ``cols`` values each from an iterator."""
    out = np.zeros((rows, cols), dtype=dtype)
    for i in range(rows):
        try:
            line = next(lines)
        except StopIteration:
            raise DataError(f"expected {rows} rows, file ended after {i}") from None
        fields = line.split("\t") if cols else []
        if len(fields) != cols:
            raise DataError(f"row {i}: expected {cols} values, got {len(fields)}")
        try:
            out[i] = [dtype(f) for f in fields]
        except ValueError as e:
            raise DataError(f"row {i}: {e}") from None
    return out


def dump_matrix(path: Path | str, array: np.ndarray) -> None:
    array = np.atleast_2d(np.asarray(array))
    header = [MATRIX_MAGIC, f"{array.shape[0]} {array.shape[1]}"]
    atomic_write_text(path, "\n".join(header + format_rows(array)) + "\n")


def load_matrix(path: Path | str) -> np.ndarray:
    lines = iter(Path(path).read_text(encoding="utf-8").splitlines())
    if next(lines, None) != MATRIX_MAGIC:
        raise DataError(f"{path}: not a matrix dump")
    try:
        rows, cols = (int(v) for v in next(lines).split())
    except (StopIteration, ValueError):
        raise DataError(f"{path}: bad shape line") from None
    return parse_rows(lines, rows, cols)
