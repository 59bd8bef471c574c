"""Headerless numeric CSV helpers with platform-independent number formatting."""

from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np


def format_number(x: float) -> str:
    """Shortest round-trip text for ``x``; integral values are written without a decimal point."""
    x = float(x)
    if not np.isfinite(x):
        raise ValueError(f"cannot serialize non-finite value {x!r}")
    if x == int(x) and abs(x) < 2**53:
        return str(int(x))
    return repr(x)


def write_matrix(path: str | os.PathLike, mat: np.ndarray) -> None:
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in mat:
            writer.writerow([format_number(v) for v in row])


def read_matrix(path: str | os.PathLike) -> np.ndarray:
    path = Path(path)
    rows: list[list[float]] = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                rows.append([float(cell) for cell in row])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-numeric entry ({exc})") from None
    if not rows:
        raise ValueError(f"{path}: empty matrix file")
    width = len(rows[0])
    for lineno, row in enumerate(rows, start=1):
        if len(row) != width:
            raise ValueError(f"{path}:{lineno}: expected {width} columns, found {len(row)}")
    return np.array(rows, dtype=float)


def write_vector(path: str | os.PathLike, vec: np.ndarray) -> None:
    write_matrix(path, np.asarray(vec, dtype=float).reshape(-1, 1))


def read_vector(path: str | os.PathLike) -> np.ndarray:
    mat = read_matrix(path)
    if mat.shape[1] != 1:
        raise ValueError(f"{path}: expected a single column, found {mat.shape[1]}")
    return mat[:, 0]
