"""CSV formats for paths and Hermite coefficient vectors.

Path files: header ``t,value`` (scalar) or ``t,v1,...,vM`` (vector), one row
per breakpoint, first row at t = 0 and last row at t = T; values are the
right limits at t. Floats are written with repr, so a read/write cycle is
bit-exact. Lines starting with '#' are comments and are skipped; the writer
can emit one leading comment (used by the CLI to reference the manifest).

Coefficient files: header ``k,c_k`` with one row per Hermite index.
Test-set files: header ``k,f1,...,fm``; column j holds the coefficients of
test function j.
"""

from __future__ import annotations

from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from .paths import CadlagPath, VectorPath

__all__ = [
    "read_path_csv",
    "write_path_csv",
    "read_coeffs_csv",
    "write_coeffs_csv",
    "read_testset_csv",
    "write_testset_csv",
]


def _fmt(x: float) -> str:
    return repr(float(x))


def _read_table(path, expect_first: Optional[str] = None):
    lines = Path(path).read_text().splitlines()
    rows = []
    header = None
    for line in lines:
        if not line or line.startswith("#"):
            continue
        if header is None:
            header = [c.strip() for c in line.split(",")]
            continue
        rows.append([float(c) for c in line.split(",")])
    if header is None or not rows:
        raise ValueError(f"{path}: empty table")
    if expect_first is not None and header[0] != expect_first:
        raise ValueError(f"{path}: expected header starting with {expect_first!r}")
    return header, np.array(rows, dtype=float)


def read_path_csv(path) -> Union[CadlagPath, VectorPath]:
    """Parse a path CSV; the horizon is the time of the last row.

    Vector paths are given unit weights; callers that need a specific
    seminorm replace the weights after reading.
    """
    header, data = _read_table(path, expect_first="t")
    times, vals = data[:, 0], data[:, 1:]
    if times[0] != 0.0:
        raise ValueError(f"{path}: first row must be at t = 0")
    if not np.all(np.diff(times) > 0):
        raise ValueError(f"{path}: times must be strictly increasing")
    horizon = float(times[-1])
    if len(header) == 2:
        return CadlagPath(times, vals[:, 0], horizon)
    return VectorPath(times, vals, np.ones(vals.shape[1]), horizon)


def write_path_csv(path_obj, out, comment: Optional[str] = None) -> None:
    """Write a path; a final row at the horizon is appended when missing."""
    vector = isinstance(path_obj, VectorPath)
    vals = path_obj.values if vector else path_obj.values[:, None]
    times = path_obj.times
    if times[-1] < path_obj.horizon:
        times = np.append(times, path_obj.horizon)
        vals = np.vstack([vals, vals[-1]])
    cols = ["value"] if not vector else [f"v{j + 1}" for j in range(vals.shape[1])]
    lines = []
    if comment:
        lines.append(f"# {comment}")
    lines.append(",".join(["t"] + cols))
    for t, row in zip(times, vals):
        lines.append(",".join([_fmt(t)] + [_fmt(v) for v in row]))
    Path(out).write_text("\n".join(lines) + "\n")


def read_coeffs_csv(path) -> np.ndarray:
    header, data = _read_table(path, expect_first="k")
    ks = data[:, 0].astype(int)
    if not np.array_equal(ks, np.arange(ks.size)):
        raise ValueError(f"{path}: indices must be 0..D-1 in order")
    return data[:, 1]


def write_coeffs_csv(coeffs, out, comment: Optional[str] = None) -> None:
    lines = []
    if comment:
        lines.append(f"# {comment}")
    lines.append("k,c_k")
    for k, c in enumerate(np.asarray(coeffs, dtype=float)):
        lines.append(f"{k},{_fmt(c)}")
    Path(out).write_text("\n".join(lines) + "\n")


def read_testset_csv(path) -> List[np.ndarray]:
    header, data = _read_table(path, expect_first="k")
    ks = data[:, 0].astype(int)
    if not np.array_equal(ks, np.arange(ks.size)):
        raise ValueError(f"{path}: indices must be 0..D-1 in order")
    return [data[:, j] for j in range(1, data.shape[1])]


def write_testset_csv(coeff_list, out, comment: Optional[str] = None) -> None:
    coeff_list = [np.asarray(c, dtype=float) for c in coeff_list]
    if not coeff_list:
        raise ValueError("test set must be nonempty")
    depth = max(c.size for c in coeff_list)
    lines = []
    if comment:
        lines.append(f"# {comment}")
    lines.append(",".join(["k"] + [f"f{j + 1}" for j in range(len(coeff_list))]))
    for k in range(depth):
        row = [str(k)]
        for c in coeff_list:
            row.append(_fmt(c[k]) if k < c.size else _fmt(0.0))
        lines.append(",".join(row))
    Path(out).write_text("\n".join(lines) + "\n")
