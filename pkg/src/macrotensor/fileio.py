"""Text file formats: the long-format .t3 tensor table and flat CSV matrices.

A .t3 file is a diff-able listing `i,j,k,value` with 1-based indices and
the token NA for missing cells; a JSON sidecar `<name>.json` records the
dims so trailing all-missing slices survive a round trip.  Values are
written with 17 significant digits, enough to reproduce any double
exactly.  Paths ending in .gz are gzip-compressed transparently (with a
zeroed timestamp, so identical content gives identical bytes).
"""

import gzip
import io
import json
import os

import numpy as np

from .tensor import Tensor3

__all__ = [
    "T3ParseError",
    "read_matrix_csv",
    "read_t3",
    "write_matrix_csv",
    "write_t3",
]

_HEADER = ["i", "j", "k", "value"]


class T3ParseError(ValueError):
    """A malformed .t3 or CSV file; the message carries file and line."""


def _fmt(v):
    return "NA" if not np.isfinite(v) else format(float(v), ".17g")


def _open_read(path):
    if str(path).endswith(".gz"):
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8",
                                newline="")
    return open(path, "r", encoding="utf-8", newline="")


def _open_write(path):
    if str(path).endswith(".gz"):
        raw = open(path, "wb")
        # mtime pinned so rewriting the same tensor gives the same bytes
        gz = gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0)
        return io.TextIOWrapper(gz, encoding="utf-8", newline="")
    return open(path, "w", encoding="utf-8", newline="")


def _sidecar_path(path):
    return str(path) + ".json"


def _read_sidecar(path):
    sidecar = _sidecar_path(path)
    if not os.path.exists(sidecar):
        return None
    try:
        with open(sidecar, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        dims = tuple(int(raw[k]) for k in ("I", "J", "K"))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise T3ParseError(f"{sidecar}: invalid dims sidecar ({exc})")
    if min(dims) < 1:
        raise T3ParseError(f"{sidecar}: dims must be positive")
    return dims


def read_t3(path):
    """Parse a .t3 file into a :class:`Tensor3`.

    Dims come from the sidecar when present, otherwise from the largest
    index seen.  Unlisted cells are missing.  Duplicate or out-of-range
    indices raise :class:`T3ParseError` naming the offending line.
    """
    dims = _read_sidecar(path)
    entries = []
    with _open_read(path) as fh:
        header = fh.readline()
        if [t.strip() for t in header.strip().split(",")] != _HEADER:
            raise T3ParseError(f"{path}: line 1: expected header i,j,k,value")
        for no, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = [t.strip() for t in line.split(",")]
            if len(parts) != 4:
                raise T3ParseError(f"{path}: line {no}: expected 4 fields, "
                                   f"got {len(parts)}")
            try:
                i, j, k = int(parts[0]), int(parts[1]), int(parts[2])
            except ValueError:
                raise T3ParseError(f"{path}: line {no}: indices must be "
                                   "integers")
            if min(i, j, k) < 1:
                raise T3ParseError(f"{path}: line {no}: indices are 1-based")
            if parts[3] == "NA":
                v = np.nan
            else:
                try:
                    v = float(parts[3])
                except ValueError:
                    raise T3ParseError(f"{path}: line {no}: bad value "
                                       f"{parts[3]!r}")
            entries.append((no, i, j, k, v))
    if dims is None:
        if not entries:
            raise T3ParseError(f"{path}: no cells and no dims sidecar")
        dims = (max(e[1] for e in entries), max(e[2] for e in entries),
                max(e[3] for e in entries))
    values = np.full(dims, np.nan)
    seen = np.zeros(dims, dtype=bool)
    for no, i, j, k, v in entries:
        if i > dims[0] or j > dims[1] or k > dims[2]:
            raise T3ParseError(f"{path}: line {no}: index ({i},{j},{k}) "
                               f"outside dims {dims}")
        if seen[i - 1, j - 1, k - 1]:
            raise T3ParseError(f"{path}: line {no}: duplicate cell "
                               f"({i},{j},{k})")
        seen[i - 1, j - 1, k - 1] = True
        values[i - 1, j - 1, k - 1] = v
    return Tensor3.from_array(values)


def write_t3(path, t):
    """Write a :class:`Tensor3` as a .t3 file plus its dims sidecar.

    Every cell is listed (missing ones as NA), so the table has I*J*K
    data lines in (i, j, k) nested order.
    """
    i_dim, j_dim, k_dim = t.dims
    with _open_write(path) as fh:
        fh.write("i,j,k,value\n")
        for i in range(i_dim):
            for j in range(j_dim):
                row = t.values[i, j]
                obs = t.mask[i, j]
                for k in range(k_dim):
                    tok = _fmt(row[k]) if obs[k] else "NA"
                    fh.write(f"{i + 1},{j + 1},{k + 1},{tok}\n")
    with open(_sidecar_path(path), "w", encoding="utf-8", newline="") as fh:
        json.dump({"I": i_dim, "J": j_dim, "K": k_dim}, fh, sort_keys=True)
        fh.write("\n")


def read_matrix_csv(path):
    """Read a headerless CSV of numbers into a 2-d array; NA becomes NaN."""
    rows = []
    with _open_read(path) as fh:
        for no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            vals = []
            for tok in line.split(","):
                tok = tok.strip()
                if tok in ("NA", ""):
                    vals.append(np.nan)
                    continue
                try:
                    vals.append(float(tok))
                except ValueError:
                    raise T3ParseError(f"{path}: line {no}: bad value "
                                       f"{tok!r}")
            if rows and len(vals) != len(rows[0]):
                raise T3ParseError(f"{path}: line {no}: expected "
                                   f"{len(rows[0])} fields, got {len(vals)}")
            rows.append(vals)
    if not rows:
        raise T3ParseError(f"{path}: empty matrix")
    return np.asarray(rows, dtype=float)


def write_matrix_csv(path, a):
    """Write a 2-d array as headerless CSV with 17 significant digits."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    with _open_write(path) as fh:
        for row in a:
            fh.write(",".join(_fmt(v) for v in row))
            fh.write("\n")
