"""Reading and writing tensor series.

Binary TFMS layout (little endian)::

    b"TFMS"  u32 version=1  u32 K  u32 T  K x u32 dims  T*prod(dims) x f64

Each observation is stored with the first mode varying fastest.

CSV comes in two forms.  Long form has the header ``t,i1,...,iK,value`` with
1-based indices and one row per cell.  Wide form starts with a comment line
``# dims: d1,d2,...`` followed by the header ``t,v_1,...,v_n`` and one row per
time point, cells again first-mode-fastest.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .tensor_core import TensorSeries

MAGIC = b"TFMS"
VERSION = 1


class InputError(ValueError):
    """Malformed or inconsistent input file."""


def write_tfms(path, series) -> None:
    x = series.data if isinstance(series, TensorSeries) else np.asarray(series, dtype=float)
    T, dims = x.shape[0], x.shape[1:]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack(f"<III{len(dims)}I", VERSION, len(dims), T, *dims))
        for t in range(T):
            fh.write(np.asarray(x[t], dtype="<f8").ravel(order="F").tobytes())


def read_tfms(path) -> TensorSeries:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise InputError(f"{path}: not a TFMS file")
    if len(raw) < 16:
        raise InputError(f"{path}: truncated header")
    version, K, T = struct.unpack_from("<III", raw, 4)
    if version != VERSION:
        raise InputError(f"{path}: unsupported TFMS version {version}")
    off = 16 + 4 * K
    if len(raw) < off:
        raise InputError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{K}I", raw, 16)
    n = int(np.prod(dims, dtype=np.int64))
    body = np.frombuffer(raw, dtype="<f8", offset=off)
    if body.size != T * n:
        raise InputError(f"{path}: expected {T * n} values, found {body.size}")
    x = body.reshape((T, n)).astype(float)
    data = np.stack([np.reshape(x[t], dims, order="F") for t in range(T)]) if T else x
    return TensorSeries(data)


def _num(value: str, where: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise InputError(f"{where}: not a number: {value!r}") from None


def ingest_csv(path, dims=None) -> TensorSeries:
    """Read a long- or wide-form CSV into a dense series.  No imputation."""
    path = Path(path)
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    meta_dims = None
    body = []
    for line in lines:
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            key, _, val = s[1:].partition(":")
            if key.strip().lower() == "dims":
                try:
                    meta_dims = tuple(int(v) for v in val.split(","))
                except ValueError:
                    raise InputError(f"{path}: cannot parse dims line {s!r}") from None
            continue
        body.append(line)
    rows = list(csv.reader(body))
    if not rows:
        raise InputError(f"{path}: empty file")
    header = [h.strip().lower() for h in rows[0]]
    if header[0] != "t":
        raise InputError(f"{path}: first column must be 't'")
    if header[-1] == "value":
        return _long_form(path, header, rows[1:])
    dims = tuple(dims) if dims is not None else meta_dims
    if dims is None:
        raise InputError(f"{path}: wide-form CSV needs a '# dims:' line")
    return _wide_form(path, header, rows[1:], dims)


def _long_form(path, header, rows) -> TensorSeries:
    K = len(header) - 2
    if K < 1:
        raise InputError(f"{path}: long form needs at least one index column")
    cells = {}
    for n, row in enumerate(rows, start=2):
        if len(row) != K + 2:
            raise InputError(f"{path}:{n}: expected {K + 2} fields, got {len(row)}")
        try:
            key = (int(row[0]),) + tuple(int(v) for v in row[1:-1])
        except ValueError:
            raise InputError(f"{path}:{n}: time and index columns must be integers") from None
        if key in cells:
            raise InputError(f"{path}:{n}: duplicate cell t={key[0]} index={key[1:]}")
        cells[key] = _num(row[-1], f"{path}:{n}")
    times = sorted({k[0] for k in cells})
    dims = tuple(max(k[j + 1] for k in cells) for j in range(K))
    data = np.empty((len(times),) + dims)
    tpos = {t: i for i, t in enumerate(times)}
    seen = np.zeros(data.shape, dtype=bool)
    for key, v in cells.items():
        idx = (tpos[key[0]],) + tuple(i - 1 for i in key[1:])
        if min(idx[1:]) < 0:
            raise InputError(f"{path}: indices are 1-based, got {key[1:]}")
        data[idx] = v
        seen[idx] = True
    if not seen.all():
        miss = np.argwhere(~seen)[0]
        raise InputError(
            f"{path}: missing cell t={times[miss[0]]} index={tuple(int(i) + 1 for i in miss[1:])}"
        )
    return TensorSeries(data)


def _wide_form(path, header, rows, dims) -> TensorSeries:
    n = int(np.prod(dims))
    if len(header) != n + 1:
        raise InputError(f"{path}: header has {len(header) - 1} value columns, dims need {n}")
    obs = []
    for i, row in enumerate(rows, start=2):
        if len(row) != n + 1:
            raise InputError(f"{path}:{i}: expected {n + 1} fields, got {len(row)}")
        vals = []
        for j, v in enumerate(row[1:]):
            if v.strip() == "":
                idx = np.unravel_index(j, dims, order="F")
                raise InputError(
                    f"{path}:{i}: missing cell t={row[0]} index={tuple(int(a) + 1 for a in idx)}"
                )
            vals.append(_num(v, f"{path}:{i}"))
        obs.append(np.reshape(np.array(vals), dims, order="F"))
    return TensorSeries(np.stack(obs))


def write_csv_long(path, series) -> None:
    x = series.data if isinstance(series, TensorSeries) else np.asarray(series)
    K = x.ndim - 1
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"i{j + 1}" for j in range(K)] + ["value"])
        for t in range(x.shape[0]):
            for idx in np.ndindex(*x.shape[1:]):
                w.writerow([t + 1] + [i + 1 for i in idx] + [repr(float(x[(t,) + idx]))])


def write_csv_wide(path, series) -> None:
    x = series.data if isinstance(series, TensorSeries) else np.asarray(series)
    dims = x.shape[1:]
    n = int(np.prod(dims))
    with open(path, "w", newline="") as fh:
        fh.write("# dims: " + ",".join(str(d) for d in dims) + "\n")
        w = csv.writer(fh)
        w.writerow(["t"] + [f"v_{j + 1}" for j in range(n)])
        for t in range(x.shape[0]):
            w.writerow([t + 1] + [repr(float(v)) for v in x[t].ravel(order="F")])


def read_series(path) -> TensorSeries:
    """Dispatch on content: TFMS magic bytes, otherwise CSV.  Non-finite values are rejected."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    series = read_tfms(path) if head == MAGIC else ingest_csv(path)
    bad = np.argwhere(~np.isfinite(series.data))
    if bad.size:
        t, *idx = (int(i) for i in bad[0])
        raise InputError(f"{path}: non-finite value at t={t + 1} index={tuple(i + 1 for i in idx)}")
    return series
