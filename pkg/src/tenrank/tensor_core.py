"""Dense tensor containers and mode-wise linear algebra.

Tensors are plain :class:`numpy.ndarray` objects of shape ``(d_1, ..., d_K)``.
Whenever a tensor is flattened (unfoldings, the TFMS file format) the first
mode varies fastest, i.e. Fortran order.  With that convention the mode-1
unfolding of a Fortran-contiguous array is a view.

A :class:`TensorSeries` stacks ``T`` observations along a leading time axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAX_ORDER = 8


def _check_mode(ndim: int, k: int) -> None:
    if not 0 <= k < ndim:
        raise ValueError(f"mode index {k} out of range for an order-{ndim} tensor")


def mode_unfold(x: np.ndarray, k: int) -> np.ndarray:
    """Mode-``k`` unfolding (0-based ``k``) into a ``d_k x prod(d_j, j != k)`` matrix.

    Columns enumerate the remaining modes in ascending order with the
    lowest-numbered remaining mode varying fastest.
    """
    x = np.asarray(x)
    _check_mode(x.ndim, k)
    return np.reshape(np.moveaxis(x, k, 0), (x.shape[k], -1), order="F")


def mode_refold(m: np.ndarray, k: int, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`mode_unfold` for a tensor of shape ``dims``."""
    m = np.asarray(m)
    dims = tuple(int(d) for d in dims)
    _check_mode(len(dims), k)
    rest = tuple(d for j, d in enumerate(dims) if j != k)
    if m.ndim != 2 or m.shape != (dims[k], int(np.prod(rest, dtype=np.int64))):
        raise ValueError(f"matrix of shape {m.shape} cannot be refolded along mode {k} into {dims}")
    return np.moveaxis(np.reshape(m, (dims[k],) + rest, order="F"), 0, k)


def mode_product(x: np.ndarray, u: np.ndarray, k: int) -> np.ndarray:
    """k-mode product ``x ×_k u`` with ``u`` of shape ``(d_k', d_k)``."""
    x = np.asarray(x)
    u = np.asarray(u)
    _check_mode(x.ndim, k)
    if u.ndim != 2 or u.shape[1] != x.shape[k]:
        raise ValueError(f"matrix of shape {u.shape} does not act on mode {k} of size {x.shape[k]}")
    y = np.tensordot(u, x, axes=(1, k))
    return np.moveaxis(y, 0, k)


def outer_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Tensor product: result indexed by ``(i_1..i_K, j_1..j_N)``."""
    return np.multiply.outer(np.asarray(a), np.asarray(b))


def symmetric_sqrt(s: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Symmetric square root of a PSD matrix by eigendecomposition.

    Eigenvalues in ``[-tol, 0)`` are clamped to zero; anything more negative
    raises.
    """
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("symmetric_sqrt needs a square matrix")
    scale = max(np.max(np.abs(s)), 1.0)
    if np.max(np.abs(s - s.T)) > 1e-12 * scale:
        raise ValueError("symmetric_sqrt needs a symmetric matrix")
    w, v = np.linalg.eigh(s)
    if w.size and w.min() < -tol:
        raise ValueError(f"matrix is not PSD (eigenvalue {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    r = (v * np.sqrt(w)) @ v.T
    return 0.5 * (r + r.T)


@dataclass(frozen=True)
class TensorSeries:
    """``T`` observations of a common-shape tensor, time on axis 0."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim < 2:
            raise ValueError("a tensor series needs a time axis and at least one mode")
        if data.ndim - 1 > MAX_ORDER:
            raise ValueError(f"tensors of order > {MAX_ORDER} are not supported")
        if data.shape[0] < 2:
            raise ValueError("a tensor series needs T >= 2 observations")
        if min(data.shape[1:]) < 1:
            raise ValueError("every mode dimension must be >= 1")
        object.__setattr__(self, "data", data)

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape[1:]

    @property
    def order(self) -> int:
        return self.data.ndim - 1

    def __len__(self) -> int:
        return self.T

    def __getitem__(self, t):
        return self.data[t]

    def subseries(self, T: int | None = None, dims: Sequence[int] | None = None) -> "TensorSeries":
        """First ``T`` time points and the leading ``dims`` coordinates per mode."""
        T = self.T if T is None else T
        dims = self.dims if dims is None else tuple(dims)
        if len(dims) != self.order:
            raise ValueError("dims must have one entry per mode")
        if not 2 <= T <= self.T or any(not 1 <= d <= D for d, D in zip(dims, self.dims)):
            raise ValueError(f"subsample ({T}, {dims}) does not fit in ({self.T}, {self.dims})")
        idx = (slice(0, T),) + tuple(slice(0, d) for d in dims)
        return TensorSeries(self.data[idx])


def as_array(series) -> np.ndarray:
    """Return the ``(T, d_1, ..., d_K)`` array behind a series-like input."""
    if isinstance(series, TensorSeries):
        return series.data
    return TensorSeries(series).data
