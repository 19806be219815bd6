"""Lagged auto-cross-moment statistics (TOPUP / TIPUP) and their spectra.

For mode ``k`` (0-based) and lags ``h = 1..h0`` the two statistics are

* TOPUP: ``mat_1( sum_t mat_k(X_{t-h}) ⊗ mat_k(X_t) / (T-h) )``, each lag
  block being ``d_k x (d_{-k} d_k d_{-k})``;
* TIPUP: ``sum_t mat_k(X_{t-h}) mat_k(X_t)^T / (T-h)``, each block ``d_k x d_k``;

with the lag blocks concatenated left to right.  Their Gram matrices
``stat @ stat.T`` are the symmetric PSD matrices whose eigenvalues feed the
rank criteria.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np

from .tensor_core import as_array

TOPUP = "TOPUP"
TIPUP = "TIPUP"
METHODS = (TOPUP, TIPUP)

#: Largest TOPUP statistic (in entries) that is materialised; above it only the
#: Gram matrix is accumulated.
DEFAULT_MAX_ENTRIES = 10**8

NEG_EIG_TOL = 1e-10


def _method(method: str) -> str:
    m = method.upper()
    if m not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected TOPUP or TIPUP")
    return m


def unfold_series(x: np.ndarray, k: int) -> np.ndarray:
    """Stack the mode-``k`` unfoldings of every observation: ``(T, d_k, d_{-k})``."""
    K = x.ndim - 1
    if not 0 <= k < K:
        raise ValueError(f"mode index {k} out of range for order-{K} tensors")
    others = [j + 1 for j in range(K) if j != k]
    # C-order reshape over reversed axes == Fortran order over ascending axes
    perm = (0, k + 1) + tuple(reversed(others))
    return np.ascontiguousarray(np.transpose(x, perm)).reshape(x.shape[0], x.shape[k + 1], -1)


def _check_lags(T: int, h0: int) -> None:
    if h0 < 1:
        raise ValueError("h0 must be >= 1")
    if h0 >= T:
        raise ValueError(f"h0={h0} must be smaller than the series length T={T}")


def _topup_block(u: np.ndarray, h: int) -> np.ndarray:
    T, dk, dmk = u.shape
    a, b = u[:-h], u[h:]
    o = np.tensordot(a, b, axes=(0, 0)) / (T - h)  # (i, a, j, b)
    # mode-1 unfolding of the order-4 block: column index a + dmk*(j + dk*b)
    return o.transpose(0, 3, 2, 1).reshape(dk, -1)


def _topup_block_gram(u: np.ndarray, h: int) -> np.ndarray:
    """``B_h B_h^T`` for the TOPUP lag block without forming ``B_h``."""
    T, dk, dmk = u.shape
    a, b = u[:-h], u[h:]
    n = T - h
    bf = b.reshape(n, -1)
    kern = bf @ bf.T  # <mat(X_t), mat(X_s)>_F
    c = np.tensordot(kern, a, axes=(1, 0))
    a2 = a.transpose(1, 0, 2).reshape(dk, -1)
    c2 = c.transpose(1, 0, 2).reshape(dk, -1)
    g = a2 @ c2.T / n**2
    return 0.5 * (g + g.T)


def _tipup_block(u: np.ndarray, h: int) -> np.ndarray:
    T, dk, _ = u.shape
    a = u[:-h].transpose(1, 0, 2).reshape(dk, -1)
    b = u[h:].transpose(1, 0, 2).reshape(dk, -1)
    return a @ b.T / (T - h)


@dataclass
class MomentMatrix:
    """A TOPUP or TIPUP statistic for one mode.

    ``stat`` is ``None`` when the TOPUP statistic was too large to
    materialise; ``gram`` is then accumulated lag block by lag block.
    """

    mode: int
    method: str
    h0: int
    stat: np.ndarray | None
    _gram: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        if self.stat is not None:
            return self.stat.shape[0]
        return self._gram.shape[0]

    @property
    def gram(self) -> np.ndarray:
        if self._gram is None:
            g = self.stat @ self.stat.T
            self._gram = 0.5 * (g + g.T)
        return self._gram

    @cached_property
    def _decomposition(self) -> tuple[np.ndarray, np.ndarray]:
        if self.stat is not None:
            a = self.stat
            if a.shape[1] > 2 * a.shape[0]:
                # stat = R^T Q^T shares singular values and left vectors with R^T
                a = np.linalg.qr(a.T, mode="r").T
            u, s, _ = np.linalg.svd(a, full_matrices=True)
            vals = np.zeros(self.dim)
            vals[: s.size] = s**2
            return vals, u
        w, v = np.linalg.eigh(self.gram)
        w, v = w[::-1], v[:, ::-1]
        top = max(w[0], 0.0) if w.size else 0.0
        if w.size and w[-1] < -NEG_EIG_TOL * max(top, np.finfo(float).tiny):
            raise np.linalg.LinAlgError(
                f"Gram matrix has a negative eigenvalue {w[-1]:.3e} beyond round-off"
            )
        return np.clip(w, 0.0, None), v


@dataclass(frozen=True)
class EigenSpectrum:
    mode: int
    method: str
    h0: int
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


def _moment(series, k: int, h0: int, method: str, max_entries: int = DEFAULT_MAX_ENTRIES) -> MomentMatrix:
    method = _method(method)
    x = as_array(series)
    _check_lags(x.shape[0], h0)
    u = unfold_series(x, k)
    _, dk, dmk = u.shape
    if method == TIPUP:
        stat = np.hstack([_tipup_block(u, h) for h in range(1, h0 + 1)])
        return MomentMatrix(k, method, h0, stat)
    if dk * dmk * dk * dmk * h0 <= max_entries:
        stat = np.hstack([_topup_block(u, h) for h in range(1, h0 + 1)])
        return MomentMatrix(k, method, h0, stat)
    gram = np.zeros((dk, dk))
    for h in range(1, h0 + 1):
        gram += _topup_block_gram(u, h)
    return MomentMatrix(k, method, h0, None, gram)


def topup(series, k: int, h0: int = 1, max_entries: int = DEFAULT_MAX_ENTRIES) -> MomentMatrix:
    """TOPUP statistic of mode ``k`` accumulated over lags ``1..h0``."""
    return _moment(series, k, h0, TOPUP, max_entries)


def tipup(series, k: int, h0: int = 1) -> MomentMatrix:
    """TIPUP statistic of mode ``k`` accumulated over lags ``1..h0``."""
    return _moment(series, k, h0, TIPUP)


def moment(series, k: int, h0: int, method: str, **kwargs) -> MomentMatrix:
    return _moment(series, k, h0, method, **kwargs)


def spectrum(m: MomentMatrix) -> EigenSpectrum:
    """Descending eigenvalues of ``m.gram`` (squared singular values of ``m.stat``)."""
    vals, _ = m._decomposition
    return EigenSpectrum(m.mode, m.method, m.h0, vals.copy())


def leading_subspace(m: MomentMatrix, r: int) -> np.ndarray:
    """Top-``r`` left singular vectors of the statistic, ``d_k x r``."""
    if not 1 <= r <= m.dim:
        raise ValueError(f"subspace rank {r} outside [1, {m.dim}]")
    _, vecs = m._decomposition
    return vecs[:, :r].copy()


def lag_grams(series, k: int, h0: int, method: str) -> list[np.ndarray]:
    """Per-lag Gram contributions ``B_h B_h^T`` for ``h = 1..h0``."""
    method = _method(method)
    x = as_array(series)
    _check_lags(x.shape[0], h0)
    u = unfold_series(x, k)
    out = []
    for h in range(1, h0 + 1):
        if method == TIPUP:
            b = _tipup_block(u, h)
            out.append(b @ b.T)
        else:
            out.append(_topup_block_gram(u, h))
    return out


@dataclass(frozen=True)
class TauRow:
    """Leading singular values of one statistic at one maximal lag."""

    mode: int
    method: str
    h0: int
    sigma: np.ndarray
    lag_block_norm: float

    def normalized(self, power: float = 0.5) -> np.ndarray:
        """``h0**-power * sigma``."""
        return self.sigma * self.h0 ** (-power)

    @property
    def normalized_sq(self) -> np.ndarray:
        """``sigma**2 / h0``, the eigenvalue form."""
        return self.sigma**2 / self.h0


def tau_diagnostic(series, k: int, m_max: int = 3, h0_range: Iterable[int] = (1, 2, 3, 4)) -> list[TauRow]:
    """Singular values of TOPUP and TIPUP across maximal lags ``h0``.

    Diverging patterns of ``h0**-1/2 * sigma_m`` between the two methods
    point at signal cancellation in TIPUP.  ``lag_block_norm`` is the
    Frobenius norm of the Gram contribution of lag ``h0`` alone.
    """
    h0s = sorted(set(int(h) for h in h0_range))
    if not h0s:
        raise ValueError("empty h0 range")
    x = as_array(series)
    _check_lags(x.shape[0], h0s[-1])
    rows = []
    for method in METHODS:
        grams = lag_grams(x, k, h0s[-1], method)
        cum = np.cumsum(grams, axis=0)
        for h0 in h0s:
            w = np.linalg.eigvalsh(cum[h0 - 1])[::-1]
            sigma = np.sqrt(np.clip(w[:m_max], 0.0, None))
            rows.append(TauRow(k, method, h0, sigma, float(np.linalg.norm(grams[h0 - 1]))))
    return rows
