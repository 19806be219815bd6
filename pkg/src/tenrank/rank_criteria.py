"""Information-criterion (IC) and eigen-ratio (ER) rank selection.

IC picks ``argmin_{0<=m<=m*} sum_{j>m} lambda_j + m * g`` and ER picks
``argmin_{1<=m<=m*} (lambda_{m+1} + h) / (lambda_m + h)``.  Ties go to the
smallest ``m``.  The penalty families ``g_{k,1..5}`` and ``h_{k,1..5}`` are
implemented by :func:`penalty_g` and :func:`penalty_h`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .moment_stats import EigenSpectrum, moment, spectrum
from .tensor_core import TensorSeries

IC = "IC"
ER = "ER"
CRITERIA = (IC, ER)

DEFAULT_MSTAR_CAP = 20


@dataclass(frozen=True)
class PenaltySpec:
    criterion: str = IC
    variant: int = 2
    nu: float = 0.0
    c_mult: float = 1.0
    c0: float = 0.1

    def __post_init__(self):
        crit = self.criterion.upper()
        if crit not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")
        object.__setattr__(self, "criterion", crit)
        if self.variant not in (1, 2, 3, 4, 5):
            raise ValueError("penalty variant must be in 1..5")
        if not self.nu < 1:
            raise ValueError("nu must be < 1")
        if self.c_mult < 0 or self.c0 <= 0:
            raise ValueError("c_mult must be non-negative and c0 positive")

    @property
    def label(self) -> str:
        return f"{self.criterion}{self.variant}"

    def value(self, dims: Sequence[int], T: int, h0: int, k: int) -> float:
        if self.criterion == IC:
            return penalty_g(self.variant, dims, T, h0, nu=self.nu, k=k, c_mult=self.c_mult)
        return penalty_h(self.variant, dims, T, h0, k=k, c0=self.c0)


@dataclass(frozen=True)
class SelectionResult:
    rank: int
    objective_curve: np.ndarray
    penalty_value: float


def default_m_star(dk: int, cap: int = DEFAULT_MSTAR_CAP) -> int:
    """``floor(d_k / 2)`` capped at ``cap``, and at least 1."""
    return max(1, min(dk // 2, cap))


def _log_checked(arg: float) -> float:
    if arg <= 1:
        raise ValueError(f"degenerate sizes: penalty log argument {arg:.4g} <= 1")
    return math.log(arg)


def penalty_g(variant: int, dims: Sequence[int], T: int, h0: int = 1, nu: float = 0.0,
              k: int | None = None, c_mult: float = 1.0) -> float:
    """IC penalty ``c_mult * g_{k,variant}(d, T)`` with ``d = prod(dims)``.

    Only variant 5 depends on the mode ``k`` (through ``log min(d_k, T)``).
    """
    d = math.prod(int(x) for x in dims)
    if d < 2 or T < 2:
        raise ValueError("penalty needs d >= 2 and T >= 2")
    scale = h0 * float(d) ** (2 - 2 * nu)
    if variant == 1:
        val = scale / T * _log_checked(d * T / (d + T))
    elif variant == 2:
        val = scale * (1 / T + 1 / d) * _log_checked(d * T / (d + T))
    elif variant == 3:
        val = scale / T * _log_checked(min(d, T))
    elif variant == 4:
        val = scale * (1 / T + 1 / d) * _log_checked(min(d, T))
    elif variant == 5:
        if k is None:
            raise ValueError("IC variant 5 needs the mode index k")
        val = scale * (1 / T + 1 / d) * _log_checked(min(int(dims[k]), T))
    else:
        raise ValueError("penalty variant must be in 1..5")
    return c_mult * val


def penalty_h(variant: int, dims: Sequence[int], T: int, h0: int = 1,
              k: int | None = None, c0: float = 0.1) -> float:
    """ER penalty ``h_{k,variant}(d, T)``; variant 1 is the constant ``c0 * h0``."""
    d = float(math.prod(int(x) for x in dims))
    if variant == 1:
        return c0 * h0
    if variant == 2:
        return h0 * d**2 / T**2
    if k is None:
        raise ValueError(f"ER variant {variant} needs the mode index k")
    dk = float(dims[k])
    if variant == 3:
        return h0 * d**2 / (T**2 * dk**2)
    if variant == 4:
        return h0 * d**2 / (T**2 * dk**2) + h0 * dk**2 / T**2
    if variant == 5:
        return h0 * d**2 / (T**2 * dk) + h0 * d * dk / T**2
    raise ValueError("penalty variant must be in 1..5")


def _values(spec) -> np.ndarray:
    vals = np.asarray(spec.values if isinstance(spec, EigenSpectrum) else spec, dtype=float)
    if vals.size == 0:
        raise ValueError("empty spectrum")
    return vals


def ic_select(spec, g: float, m_star: int) -> SelectionResult:
    """IC rank: minimise tail eigenvalue mass plus ``m * g`` over ``0..m_star``."""
    vals = _values(spec)
    if not 0 < m_star < vals.size:
        raise ValueError(f"m_star={m_star} must lie in (0, {vals.size})")
    if g < 0:
        raise ValueError("IC penalty must be non-negative")
    # tail[m] = sum_{j>m} lambda_j, summed from the small end for accuracy
    tail = np.concatenate([np.cumsum(vals[::-1])[::-1], [0.0]])
    m = np.arange(m_star + 1)
    cost = tail[m] + m * g
    return SelectionResult(int(np.argmin(cost)), cost, float(g))


def er_select(spec, h: float, m_star: int) -> SelectionResult:
    """ER rank: minimise ``(lambda_{m+1}+h)/(lambda_m+h)`` over ``1..m_star``."""
    vals = _values(spec)
    if not 1 <= m_star < vals.size:
        raise ValueError(f"m_star={m_star} must lie in [1, {vals.size})")
    if h <= 0:
        raise ValueError("ER penalty must be positive")
    ratios = (vals[1 : m_star + 1] + h) / (vals[:m_star] + h)
    return SelectionResult(int(np.argmin(ratios)) + 1, ratios, float(h))


def select(spec, penalty: PenaltySpec, dims: Sequence[int], T: int, h0: int, k: int,
           m_star: int) -> SelectionResult:
    """Apply ``penalty`` (evaluated at ``dims``, ``T``) to a spectrum."""
    val = penalty.value(dims, T, h0, k)
    if penalty.criterion == IC:
        return ic_select(spec, val, m_star)
    return er_select(spec, val, m_star)


# ---------------------------------------------------------------------------
# robustified IC constant


@dataclass
class TuneResult:
    """Stability scan of the IC multiplier ``c`` for one mode.

    ``ranks[i, j]`` is the rank chosen with ``c_grid[i]`` on subsample ``j``;
    ``stability[i]`` is the variance of ``ranks[i, :]`` over subsamples.
    """

    mode: int
    c_grid: np.ndarray
    schedule: list[tuple[tuple[int, ...], int]]
    ranks: np.ndarray
    stability: np.ndarray
    m_star: int
    c_hat: float | None
    rank: int | None
    flagged: bool = False
    intervals: list[tuple[int, int]] = field(default_factory=list)


def default_schedule(dims: Sequence[int], T: int, J: int = 10,
                     start: float = 0.5) -> list[tuple[tuple[int, ...], int]]:
    """Nested subsamples growing linearly from ``start * d_k`` to ``d_k`` with ``T_j = T``.

    ``d_{k,j} = round(d_k (start + (1 - start) j / J))`` for ``j = 1..J``,
    never below 2.  Very small leading subsamples carry little information
    about the rank and tend to break otherwise stable runs.
    """
    if not 0 < start <= 1:
        raise ValueError("start must lie in (0, 1]")
    return [
        (tuple(max(2, int(round(d * (start + (1 - start) * j / J)))) for d in dims), T)
        for j in range(1, J + 1)
    ]


def default_c_grid() -> np.ndarray:
    """``0, 0.05, .., 3``.  ``c = 0`` removes the penalty, so the grid opens on the ``m*`` run."""
    return np.round(np.arange(0.0, 3.0001, 0.05), 10)


def stability_intervals(stable: np.ndarray, labels: np.ndarray | None = None) -> list[tuple[int, int]]:
    """Maximal runs ``[start, stop)`` of ``True``; a change in ``labels`` also ends a run."""
    runs, start = [], None
    for i, s in enumerate(stable):
        if start is not None and (not s or (labels is not None and labels[i] != labels[start])):
            runs.append((start, i))
            start = None
        if s and start is None:
            start = i
    if start is not None:
        runs.append((start, len(stable)))
    return runs


def choose_c(c_grid: np.ndarray, ranks: np.ndarray, m_star: int,
             tol: float = 1e-12) -> tuple[int | None, np.ndarray, list[tuple[int, int]]]:
    """Index of the smallest ``c`` in the second stability interval.

    The leading run of ``c`` values whose full-sample rank equals ``m_star``
    is skipped; the first zero-variance run after it is selected.
    """
    ranks = np.asarray(ranks, dtype=float)
    stability = ranks.var(axis=1)
    full = ranks[:, -1]
    start = 0
    while start < len(c_grid) and full[start] == m_star:
        start += 1
    stable = stability < tol
    stable[:start] = False
    runs = stability_intervals(stable, full)
    if not runs:
        return None, stability, runs
    return runs[0][0], stability, runs


def tune_c(series, k: int, method: str = "TIPUP", variant: int = 2,
           c_grid: Sequence[float] | None = None,
           schedule: Sequence[tuple[Sequence[int], int]] | None = None,
           h0: int = 1, nu: float = 0.0, m_star: int | None = None,
           estimator=None) -> TuneResult:
    """Choose the IC multiplier by subsample stability of the selected rank.

    ``estimator(subseries, penalty) -> rank`` overrides the default
    non-iterative estimator (``method`` statistic on mode ``k``), e.g. to
    run the iterative procedure on each subsample.
    """
    series = series if isinstance(series, TensorSeries) else TensorSeries(series)
    dims, T = series.dims, series.T
    if c_grid is None:
        c_grid = default_c_grid()
    c_grid = np.asarray(c_grid, dtype=float)
    if c_grid.size == 0 or np.any(c_grid < 0) or np.any(np.diff(c_grid) <= 0):
        raise ValueError("c_grid must be non-negative and strictly ascending")
    schedule = default_schedule(dims, T) if schedule is None else [(tuple(d), int(t)) for d, t in schedule]
    if tuple(schedule[-1][0]) != tuple(dims) or schedule[-1][1] != T:
        raise ValueError("the last subsample must be the full sample")
    if m_star is None:
        m_star = default_m_star(dims[k])

    ranks = np.zeros((c_grid.size, len(schedule)), dtype=int)
    for j, (sub_dims, sub_T) in enumerate(schedule):
        sub = series.subseries(sub_T, sub_dims)
        m_j = min(m_star, sub_dims[k] - 1)
        if estimator is None:
            spec = spectrum(moment(sub, k, h0, method))
            base = penalty_g(variant, sub_dims, sub_T, h0, nu=nu, k=k)
            for i, c in enumerate(c_grid):
                ranks[i, j] = ic_select(spec, c * base, m_j).rank
        else:
            for i, c in enumerate(c_grid):
                pen = PenaltySpec(IC, variant, nu=nu, c_mult=float(c))
                ranks[i, j] = estimator(sub, pen)

    idx, stability, runs = choose_c(c_grid, ranks, m_star)
    if c_grid.size == 1:
        warnings.warn("single-value c grid: returning it without a stability scan", stacklevel=2)
        return TuneResult(k, c_grid, list(schedule), ranks, stability, m_star,
                          float(c_grid[0]), int(ranks[0, -1]), False, runs)
    if idx is None:
        return TuneResult(k, c_grid, list(schedule), ranks, stability, m_star, None, None, True, runs)
    return TuneResult(k, c_grid, list(schedule), ranks, stability, m_star,
                      float(c_grid[idx]), int(ranks[idx, -1]), False, runs)
