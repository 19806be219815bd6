"""Iterative TOPUP / TIPUP rank estimation (iTOPUP, iTIPUP).

Each sweep visits the modes in ascending order.  Mode ``k`` is re-estimated
from the series projected onto the current subspace estimates of every other
mode, using the bases already refreshed in this sweep for modes ``< k`` and
the previous sweep's bases for modes ``> k``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .moment_stats import TIPUP, EigenSpectrum, leading_subspace, moment, spectrum
from .rank_criteria import PenaltySpec, default_m_star, select
from .tensor_core import as_array, mode_product

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IterOptions:
    method: str = TIPUP
    penalty: PenaltySpec | Sequence[PenaltySpec] = field(default_factory=PenaltySpec)
    h0: int = 1
    max_iter: int = 50
    subspace_tol: float = 1e-6
    initial_inflation: bool = True
    fixed_initial_ranks: tuple[int, ...] | None = None
    m_star: int | Sequence[int] | None = None
    m_star_cap: int = 20
    # stop on rank agreement alone, without waiting for the subspaces
    rank_only: bool = False
    # dims fed to the penalty during sweeps: "original" (d_1, .., d_K) or
    # "projected" (r_1, .., d_k, .., r_K)
    penalty_dims: str = "original"
    # "gauss-seidel" projects with bases refreshed earlier in the same sweep;
    # "jacobi" uses the previous sweep's bases for every mode
    sweep: str = "gauss-seidel"

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.h0 < 1:
            raise ValueError("h0 must be >= 1")

    def penalty_for(self, k: int) -> PenaltySpec:
        if isinstance(self.penalty, PenaltySpec):
            return self.penalty
        return self.penalty[k]

    def m_star_for(self, dims: Sequence[int]) -> list[int]:
        if self.m_star is None:
            return [default_m_star(d, self.m_star_cap) for d in dims]
        if np.isscalar(self.m_star):
            return [min(int(self.m_star), d - 1) for d in dims]
        return [int(m) for m in self.m_star]


@dataclass
class IterationState:
    """Snapshot after sweep ``iter`` (``iter == 0`` is the non-iterative start).

    ``selected`` holds the criterion output; ``ranks`` the ranks actually used
    for the bases (inflated at ``iter == 0``, raised to at least 1 later).
    """

    iter: int
    ranks: tuple[int, ...]
    selected: tuple[int, ...]
    bases: list[np.ndarray]
    spectra: list[EigenSpectrum]
    converged: bool = False


@dataclass
class IterResult:
    ranks: tuple[int, ...]
    bases: list[np.ndarray]
    history: list[IterationState]
    converged: bool

    @property
    def n_iter(self) -> int:
        return len(self.history) - 1

    @property
    def initial(self) -> tuple[int, ...]:
        return self.history[0].selected

    @property
    def one_step(self) -> tuple[int, ...]:
        return self.history[1].selected


def project_except(x_t: np.ndarray, bases: Sequence[np.ndarray], k: int) -> np.ndarray:
    """``x_t`` multiplied by ``U_j^T`` along every mode ``j != k``."""
    z = np.asarray(x_t)
    if len(bases) != z.ndim:
        raise ValueError("need one basis per mode")
    for j, u in enumerate(bases):
        if j != k:
            z = mode_product(z, u.T, j)
    return z


def project_series(x: np.ndarray, bases: Sequence[np.ndarray], k: int) -> np.ndarray:
    """:func:`project_except` applied to every observation of a ``(T, ...)`` array."""
    z = x
    for j, u in enumerate(bases):
        if j == k:
            continue
        if u.shape[0] != z.shape[j + 1]:
            raise ValueError(f"basis for mode {j} has {u.shape[0]} rows, data has {z.shape[j + 1]}")
        z = np.moveaxis(np.tensordot(z, u, axes=(j + 1, 0)), -1, j + 1)
    return z


def projected_dims(dims: Sequence[int], ranks: Sequence[int], k: int) -> tuple[int, ...]:
    """Dimensions at which penalties are evaluated for mode ``k`` during iteration."""
    return tuple(d if j == k else int(r) for j, (d, r) in enumerate(zip(dims, ranks)))


def penalty_dims(dims: Sequence[int], zdims: Sequence[int], mode: str) -> tuple[int, ...]:
    """Dims handed to the penalty functions during a sweep."""
    if mode == "original":
        return tuple(dims)
    if mode == "projected":
        return tuple(zdims)
    raise ValueError(f"unknown penalty_dims {mode!r}")


def inflate(r: int) -> int:
    return min(2 * r, r + 3)


def _projector_gap(u: np.ndarray, v: np.ndarray) -> float:
    return float(np.linalg.norm(u @ u.T - v @ v.T, 2))


def initial_state(series, opts: IterOptions, cache: dict | None = None) -> IterationState:
    """Non-iterative estimates per mode and the (inflated) starting ranks.

    ``cache`` may be shared between calls on the same series to reuse the
    statistics of the unprojected data.
    """
    x = as_array(series)
    T, dims = x.shape[0], x.shape[1:]
    m_stars = opts.m_star_for(dims)
    ranks, selected, bases, spectra = [], [], [], []
    for k in range(len(dims)):
        key = (opts.method.upper(), opts.h0, k)
        if cache is not None and key in cache:
            mm = cache[key]
        else:
            mm = moment(x, k, opts.h0, opts.method)
            if cache is not None:
                cache[key] = mm
        spec = spectrum(mm)
        raw = select(spec, opts.penalty_for(k), dims, T, opts.h0, k, m_stars[k]).rank
        if opts.fixed_initial_ranks is not None:
            r = int(opts.fixed_initial_ranks[k])
        else:
            r = inflate(raw) if opts.initial_inflation else raw
            r = min(max(r, 1), m_stars[k])
        selected.append(raw)
        ranks.append(r)
        spectra.append(spec)
        bases.append(leading_subspace(mm, r))
    return IterationState(0, tuple(ranks), tuple(selected), bases, spectra)


def initial_ranks(series, opts: IterOptions) -> tuple[int, ...]:
    return initial_state(series, opts).ranks


def iterate(series, opts: IterOptions = IterOptions(), cache: dict | None = None) -> IterResult:
    """Alternate projection and re-estimation until ranks and subspaces settle."""
    x = as_array(series)
    T, dims = x.shape[0], x.shape[1:]
    if min(dims) < 2:
        raise ValueError("every mode needs dimension >= 2")
    if T <= opts.h0:
        raise ValueError("series too short for the requested h0")
    K = len(dims)
    m_stars = opts.m_star_for(dims)

    state = initial_state(x, opts, cache)
    history = [state]
    for i in range(1, opts.max_iter + 1):
        bases = list(state.bases)
        ranks = list(state.ranks)
        selected, spectra = [], []
        for k in range(K):
            proj = bases if opts.sweep == "gauss-seidel" else state.bases
            z = project_series(x, proj, k) if K > 1 else x
            zdims = z.shape[1:]
            assert z.shape[1:] == zdims
            mm = moment(z, k, opts.h0, opts.method)
            spec = spectrum(mm)
            pdims = penalty_dims(dims, zdims, opts.penalty_dims)
            raw = select(spec, opts.penalty_for(k), pdims, T, opts.h0, k, m_stars[k]).rank
            if raw == 0:
                log.warning("mode %d: rank 0 selected at sweep %d; projecting with rank 1", k, i)
            ranks[k] = max(raw, 1)
            bases[k] = leading_subspace(mm, ranks[k])
            selected.append(raw)
            spectra.append(spec)
        same_ranks = tuple(ranks) == state.ranks
        if opts.rank_only:
            converged = same_ranks
        else:
            converged = same_ranks and max(
                _projector_gap(b, p) for b, p in zip(bases, state.bases)
            ) < opts.subspace_tol
        state = IterationState(i, tuple(ranks), tuple(selected), bases, spectra, converged)
        history.append(state)
        if converged:
            break
    return IterResult(state.selected, state.bases, history, state.converged)


def one_step(series, opts: IterOptions = IterOptions()) -> IterResult:
    """A single projection sweep after the non-iterative start."""
    return iterate(series, replace(opts, max_iter=1))
