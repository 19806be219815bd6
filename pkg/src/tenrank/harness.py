"""Monte-Carlo experiments, metrics and single-series reports."""

from __future__ import annotations

import logging
import math
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np

from .iterative import IterOptions, initial_state, iterate
from .moment_stats import METHODS, tau_diagnostic
from .rank_criteria import CRITERIA, IC, PenaltySpec, TuneResult, tune_c
from .simgen import ModelSpec, generate, replication_seed
from .tensor_core import TensorSeries, as_array

log = logging.getLogger(__name__)

STAGES = ("initial", "one_step", "final")
SCHEMA_VERSION = 1


def demean(series) -> TensorSeries:
    """Subtract the time-average tensor from every observation."""
    x = as_array(series)
    return TensorSeries(x - x.mean(axis=0))


@dataclass(frozen=True)
class EstimatorSpec:
    method: str = "TIPUP"
    criterion: str = IC
    variant: int = 2
    nu: float = 0.0
    c_mult: float = 1.0
    c0: float = 0.1
    stages: tuple[str, ...] = STAGES

    def __post_init__(self):
        object.__setattr__(self, "method", self.method.upper())
        object.__setattr__(self, "criterion", self.criterion.upper())
        object.__setattr__(self, "stages", tuple(self.stages))
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")
        bad = set(self.stages) - set(STAGES)
        if bad:
            raise ValueError(f"unknown stages {sorted(bad)}")

    @property
    def penalty(self) -> PenaltySpec:
        return PenaltySpec(self.criterion, self.variant, self.nu, self.c_mult, self.c0)

    @property
    def label(self) -> str:
        s = f"{self.criterion}{self.variant}-{self.method}"
        if self.criterion == IC and self.nu:
            s += f"(nu={self.nu:g})"
        if self.c_mult != 1.0:
            s += f"(c={self.c_mult:g})"
        return s

    def options(self, h0: int = 1, m_star=None, **kw) -> IterOptions:
        return IterOptions(self.method, self.penalty, h0=h0, m_star=m_star, **kw)

    @classmethod
    def parse(cls, text: str, stages: Sequence[str] = STAGES) -> "EstimatorSpec":
        """Parse labels like ``IC2-TIPUP`` or ``ER1-TOPUP``."""
        crit, _, method = text.upper().partition("-")
        if len(crit) < 3 or crit[:2] not in CRITERIA or not crit[2:].isdigit():
            raise ValueError(f"cannot parse estimator {text!r}; expected e.g. IC2-TIPUP")
        method = {"TOP": "TOPUP", "TIP": "TIPUP"}.get(method, method)
        return cls(method, crit[:2], int(crit[2:]), stages=tuple(stages))


@dataclass
class ExperimentConfig:
    models: list[ModelSpec]
    estimators: list[EstimatorSpec]
    replications: int = 200
    h0: int = 1
    m_star: int | None = None
    parallelism: int = 1
    seed: int = 1
    demean: bool = True
    outputs: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.estimators:
            raise ValueError("at least one estimator is required")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        """Build from the versioned config document (see README)."""
        version = doc.get("version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported config version {version}")
        models = []
        for cell in doc["cells"]:
            dims_list = cell.get("dims", [[cell.get("d1", 20), cell.get("d2", 20)]])
            T_list = cell.get("T", [300])
            T_list = T_list if isinstance(T_list, list) else [T_list]
            for d1, d2 in dims_list:
                for T in T_list:
                    kw = {k: cell[k] for k in ("noise_offdiag", "noise_scale") if k in cell}
                    if "phi" in cell:
                        kw["phi"] = np.asarray(cell["phi"], dtype=float)
                    models.append(ModelSpec(cell["model"], int(d1), int(d2), int(T), **kw))
        ests = []
        for e in doc["estimators"]:
            e = dict(e)
            if "stages" in e:
                e["stages"] = tuple(e["stages"])
            ests.append(EstimatorSpec(**e))
        return cls(
            models,
            ests,
            replications=int(doc.get("replications", 200)),
            h0=int(doc.get("h0", 1)),
            m_star=doc.get("m_star"),
            parallelism=int(doc.get("parallelism", 1)),
            seed=int(doc.get("seed", 1)),
            demean=bool(doc.get("demean", True)),
            outputs=dict(doc.get("outputs", {})),
        )


@dataclass
class ResultRow:
    model: str
    d1: int
    d2: int
    T: int
    estimator: str
    stage: str
    n: int
    true_ranks: tuple[int, ...]
    proportion_correct: float
    rmse: float
    rmse_per_mode: tuple[float, ...]
    frequencies: dict[tuple[int, ...], float]
    error: str | None = None

    def frequency(self, ranks: Sequence[int]) -> float:
        return self.frequencies.get(tuple(ranks), 0.0)


class ResultTable(list):
    """List of :class:`ResultRow` with keyed lookup."""

    def get(self, estimator: str, stage: str, model: str | None = None, d1=None, T=None) -> ResultRow:
        for row in self:
            if row.estimator == estimator and row.stage == stage and (
                model is None or row.model == model) and (d1 is None or row.d1 == d1) and (
                    T is None or row.T == T):
                return row
        raise KeyError((estimator, stage, model, d1, T))

    def to_records(self) -> list[dict[str, Any]]:
        recs = []
        for r in self:
            d = asdict(r)
            d["true_ranks"] = list(r.true_ranks)
            d["rmse_per_mode"] = list(r.rmse_per_mode)
            d["frequencies"] = {",".join(map(str, k)): v for k, v in r.frequencies.items()}
            recs.append(d)
        return recs


def rank_metrics(estimates: Sequence[Sequence[int]], truth: Sequence[int]):
    """Proportion of exact matches, pooled RMSE, per-mode RMSE and frequencies.

    The pooled RMSE is ``sqrt(mean over replications and modes of (r_hat - r)^2)``.
    """
    est = np.asarray(estimates, dtype=int)
    truth = np.asarray(truth, dtype=int)
    n = est.shape[0]
    sq = (est - truth) ** 2
    counts = Counter(tuple(int(v) for v in row) for row in est)
    freqs = {k: c / n for k, c in sorted(counts.items())}
    prop = counts.get(tuple(int(v) for v in truth), 0) / n
    rmse = math.sqrt(sq.sum() / sq.size)
    per_mode = tuple(math.sqrt(v) for v in sq.mean(axis=0))
    return prop, rmse, per_mode, freqs


def run_replication(spec: ModelSpec, seed, estimators: Sequence[EstimatorSpec], h0: int = 1,
                    m_star=None, do_demean: bool = True) -> dict[str, dict[str, tuple[int, ...]]]:
    """Simulate once and return ``{estimator label: {stage: ranks}}``."""
    x = generate(spec, seed).series
    if do_demean:
        x = demean(x)
    cache: dict = {}
    out = {}
    for est in estimators:
        if set(est.stages) == {"initial"}:
            # no sweep needed for the non-iterative stage alone
            out[est.label] = {"initial": initial_state(x, est.options(h0, m_star), cache).selected}
            continue
        res = iterate(x, est.options(h0, m_star), cache)
        hist = res.history
        assert hist[0].iter == 0 and hist[1].iter == 1 and hist[-1].selected == res.ranks
        out[est.label] = {"initial": res.initial, "one_step": res.one_step, "final": res.ranks}
    return out


def _run_chunk(args):
    spec, seeds, estimators, h0, m_star, do_demean = args
    return [run_replication(spec, s, estimators, h0, m_star, do_demean) for s in seeds]


def worker_count(requested: int = 1) -> int:
    cap = os.environ.get("TENRANK_THREADS")
    n = max(1, int(requested))
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def run_cell(spec: ModelSpec, estimators: Sequence[EstimatorSpec], replications: int, seed: int = 1,
             h0: int = 1, m_star=None, parallelism: int = 1, do_demean: bool = True) -> ResultTable:
    """All replications of one model cell, aggregated per estimator and stage."""
    seeds = [replication_seed(seed, r) for r in range(replications)]
    workers = worker_count(parallelism)
    try:
        if workers == 1:
            reps = _run_chunk((spec, seeds, estimators, h0, m_star, do_demean))
        else:
            chunks = [seeds[i::workers] for i in range(workers)]
            with ProcessPoolExecutor(workers) as pool:
                parts = list(pool.map(_run_chunk, [(spec, c, estimators, h0, m_star, do_demean) for c in chunks]))
            # undo the round-robin split so rows come back in replication order
            reps = [parts[r % workers][r // workers] for r in range(replications)]
        error = None
    except Exception as exc:  # one failed replication voids the cell
        log.error("cell %s d=(%d,%d) T=%d failed: %s", spec.model, spec.d1, spec.d2, spec.T, exc)
        reps, error = None, f"{type(exc).__name__}: {exc}"

    table = ResultTable()
    for est in estimators:
        for stage in est.stages:
            if reps is None:
                table.append(ResultRow(spec.model, spec.d1, spec.d2, spec.T, est.label, stage, 0,
                                       spec.true_ranks, math.nan, math.nan, (), {}, error))
                continue
            ranks = [rep[est.label][stage] for rep in reps]
            prop, rmse, per_mode, freqs = rank_metrics(ranks, spec.true_ranks)
            table.append(ResultRow(spec.model, spec.d1, spec.d2, spec.T, est.label, stage,
                                   len(ranks), spec.true_ranks, prop, rmse, per_mode, freqs))
    return table


def run_experiment(cfg: ExperimentConfig) -> ResultTable:
    table = ResultTable()
    for spec in cfg.models:
        log.info("cell %s d=(%d,%d) T=%d", spec.model, spec.d1, spec.d2, spec.T)
        table.extend(run_cell(spec, cfg.estimators, cfg.replications, cfg.seed, cfg.h0,
                              cfg.m_star, cfg.parallelism, cfg.demean))
    return table


def write_table_csv(table: ResultTable, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "d1", "d2", "T", "estimator", "stage", "n", "true_ranks",
                    "proportion_correct", "rmse", "rmse_per_mode", "frequencies", "error"])
        for r in table:
            w.writerow([r.model, r.d1, r.d2, r.T, r.estimator, r.stage, r.n,
                        " ".join(map(str, r.true_ranks)), f"{r.proportion_correct:.4f}",
                        f"{r.rmse:.4f}", " ".join(f"{v:.4f}" for v in r.rmse_per_mode),
                        ";".join(f"({','.join(map(str, k))}):{v:.4f}" for k, v in r.frequencies.items()),
                        r.error or ""])


# ---------------------------------------------------------------------------
# single-series reports


def estimate_report(series, estimators: Sequence[EstimatorSpec], h0: int = 1, m_star=None,
                    do_demean: bool = True, tau_h0: Sequence[int] = (1, 2, 3, 4),
                    tau_m: int = 3) -> dict[str, Any]:
    """Spectra, selected ranks per estimator and stage, and the lag diagnostic."""
    x = series if isinstance(series, TensorSeries) else TensorSeries(series)
    if x.T <= h0:
        raise ValueError(f"series of length {x.T} is too short for h0={h0}")
    if do_demean:
        x = demean(x)
    cache: dict = {}
    report: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "dims": list(x.dims),
        "T": x.T,
        "h0": h0,
        "demeaned": do_demean,
        "spectra": {},
        "estimates": [],
        "tau": [],
    }
    for est in estimators:
        res = iterate(x, est.options(h0, m_star), cache)
        if est.method not in report["spectra"]:
            report["spectra"][est.method] = [s.values.tolist() for s in res.history[0].spectra]
        report["estimates"].append({
            "estimator": est.label,
            "initial": list(res.initial),
            "one_step": list(res.one_step),
            "final": list(res.ranks),
            "iterations": res.n_iter,
            "converged": res.converged,
            "history": [list(s.selected) for s in res.history],
        })
    hs = [h for h in tau_h0 if h < x.T]
    if hs and min(x.dims) >= 1:
        for k in range(len(x.dims)):
            for row in tau_diagnostic(x, k, tau_m, hs):
                report["tau"].append({
                    "mode": k + 1,
                    "method": row.method,
                    "h0": row.h0,
                    "sigma": row.sigma.tolist(),
                    "normalized": row.normalized().tolist(),
                    "eigen_normalized": row.normalized_sq.tolist(),
                })
    return report


def tune_c_report(series, modes: Sequence[int] | None = None, do_demean: bool = True,
                  **kwargs) -> list[TuneResult]:
    x = series if isinstance(series, TensorSeries) else TensorSeries(series)
    if do_demean:
        x = demean(x)
    modes = range(x.order) if modes is None else modes
    return [tune_c(x, k, **kwargs) for k in modes]
