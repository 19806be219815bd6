import logging

import numpy as np
import pytest

import oracles
from tenrank.harness import demean
from tenrank.iterative import (
    IterOptions,
    inflate,
    initial_ranks,
    initial_state,
    iterate,
    one_step,
    penalty_dims,
    project_except,
    project_series,
    projected_dims,
)
from tenrank.moment_stats import spectrum, tipup, topup
from tenrank.rank_criteria import PenaltySpec
from tenrank.simgen import ModelSpec, generate, replication_seed

ESTIMATORS = [(m, PenaltySpec(c, v)) for m in ("TOPUP", "TIPUP") for c, v in (("IC", 2), ("ER", 1))]


def noiseless(seed, dims=(6, 5), ranks=(2, 3), T=50, scale=10.0):
    rng = np.random.default_rng(seed)
    a1 = rng.standard_normal((dims[0], ranks[0]))
    a2 = rng.standard_normal((dims[1], ranks[1]))
    phi = rng.uniform(0.5, 0.9, ranks)
    f = np.zeros((T,) + ranks)
    f[0] = rng.standard_normal(ranks) / np.sqrt(1 - phi**2)
    for t in range(1, T):
        f[t] = phi * f[t - 1] + rng.standard_normal(ranks)
    return scale * np.matmul(np.matmul(a1, f), a2.T), (a1, a2)


def orthonormal(rng, d, r):
    return np.linalg.qr(rng.standard_normal((d, r)))[0]


def test_inflation_rule():
    assert inflate(2) == 4
    assert inflate(5) == 8
    assert inflate(1) == 2
    assert inflate(0) == 0


def test_zero_rank_is_clamped(caplog):
    x = np.random.default_rng(0).standard_normal((100, 8, 8))
    opts = IterOptions("TIPUP", PenaltySpec("IC", 2))
    st = initial_state(x, opts)
    assert st.selected == (0, 0)
    assert st.ranks == (1, 1)
    assert initial_ranks(x, opts) == (1, 1)
    with caplog.at_level(logging.WARNING, logger="tenrank.iterative"):
        res = iterate(x, opts)
    assert all(b.shape[1] >= 1 for b in res.bases)
    assert res.ranks == (0, 0)
    assert "rank 0" in caplog.text


def test_initial_ranks_inflated_and_clamped():
    x = generate(ModelSpec("M0", 12, 10, 300), 1).series
    opts = IterOptions("TIPUP", PenaltySpec("ER", 1))
    st = initial_state(x, opts)
    assert st.selected == (2, 2)
    assert st.ranks == (4, 4)
    no = IterOptions("TIPUP", PenaltySpec("ER", 1), initial_inflation=False)
    assert initial_ranks(x, no) == (2, 2)
    fixed = IterOptions("TIPUP", PenaltySpec("ER", 1), fixed_initial_ranks=(3, 1))
    assert initial_ranks(x, fixed) == (3, 1)
    capped = IterOptions("TIPUP", PenaltySpec("ER", 1), m_star=3)
    assert initial_ranks(x, capped) == (3, 3)


def test_project_except_examples(rng):
    x = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(project_except(x, [np.eye(3), np.eye(4)], 0), x)
    e1 = np.eye(4)[:, :1]
    np.testing.assert_array_equal(project_except(x, [np.eye(3), e1], 0), x[:, :1])
    y = rng.standard_normal((3, 4, 2))
    bases = [orthonormal(rng, 3, 2), orthonormal(rng, 4, 2), orthonormal(rng, 2, 1)]
    want = oracles.mode_multiply(oracles.mode_multiply(y, bases[0].T, 0), bases[2].T, 2)
    got = project_except(y, bases, 1)
    assert got.shape == (2, 4, 1) == projected_dims((3, 4, 2), (2, 3, 1), 1)
    np.testing.assert_allclose(got, want, atol=1e-12)
    with pytest.raises(ValueError):
        project_except(y, bases[:2], 1)


def test_project_series_matches_per_observation(rng):
    x = rng.standard_normal((5, 3, 4, 2))
    bases = [orthonormal(rng, 3, 2), orthonormal(rng, 4, 3), orthonormal(rng, 2, 1)]
    for k in range(3):
        z = project_series(x, bases, k)
        for t in range(5):
            np.testing.assert_allclose(z[t], project_except(x[t], bases, k), atol=1e-12)
    with pytest.raises(ValueError):
        project_series(x, [np.eye(2), bases[1], bases[2]], 1)


def test_penalty_dims_switch():
    assert penalty_dims((20, 30), (20, 4), "original") == (20, 30)
    assert penalty_dims((20, 30), (20, 4), "projected") == (20, 4)
    with pytest.raises(ValueError):
        penalty_dims((2, 2), (2, 2), "other")


def test_noiseless_exact_recovery():
    x, (a1, a2) = noiseless(1)
    for method, pen in ESTIMATORS:
        res = iterate(x, IterOptions(method, pen, m_star=(5, 4)))
        assert res.ranks == (2, 3), (method, pen)
        assert res.converged and res.n_iter <= 2
        for k, r in enumerate((2, 3)):
            vals = res.history[-1].spectra[k].values
            assert np.all(vals[r:] < 1e-8 * vals[0])
        q = np.linalg.qr(a1)[0]
        assert np.linalg.norm(res.bases[0] @ res.bases[0].T - q @ q.T, 2) < 1e-8


def test_projected_spectrum_is_basis_invariant(rng):
    x, (a1, a2) = noiseless(4)
    u2 = np.linalg.qr(a2)[0]
    rot = np.linalg.qr(rng.standard_normal((3, 3)))[0]
    for fn in (topup, tipup):
        s1 = spectrum(fn(project_series(x, [np.eye(6), u2], 0), 0)).values
        s2 = spectrum(fn(project_series(x, [np.eye(6), u2 @ rot], 0), 0)).values
        np.testing.assert_allclose(s1[:2], s2[:2], rtol=1e-8)


def test_rank_safety_from_overestimated_start():
    for seed in range(5):
        x, _ = noiseless(seed)
        for method, pen in ESTIMATORS:
            res = iterate(x, IterOptions(method, pen, m_star=(5, 4), fixed_initial_ranks=(4, 4)))
            for st in res.history[1:]:
                assert st.selected[0] >= 2 and st.selected[1] >= 3


def test_one_step_is_history_one():
    x = demean(generate(ModelSpec("M1", 12, 12, 200), 5).series)
    opts = IterOptions("TOPUP", PenaltySpec("IC", 2))
    full = iterate(x, opts)
    one = one_step(x, opts)
    assert one.n_iter == 1
    assert one.ranks == full.history[1].selected == full.one_step
    assert [s.ranks for s in one.history] == [s.ranks for s in full.history[:2]]


def test_determinism_and_shapes():
    x = demean(generate(ModelSpec("M2", 14, 12, 150), 2).series)
    opts = IterOptions("TIPUP", PenaltySpec("ER", 1))
    a, b = iterate(x, opts), iterate(x, opts)
    assert [s.selected for s in a.history] == [s.selected for s in b.history]
    for s1, s2 in zip(a.history, b.history):
        for u, v in zip(s1.bases, s2.bases):
            np.testing.assert_array_equal(u, v)
    for st in a.history:
        for k, (u, sp) in enumerate(zip(st.bases, st.spectra)):
            assert u.shape == (x.dims[k], st.ranks[k])
            np.testing.assert_allclose(u.T @ u, np.eye(st.ranks[k]), atol=1e-10)
            assert len(sp) == x.dims[k]


def test_m1_iterative_tipup_is_exact():
    spec = ModelSpec("M1", 20, 20, 300)
    for rep in range(5):
        x = demean(generate(spec, replication_seed(3, rep)).series)
        assert iterate(x, IterOptions("TIPUP", PenaltySpec("IC", 2))).ranks == (5, 5)


def test_sweep_variants_and_rank_only():
    x = demean(generate(ModelSpec("M1", 12, 10, 200), 9).series)
    for sweep in ("gauss-seidel", "jacobi"):
        res = iterate(x, IterOptions("TIPUP", PenaltySpec("ER", 1), sweep=sweep))
        assert res.converged
    quick = iterate(x, IterOptions("TIPUP", PenaltySpec("ER", 1), rank_only=True))
    assert quick.n_iter <= iterate(x, IterOptions("TIPUP", PenaltySpec("ER", 1))).n_iter


def test_non_convergence_is_flagged():
    x = demean(generate(ModelSpec("M3", 20, 20, 100), 0).series)
    res = iterate(x, IterOptions("TOPUP", PenaltySpec("ER", 1), max_iter=1, subspace_tol=0.0))
    assert not res.converged and res.n_iter == 1


def test_option_and_input_errors():
    with pytest.raises(ValueError):
        IterOptions(max_iter=0)
    with pytest.raises(ValueError):
        IterOptions(h0=0)
    with pytest.raises(ValueError):
        iterate(np.zeros((10, 1, 4)), IterOptions())
    with pytest.raises(ValueError):
        iterate(np.ones((3, 4, 4)), IterOptions(h0=3))


def test_mixed_criteria_per_mode():
    x = demean(generate(ModelSpec("M0", 12, 10, 300), 1).series)
    opts = IterOptions("TIPUP", (PenaltySpec("IC", 2), PenaltySpec("ER", 1)))
    assert iterate(x, opts).ranks == (2, 2)
