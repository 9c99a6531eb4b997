import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from premia import (AlignedDataset, PopulationModel, cue_estimate, cue_pseudo_true, diagnostics,
                    estimate_first_pass, fm_two_pass, is_statistic, j_statistic, repackage,
                    solve_pencil)
from premia.cue_rank import cue_objective
from premia.errors import CueUnboundedError, InputError, SingularMatrixError
from premia.first_pass import difference_estimates, from_moments

from conftest import make_fp, make_panel
from oracles import brute_force_cue, cue_objective as oracle_objective, ols_first_pass

FROZEN = json.loads((Path(__file__).parent / "data" / "frozen_oracles.json").read_text())


@pytest.mark.parametrize("entry", FROZEN, ids=lambda e: f"seed{e['case']['seed']}")
def test_cue_matches_frozen_brute_force(entry):
    R, F = make_panel(**entry["case"])
    fp = estimate_first_pass(AlignedDataset.from_arrays(R, F))
    np.testing.assert_allclose(cue_estimate(fp).lambda_f, entry["cue"], atol=1e-3)
    j, _ = j_statistic(fp)
    assert j == pytest.approx(entry["J"], rel=1e-4)


def test_cue_matches_live_brute_force():
    R, F = make_panel(11, T=200, N=6, K=1, e_scale=0.3)
    beta, omega, q, mu = ols_first_pass(R, F)
    fp = estimate_first_pass(AlignedDataset.from_arrays(R, F))
    start = fm_two_pass(fp).lambda_f
    lam, obj = brute_force_cue(mu, beta, omega, q, start, refine=3)
    np.testing.assert_allclose(cue_estimate(fp).lambda_f, lam, atol=1e-3)
    assert j_statistic(fp)[0] == pytest.approx(200 * obj, rel=1e-4)


def test_objective_minimised_at_cue(fp2):
    lam = cue_estimate(fp2).lambda_f
    rng = np.random.default_rng(0)
    others = lam + rng.normal(scale=0.3, size=(200, 2))
    base = cue_objective(fp2, lam)[0]
    assert np.all(cue_objective(fp2, others) >= base - 1e-12)
    assert fp2.T * base == pytest.approx(j_statistic(fp2)[0], rel=1e-9)
    # gradient vanishes at the minimiser
    h = 1e-5
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        g = (cue_objective(fp2, lam + e)[0] - cue_objective(fp2, lam - e)[0]) / (2 * h)
        assert abs(g) < 1e-6


def test_objective_agrees_with_oracle(fp2):
    l = np.array([0.3, -0.1])
    ref = oracle_objective(fp2.mu_hat, fp2.beta_hat, fp2.omega_hat, fp2.qff_hat, l)
    assert cue_objective(fp2, l)[0] == pytest.approx(ref, rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 3))
def test_interlacing(seed, K):
    fp = make_fp(seed % 997, T=80, N=6, K=K, e_scale=0.5, beta_scale=0.2)
    j, _ = j_statistic(fp)
    assert j <= is_statistic(fp) * (1 + 1e-9) + 1e-9


def test_diagnostics_fields(fp2):
    d = diagnostics(fp2)
    assert d.df_j == 6 and d.df_is == 7
    assert 0 <= d.p_j <= 1 and d.gap >= -1e-9
    assert set(d.to_dict()) == {"J", "df_J", "p_J", "IS", "df_IS", "p_IS", "IS_minus_J"}


def test_intercept_mode_invariant_to_reference_asset():
    R, F = make_panel(7, T=250, N=7, K=2, e_scale=0.2, intercept=0.4)
    fp = estimate_first_pass(AlignedDataset.from_arrays(R, F, zero_beta_mode="intercept_estimated"))
    base = diagnostics(fp)
    cue = cue_estimate(fp).lambda_f
    for ref in (0, 2, 5):
        d = difference_estimates(fp, ref)
        alt = diagnostics(d)
        assert alt.j_stat == pytest.approx(base.j_stat, rel=1e-9)
        assert alt.is_stat == pytest.approx(base.is_stat, rel=1e-9)
        np.testing.assert_allclose(cue_estimate(d).lambda_f, cue, rtol=1e-8)


def test_repackaging_invariance(fp2):
    rng = np.random.default_rng(5)
    A = np.eye(fp2.N) + 0.2 * rng.normal(size=(fp2.N, fp2.N))
    A /= A.sum(axis=1, keepdims=True)
    fq = repackage(fp2, A)
    np.testing.assert_allclose(cue_estimate(fq).lambda_f, cue_estimate(fp2).lambda_f, rtol=1e-8)
    assert j_statistic(fq)[0] == pytest.approx(j_statistic(fp2)[0], rel=1e-8)
    # FM is not invariant
    assert not np.allclose(fm_two_pass(fq).lambda_f, fm_two_pass(fp2).lambda_f, rtol=1e-4)


def test_exact_model_recovers_premia_with_zero_j():
    rng = np.random.default_rng(0)
    beta = rng.normal(size=(6, 2))
    lam = np.array([0.4, -1.0])
    fp = from_moments(beta @ lam, beta, np.eye(6) + 0.1, np.eye(2), 300)
    assert j_statistic(fp)[0] == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_allclose(cue_estimate(fp).lambda_f, lam, atol=1e-9)


def test_singular_omega_raises():
    beta = np.ones((4, 1)) * np.arange(1, 5)[:, None]
    fp = from_moments(beta[:, 0], beta, np.zeros((4, 4)), np.eye(1), 100)
    with pytest.raises(SingularMatrixError):
        j_statistic(fp)


def test_unbounded_cue():
    # average returns orthogonal to everything except a direction beta cannot span,
    # with beta = 0: the minimiser escapes to infinity
    fp = from_moments(np.array([1.0, 0.5, -0.3, 0.2]), np.zeros((4, 1)), np.eye(4), np.eye(1), 100)
    with pytest.raises(CueUnboundedError):
        cue_estimate(fp)


def test_pencil_basics():
    sol = solve_pencil(np.diag([3.0, 1.0]), np.diag([1.0, 2.0]))
    assert sol.smallest_root == pytest.approx(0.5)
    np.testing.assert_allclose(sol.all_roots, [0.5, 3.0])
    with pytest.raises(InputError):
        solve_pencil([[1.0, 2.0], [0.0, 1.0]], np.eye(2))
    with pytest.raises(SingularMatrixError):
        solve_pencil(np.eye(2), np.diag([1.0, -1.0]))


def test_population_pseudo_true():
    rng = np.random.default_rng(1)
    beta = rng.normal(size=(8, 1))
    pm = PopulationModel(beta=beta, omega=np.eye(8), qff=np.eye(1), lambda_f=[0.7], e_tilde=np.zeros(8))
    lam, j = cue_pseudo_true(pm)
    assert lam[0] == pytest.approx(0.7)
    assert j == pytest.approx(0.0, abs=1e-12)
