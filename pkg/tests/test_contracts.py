"""Small worked cases for each module's documented contract."""


import numpy as np
import pytest

from premia import (AlignedDataset, PopulationModel, confidence_set, cue_estimate, cue_pseudo_true,
                    diagnostics, estimate_first_pass, fm_pseudo_true, fm_two_pass,
                    is_statistic, j_statistic, load_csv, align, repackage, solve_pencil)
from premia.cli import build_parser, main
from premia.cross_section import fm_covariance, regressors
from premia.drlm import DrlmEvaluator, drlm_stat, drlm_test, make_axis, project
from premia.errors import CueUnboundedError, InputError, SingularMatrixError
from premia.first_pass import from_moments
from premia.panel_io import RawPanel, ZeroBetaMode, reference_difference, write_csv
from premia.sim_lab import (DgpSpec, calibrate, generate, pseudo_true_contours, rejection_surface,
                            rep_seed, scaled_model, synthetic_model, theorem2_decomposition)
from premia.zoo_scan import FLAG_MISSPECIFIED, precompute_moments, scan_all, summarize

from conftest import make_fp, make_panel
from oracles import brute_force_cue_fast, ols_first_pass, pencil_roots_by_bisection


def _quarters(y0, q0, n):
    out = []
    y, q = y0, q0
    for _ in range(n):
        out.append(f"{y}Q{q}")
        q += 1
        if q == 5:
            y, q = y + 1, 1
    return out


# ---------------------------------------------------------------- panel input


def test_quarterly_csv(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("date,a,b\n1963Q3,1,2\n1963Q4,3,4\n1964Q1,5,6\n")
    panel = load_csv(p)
    assert panel.values.shape == (3, 2)
    assert panel.dates == ("1963Q3", "1963Q4", "1964Q1")


def test_alignment_keeps_common_quarters(tmp_path):
    rng = np.random.default_rng(0)
    rq, fq = _quarters(1963, 3, 141), _quarters(1963, 3, 202)
    assert rq[-1] == "1998Q3" and fq[-1] == "2013Q4"
    write_csv(RawPanel(tuple(rq), ("a", "b", "c"), rng.normal(size=(141, 3))), tmp_path / "r.csv")
    write_csv(RawPanel(tuple(fq), ("f",), rng.normal(size=(202, 1))), tmp_path / "f.csv")
    ds = align(load_csv(tmp_path / "r.csv"), load_csv(tmp_path / "f.csv", "factors"))
    assert ds.T == 141
    same = align(load_csv(tmp_path / "r.csv"), load_csv(tmp_path / "r.csv", "factors"))
    np.testing.assert_array_equal(same.returns, load_csv(tmp_path / "r.csv").values)


def test_reference_differencing_cases():
    rng = np.random.default_rng(1)
    R = rng.normal(size=(40, 26))
    ds = AlignedDataset.from_arrays(R, rng.normal(size=(40, 1)), zero_beta_mode="intercept_estimated")
    d = reference_difference(ds, "R26")
    assert d.N == 25
    np.testing.assert_allclose(d.returns, R[:, :25] - R[:, [25]])
    small = AlignedDataset.from_arrays(np.array([[1.0, 2.0, 0.5], [0.0, 1.0, 3.0]] * 3),
                                       np.arange(6.0)[:, None], zero_beta_mode="intercept_estimated")
    np.testing.assert_allclose(reference_difference(small, "R3").returns[0], [0.5, 1.5])
    flat = AlignedDataset.from_arrays(np.tile(rng.normal(size=(40, 1)), (1, 4)),
                                      rng.normal(size=(40, 1)), zero_beta_mode="intercept_estimated")
    z = reference_difference(flat, "R4")
    assert not z.returns.any()
    with pytest.raises(SingularMatrixError):
        j_statistic(estimate_first_pass(z))


def test_regressor_modes():
    beta = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(regressors(beta, ZeroBetaMode.IMPOSED_ZERO), beta)
    np.testing.assert_array_equal(regressors(beta, ZeroBetaMode.INTERCEPT_ESTIMATED)[:, 0], 1.0)


# ---------------------------------------------------------------- first pass


def test_factors_equal_returns():
    rng = np.random.default_rng(2)
    F = rng.normal(size=(50, 3))
    fp = estimate_first_pass(AlignedDataset.from_arrays(F.copy(), F))
    np.testing.assert_allclose(fp.beta_hat, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(fp.omega_hat, 0.0, atol=1e-12)
    assert np.all(np.isinf(fp.beta_tstats[np.eye(3, dtype=bool)]))


def test_tiny_panel_against_oracle():
    rng = np.random.default_rng(3)
    R, F = rng.normal(size=(6, 2)), rng.normal(size=(6, 1))
    fp = estimate_first_pass(AlignedDataset.from_arrays(R, F))
    beta, omega, q, mu = ols_first_pass(R, F)
    np.testing.assert_allclose(fp.beta_hat, beta, atol=1e-12)
    np.testing.assert_allclose(fp.omega_hat, omega, atol=1e-12)


# ---------------------------------------------------------------- second pass


def test_exact_pricing_one_factor():
    beta = np.array([0.5, 1.0, 1.5, 2.0])
    fp = from_moments(beta * 2.0, beta, np.eye(4), np.eye(1), 100)
    res = fm_two_pass(fp)
    assert res.lambda_f[0] == pytest.approx(2.0, abs=1e-12)
    assert res.r_squared == pytest.approx(1.0)


def test_random_instance_normal_equations():
    rng = np.random.default_rng(4)
    beta, mu = rng.normal(size=(5, 2)), rng.normal(size=5)
    fp = from_moments(mu, beta, np.eye(5), np.eye(2), 100, zero_beta_mode="intercept_estimated")
    X = np.column_stack([np.ones(5), beta])
    np.testing.assert_allclose(fm_two_pass(fp).coefficients, np.linalg.solve(X.T @ X, X.T @ mu),
                               atol=1e-12)


def test_exact_factor_structure_standard_errors():
    rng = np.random.default_rng(5)
    beta = rng.normal(size=(6, 2))
    q = np.array([[2.0, 0.3], [0.3, 1.0]])
    fp = from_moments(beta @ [0.4, 0.1], beta, np.zeros((6, 6)), q, 200)
    res = fm_two_pass(fp)
    for kind in ("plain", "shanken"):
        np.testing.assert_allclose(fm_covariance(fp, res, kind), q / 200, atol=1e-14)


def test_fm_pseudo_true_cases():
    rng = np.random.default_rng(6)
    b = rng.normal(size=(8, 1))
    a = rng.normal(size=8)
    a_perp = a - b[:, 0] * (b[:, 0] @ a) / (b[:, 0] @ b[:, 0])
    base = PopulationModel.from_directions(b, a_perp, 1.0, 0.0, [2.0], np.eye(8), np.eye(1))
    assert fm_pseudo_true(base)[0] == pytest.approx(2.0)
    orth = PopulationModel.from_directions(b, a_perp, 1.0, 3.0, [2.0], np.eye(8), np.eye(1))
    assert fm_pseudo_true(orth)[0] == pytest.approx(2.0)
    # local scaling: beta = b / sqrt(T), e = a / sqrt(T) gives the same value at any T
    vals = [fm_pseudo_true(PopulationModel.from_directions(b, a, 1 / np.sqrt(T), 1 / np.sqrt(T),
                                                           [2.0], np.eye(8), np.eye(1)))[0]
            for T in (100, 10_000)]
    assert vals[0] == pytest.approx(vals[1], abs=1e-12)


def test_repackaging_cases():
    rng = np.random.default_rng(7)
    N = 6
    pm = PopulationModel(beta=rng.normal(1, 0.5, (N, 1)), omega=np.diag(rng.uniform(1, 2, N)),
                         qff=np.eye(1), lambda_f=[1.0], e_tilde=rng.normal(size=N) * 0.3)
    same = repackage(pm, np.eye(N))
    np.testing.assert_allclose(same.mu_r, pm.mu_r)
    # orthogonal A with A iota = iota: rotate within the complement of iota
    iota = np.ones(N) / np.sqrt(N)
    Qfull, _ = np.linalg.qr(np.column_stack([iota, rng.normal(size=(N, N - 1))]))
    G, _ = np.linalg.qr(rng.normal(size=(N - 1, N - 1)))
    C = Qfull[:, 1:]
    A = np.outer(iota, iota) + C @ G @ C.T
    np.testing.assert_allclose(A @ np.ones(N), 1.0, atol=1e-12)
    np.testing.assert_allclose(fm_pseudo_true(repackage(pm, A)), fm_pseudo_true(pm), atol=1e-10)
    L = np.tril(rng.uniform(0.2, 1.0, (N, N)))
    L /= L.sum(axis=1, keepdims=True)
    moved = repackage(pm, L)
    assert abs(fm_pseudo_true(moved)[0] - fm_pseudo_true(pm)[0]) > 1e-6
    np.testing.assert_allclose(cue_pseudo_true(moved)[0], cue_pseudo_true(pm)[0], atol=1e-8)


# ---------------------------------------------------------------- pencil, J, IS, CUE


def test_pencil_cases():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(6, 3))
    D = X.T @ X + np.eye(3)
    np.testing.assert_allclose(solve_pencil(D, D).all_roots, 1.0, atol=1e-12)
    sol = solve_pencil(np.diag([3.0, 5.0]), np.eye(2))
    assert sol.smallest_root == pytest.approx(3.0)
    np.testing.assert_allclose(np.abs(sol.eigvec), [1.0, 0.0], atol=1e-12)
    for _ in range(3):
        A, B = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
        M, D = A @ A.T + 0.1 * np.eye(4), B @ B.T + 0.5 * np.eye(4)
        ref = np.sort(pencil_roots_by_bisection(M, D))
        np.testing.assert_allclose(solve_pencil(M, D).all_roots, ref, rtol=1e-8, atol=1e-8)


def test_zero_beta_column_gives_zero_is():
    rng = np.random.default_rng(9)
    beta = np.column_stack([rng.normal(size=6), np.zeros(6)])
    fp = from_moments(rng.normal(size=6), beta, np.eye(6), np.eye(2), 100)
    assert is_statistic(fp) == pytest.approx(0.0, abs=1e-10)
    assert j_statistic(fp)[0] == pytest.approx(0.0, abs=1e-10)


def test_unbounded_error_carries_eigenvector():
    fp = from_moments(np.array([1.0, 0.5, -0.3, 0.2]), np.zeros((4, 1)), np.eye(4), np.eye(1), 100)
    with pytest.raises(CueUnboundedError) as e:
        cue_estimate(fp)
    assert e.value.eigvec.shape == (2,)
    assert "not identified" in str(e.value)


def test_population_cue_matches_grid_minimisation():
    rng = np.random.default_rng(10)
    N = 7
    A = rng.normal(size=(N, N))
    pm = PopulationModel(beta=rng.normal(1, 0.4, (N, 2)), omega=A @ A.T / N + np.eye(N),
                         qff=np.array([[2.0, 0.5], [0.5, 1.0]]), lambda_f=[0.3, -0.2],
                         e_tilde=0.3 * rng.normal(size=N))
    lam, _ = cue_pseudo_true(pm)
    centre = np.linalg.lstsq(pm.beta, pm.mu_r, rcond=None)[0]
    grid_lam, _ = brute_force_cue_fast(pm.mu_r, pm.beta, pm.omega, pm.qff, centre)
    np.testing.assert_allclose(lam, grid_lam, atol=1e-3)


def test_cue_equivariant_under_factor_rescaling():
    R, F = make_panel(13, T=250, N=8, K=2, e_scale=0.2)
    H = np.diag([2.0, -0.5])
    base = cue_estimate(estimate_first_pass(AlignedDataset.from_arrays(R, F))).lambda_f
    scaled = cue_estimate(estimate_first_pass(AlignedDataset.from_arrays(R, F @ H))).lambda_f
    np.testing.assert_allclose(scaled, H @ base, rtol=1e-8, atol=1e-10)
    d0 = diagnostics(estimate_first_pass(AlignedDataset.from_arrays(R, F)))
    d1 = diagnostics(estimate_first_pass(AlignedDataset.from_arrays(R, F @ H)))
    assert d1.j_stat == pytest.approx(d0.j_stat, rel=1e-9)


# ---------------------------------------------------------------- DRLM


def test_drlm_zero_under_exact_pricing():
    rng = np.random.default_rng(11)
    beta = rng.normal(size=(6, 2))
    lam = np.array([0.5, -0.2])
    fp = from_moments(beta @ lam, beta, np.eye(6), np.eye(2), 300)
    assert drlm_stat(fp, lam) == pytest.approx(0.0, abs=1e-12)


def test_square_root_choice_irrelevant(fp2):
    for l in ([0.1, 0.2], [-1.0, 3.0], [5.0, -4.0]):
        assert drlm_stat(fp2, l, sqrt="symmetric") == pytest.approx(
            drlm_stat(fp2, l, sqrt="cholesky"), rel=1e-10, abs=1e-12)


def test_one_factor_strong_set_is_interval_around_cue():
    fp = make_fp(14, T=600, N=8, K=1, beta_scale=1.5, e_scale=0.0)
    axis = make_axis(-3, 4, 0.01)
    grid = confidence_set(fp, [axis], power_rule=False)
    direct = np.array([drlm_stat(fp, [x]) for x in axis])
    np.testing.assert_allclose(grid.drlm_values, direct, rtol=1e-8, atol=1e-10)
    ivs = project(grid, 0)
    cue = cue_estimate(fp).lambda_f[0]
    assert len(ivs) == 1 and ivs[0].lo <= cue <= ivs[0].hi
    assert grid.shape_class == "bounded_convex"


def test_power_rule_never_rejects_cue(fp2):
    cue = cue_estimate(fp2).lambda_f
    assert not drlm_test(fp2, cue, power_rule=True)


def test_power_rule_rejects_far_stationary_point():
    # one factor: the CUE objective also has a maximiser, where DRLM is zero too
    fp = make_fp(15, T=400, N=8, K=1, beta_scale=1.0, e_scale=0.3)
    _, sol = j_statistic(fp)
    from premia.cue_rank import _pencils, statistics_view
    M, D = _pencils(statistics_view(fp))
    vals, vecs = np.linalg.eig(np.linalg.solve(D, M))
    far = vecs[:, int(np.argmax(vals.real))].real
    far_l = -far[1:] / far[0]
    cue = cue_estimate(fp).lambda_f
    assert drlm_stat(fp, far_l) < 1e-8
    assert not drlm_test(fp, far_l, power_rule=False)
    assert drlm_test(fp, far_l, power_rule=True)
    ts = np.linspace(0, 1, 2001)[1:-1]
    seg = cue[None, :] + ts[:, None] * (far_l - cue)[None, :]
    assert np.any(DrlmEvaluator(fp)(seg) > 3.841458820694124)


def test_fully_accepted_grid_is_censored_interval():
    beta = np.zeros((4, 1))
    fp = from_moments(np.zeros(4), beta + 1e-9, np.eye(4), np.eye(1), 50)
    grid = confidence_set(fp, [make_axis(-5, 5, 0.5)], power_rule=False)
    assert not grid.reject_final.any()
    (iv,) = project(grid, 0)
    assert (iv.lo, iv.hi) == (-5.0, 5.0) and iv.boundary_censored
    assert grid.shape_class == "unbounded_convex"


# ---------------------------------------------------------------- simulation


def test_calibrate_rejects_exactly_priced_data():
    beta = np.linspace(1, 2, 5)[:, None]
    fp = from_moments(beta[:, 0] * 0.7, beta, np.eye(5), np.eye(1), 100)
    with pytest.raises(InputError, match="zero second-pass residual"):
        calibrate(fp, [0.7])


def test_custom_orthogonal_direction_keeps_fm_value():
    fp = make_fp(17, T=200, N=6, K=1)
    b = fp.beta_hat[:, 0]
    a = np.random.default_rng(0).normal(size=6)
    a -= b * (b @ a) / (b @ b)
    pm = calibrate(fp, [1.5], "custom", a)
    for bs, es in ((0.1, 3.0), (1.0, 1.0), (4.0, 0.5)):
        assert fm_pseudo_true(scaled_model(pm, bs, es))[0] == pytest.approx(1.5, abs=1e-10)


def test_noiseless_generation_recovers_beta():
    pm = synthetic_model(N=6)
    pm = PopulationModel(pm.beta, np.zeros((6, 6)), pm.qff, pm.lambda_f, np.zeros(6))
    spec = DgpSpec(pm, mu_f=[0.3], T=80, seed=1, drift=False)
    fp = estimate_first_pass(generate(spec))
    np.testing.assert_allclose(fp.beta_hat, pm.beta, atol=1e-12)
    np.testing.assert_allclose(fp.omega_hat, 0.0, atol=1e-12)
    # with Omega_hat = 0 the J pencil is singular; this surfaces as a typed error
    with pytest.raises(SingularMatrixError):
        j_statistic(fp)


def test_large_sample_fm_consistency():
    pm = synthetic_model(N=6, angle=0.4)
    spec = DgpSpec(pm, mu_f=[0.3], T=100_000, seed=2, drift=False)
    est = np.array([fm_two_pass(estimate_first_pass(generate(spec, seed=rep_seed(2, r)))).lambda_f[0]
                    for r in range(60)])
    se = est.std(ddof=1) / np.sqrt(len(est))
    assert abs(est.mean() - fm_pseudo_true(pm)[0]) <= 3 * se


def test_fm_t_size_without_misspecification():
    spec = DgpSpec(synthetic_model(), mu_f=[0.5], T=500, seed=21, centering="population")
    s = rejection_surface(spec, [(100.0, 0.0)], tests="fm_t", h0_rule="pseudo_true_fm", reps=2000)
    assert 0.035 <= s.rates["fm_t"][0] <= 0.065


def test_contour_closed_form_and_monotonicity():
    pm = synthetic_model(N=8, angle=0.6)
    bs, es = np.array([0.2, 1.0, 3.0]), np.array([0.0, 1.0, 4.0])
    c = pseudo_true_contours(pm, bs, es)
    b, a = pm.b[:, 0], pm.a
    coef = abs((b @ a) / (b @ b))
    for i, e in enumerate(es):
        for j, bb in enumerate(bs):
            assert c.fm[i, j] == pytest.approx(e / bb * coef, abs=1e-10)
    full = pseudo_true_contours(pm)
    assert np.all(np.diff(full.fm[:, 10]) >= 0)


def test_decomposition_strong_and_correct():
    pm = synthetic_model(N=6)
    spec = DgpSpec(pm, mu_f=[0.5], T=2000, beta_scale=60.0, e_scale=0.0, seed=4)
    out = theorem2_decomposition(spec, reps=400)
    assert np.all(np.abs(out.component_means[2:]) <= 3 * out.component_se[2:] + 1e-15)
    comps = out.component_means
    assert comps[3] == 0.0


# ---------------------------------------------------------------- zoo


def test_single_subset_zoo_matches_single_model():
    R, F = make_panel(18, T=150, N=7, K=3)
    store = precompute_moments(R, F)
    (rec,) = scan_all(store, 3)
    d = diagnostics(estimate_first_pass(AlignedDataset.from_arrays(R, F, zero_beta_mode="intercept_estimated")))
    assert rec["j"] == pytest.approx(d.j_stat, rel=1e-10)
    assert rec["is_"] == pytest.approx(d.is_stat, rel=1e-10)


def test_mini_zoo_counts_and_noise_factor():
    rng = np.random.default_rng(19)
    T, N, M = 300, 8, 12
    F = rng.normal(size=(T, M))
    beta = rng.normal(size=(N, M))
    beta[:, -1] = 0.0                      # the last factor is pure noise
    R = F @ beta.T + rng.normal(size=(T, N))
    recs = scan_all(precompute_moments(R, F), 2)
    assert len(recs) == 66 and np.all(recs["j"] <= recs["is_"] + 1e-9)
    k1 = scan_all(precompute_moments(R, F), 1)
    noise = k1[k1["subset"][:, 0] == M - 1][0]
    # both statistics are small: J <= IS and IS is insignificant
    assert noise["p_is"] > 0.05
    assert noise["j"] <= noise["is_"] and noise["p_j"] > 0.05


def test_all_misspecified_summary():
    recs = scan_all(precompute_moments(*make_panel(20, T=200, N=8, K=4, e_scale=3.0)), 1)
    assert np.all(recs["flags"] & FLAG_MISSPECIFIED)
    assert summarize(recs).pct_misspecified == 100.0


# ---------------------------------------------------------------- command line


def test_constant_beta_with_intercept_exit_3(tmp_path, capsys):
    rng = np.random.default_rng(21)
    T = 120
    f = rng.normal(size=T)
    fc = f - f.mean()
    U = rng.normal(size=(T, 5))
    U -= U.mean(0)
    U -= np.outer(fc, fc @ U) / (fc @ fc)        # residuals orthogonal to the factor
    R = 0.5 + 1.3 * f[:, None] + U
    dates = tuple(f"{2000 + t // 12}-{t % 12 + 1:02d}" for t in range(T))
    write_csv(RawPanel(dates, tuple("abcde"), R), tmp_path / "r.csv")
    write_csv(RawPanel(dates, ("m",), f[:, None]), tmp_path / "f.csv")
    code = main(["estimate", "--returns", str(tmp_path / "r.csv"), "--factors", str(tmp_path / "f.csv"),
                 "--zero-beta", "intercept"])
    err = capsys.readouterr().err
    assert code == 3
    assert "rank-deficient cross-section regressors" in err


def test_help_documents_percent_units():
    for name in ("estimate", "drlm-cs", "simulate"):
        sub = build_parser()._subparsers._group_actions[0].choices[name]
        text = sub.format_help()
        assert "percent" in text and "1.5%)" in text and "%%" not in text
