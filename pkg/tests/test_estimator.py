import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthctl.errors import CoverageError, DegeneratePoolError, PanelError
from synthctl.estimator import (
    FitOptions,
    PredictorRow,
    build_matrices,
    fit,
    optimize_importance,
    tracking_error_reduction,
    tracking_error_terms,
)
from synthctl.ingest import load_study_config
from synthctl.panel import Panel

from conftest import FIXTURES, YEARS, random_panel, study
from oracles import tracking_reduction_exact

FAST = FitOptions(starts=4, start_budget=60)

UKRAINE_TREATED = (-0.52, 7.64, 75.63)
UKRAINE_SYNTHETIC = (-0.37, 10.71, 71.35)
UKRAINE_POOL = (1.66, 9.48, 85.1)


def load_fixture(name):
    cfg = load_study_config(FIXTURES / name / "study.yaml")
    return cfg, cfg.load_panel()


def ukraine_like_panel():
    rng = np.random.default_rng(7)
    units = ["UKR", "SVN", "EST", "ARM"]
    shape = (4, len(YEARS))
    covs = {}
    for name, treated_value in zip(["gdp_growth", "unemployment", "domestic_credit"], UKRAINE_TREATED):
        arr = rng.normal(abs(treated_value) + 1, 1, size=shape)
        arr[0, :5] = treated_value
        covs[name] = arr
    return Panel(units, YEARS, {"self_employed_pct": rng.uniform(10, 20, shape)}, covs)


def test_treated_predictor_row_is_pre_period_mean():
    p = ukraine_like_panel()
    spec = study("UKR", ["gdp_growth", "unemployment", "domestic_credit"], outcome="self_employed_pct")
    m = build_matrices(p, spec)
    np.testing.assert_allclose(m.x1, UKRAINE_TREATED, rtol=0, atol=1e-12)
    assert m.x0.shape == (3, 3)
    assert m.donors == ("SVN", "EST", "ARM")
    assert m.z1.shape == (5,) and m.z0.shape == (5, 3)


def test_single_donor_constant_covariate():
    p = Panel(["A", "B"], [2000, 2001, 2002],
              {"y": [[1.0, 2.0, 3.0], [1.5, 2.5, 3.5]]},
              {"c": [[9.0, 9.0, 9.0], [4.25, 4.25, 4.25]]})
    m = build_matrices(p, study("A", ["c"], t0=2002, normalize=False))
    np.testing.assert_array_equal(m.x0, [[4.25]])


def test_lag_entry_is_raw_outcome(rng):
    p = random_panel(rng)
    m = build_matrices(p, study("u0", ["c0"], lags=[2013]))
    j = p.year_index(2013)
    assert m.x1[1] == p.outcomes["y"][0, j]
    np.testing.assert_array_equal(m.x0[1], p.outcomes["y"][1:, j])


def test_missing_covariates_average_available_years(rng):
    p = random_panel(rng)
    cov = np.array(p.covariates["c0"])
    cov[2, 0] = np.nan
    cov[2, 1] = np.nan
    p = Panel(p.units, p.years, p.outcomes, {"c0": cov, "c1": p.covariates["c1"]})
    m = build_matrices(p, study("u0"))
    assert m.x0[0, 1] == pytest.approx(np.mean(cov[2, 2:5]))
    assert m.coverage[0, 2] == pytest.approx(3 / 5)


def test_zero_coverage_is_a_hard_error(rng):
    p = random_panel(rng)
    cov = np.array(p.covariates["c0"])
    cov[3, :5] = np.nan
    p = Panel(p.units, p.years, p.outcomes, {"c0": cov, "c1": p.covariates["c1"]})
    with pytest.raises(CoverageError, match="u3"):
        build_matrices(p, study("u0"))


def test_zero_spread_with_normalisation_is_a_hard_error(rng):
    p = random_panel(rng)
    p = Panel(p.units, p.years, p.outcomes, {"c0": np.ones(p.shape), "c1": p.covariates["c1"]})
    with pytest.raises(PanelError, match="c0"):
        build_matrices(p, study("u0"))
    build_matrices(p, study("u0", normalize=False))


def test_empty_pool_is_rejected(rng):
    p = random_panel(rng, n_units=3)
    with pytest.raises(DegeneratePoolError):
        fit(p, study("u0", exclusions={"u1", "u2"}), FAST)


def test_single_predictor_has_unit_importance(rng):
    p = random_panel(rng)
    m = build_matrices(p, study("u0", ["c0"]))
    v, w = optimize_importance(m, FAST)
    np.testing.assert_array_equal(v, [1.0])
    assert abs(w.sum() - 1) < 1e-12


def test_zero_budget_falls_back_to_equal_importance(rng):
    p = random_panel(rng)
    m = build_matrices(p, study("u0", ["c0", "c1"], lags=[2012]))
    v, _ = optimize_importance(m, FitOptions(start_budget=0))
    np.testing.assert_allclose(v, [1 / 3] * 3)


def test_treated_copy_of_donor_fits_perfectly(rng):
    p = random_panel(rng)
    y = np.array(p.outcomes["y"])
    cov = {k: np.array(v) for k, v in p.covariates.items()}
    y[0] = y[4]
    for arr in cov.values():
        arr[0] = arr[4]
    p = Panel(p.units, p.years, {"y": y}, cov)
    f = fit(p, study("u0"), FAST)
    np.testing.assert_allclose(f.weights, np.eye(5)[3], atol=1e-12)
    assert np.all(f.gap == 0.0)
    assert f.pre_mspe == 0.0 and f.post_mspe == 0.0
    assert f.adequate


def test_fit_series_identities(rng):
    p = random_panel(rng, n_units=7)
    f = fit(p, study("u2", lags=[2010, 2013]), FAST)
    donors = p.outcomes["y"][[p.unit_index(d) for d in f.donors]]
    np.testing.assert_allclose(f.synthetic, f.weights @ donors, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(f.gap, f.actual - f.synthetic)
    pre = np.array([y < 2014 for y in f.years])
    assert f.pre_mspe == pytest.approx(np.mean(f.gap[pre] ** 2), rel=1e-15)
    assert f.post_mspe == pytest.approx(np.mean(f.gap[~pre] ** 2), rel=1e-15)
    assert [r.label for r in f.predictor_table] == ["c0", "c1", "outcome[2010]", "outcome[2013]"]


def test_five_donor_convex_combination_is_recovered():
    cfg, panel = load_fixture("convex5")
    f = fit(panel, cfg.study, cfg.fit)
    reference = {"SVN": 0.416, "EST": 0.374, "ARM": 0.192, "CZE": 0.013, "MKD": 0.001}
    w = f.weight_map()
    assert f.pre_mspe <= 1e-10
    assert max(abs(w[d] - reference.get(d, 0.0)) for d in w) <= 0.02
    top3 = sorted(w, key=w.get, reverse=True)[:3]
    assert top3 == ["SVN", "EST", "ARM"]
    assert f.adequate


def test_out_of_hull_treated_is_inadequate():
    cfg, panel = load_fixture("inadequate")
    f = fit(panel, cfg.study, cfg.fit)
    assert not f.adequate
    assert f.pre_rmse > f.adequacy_bound


def test_adequacy_threshold_is_relative_to_treated_spread():
    cfg, panel = load_fixture("inadequate")
    loose = fit(panel, cfg.study, FitOptions(adequacy_theta=1e6))
    assert loose.adequate


def test_translation_covariance_with_fixed_importance(rng):
    p = random_panel(rng, n_units=6)
    spec = study("u0")
    opts = FitOptions(importance=(0.3, 0.7))
    base = fit(p, spec, opts)
    y = np.array(p.outcomes["y"])
    j = p.unit_index(base.donors[2])
    y[j] += 5.0
    shifted = fit(p.with_outcome("y", y), spec, opts)
    np.testing.assert_array_equal(shifted.weights, base.weights)
    np.testing.assert_allclose(shifted.synthetic - base.synthetic, base.weights[2] * 5.0, atol=1e-12)


def test_fit_is_deterministic(rng):
    p = random_panel(rng, n_units=8)
    spec = study("u1", lags=[2011])
    a = fit(p, spec, FitOptions(seed=5, starts=6))
    b = fit(p, spec, FitOptions(seed=5, starts=6))
    for name in ("weights", "importance", "synthetic", "gap"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    assert a.pre_mspe == b.pre_mspe


def test_more_starts_never_hurt(rng):
    p = random_panel(rng, n_units=8)
    spec = study("u1", lags=[2011])
    few = fit(p, spec, FitOptions(seed=5, starts=1))
    many = fit(p, spec, FitOptions(seed=5, starts=8))
    assert many.pre_mspe <= few.pre_mspe


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 9), st.integers(1, 3))
def test_fit_weights_and_importance_on_simplex(seed, n_units, n_cov):
    rng = np.random.default_rng(seed)
    p = random_panel(rng, n_units=n_units, n_cov=n_cov)
    f = fit(p, study("u0", [f"c{i}" for i in range(n_cov)]), FitOptions(seed=seed, starts=2, start_budget=20))
    for vec in (f.weights, f.importance):
        assert np.all(vec >= 0)
        assert abs(vec.sum() - 1) <= 1e-9


def test_convex_hull_identity_random():
    rng = np.random.default_rng(99)
    n_donors, years = 4, YEARS
    donors_y = rng.normal(10, 3, size=(n_donors, len(years)))
    donors_c = rng.normal(5, 2, size=(2, n_donors, len(years)))
    w_star = np.array([0.5, 0.0, 0.3, 0.2])
    y = np.vstack([w_star @ donors_y, donors_y])
    covs = {f"c{i}": np.vstack([w_star @ donors_c[i], donors_c[i]]) for i in range(2)}
    p = Panel([f"u{i}" for i in range(5)], years, {"y": y}, covs)
    f = fit(p, study("u0", lags=[2009, 2013]), FAST)
    assert f.pre_mspe <= 1e-10
    assert np.max(np.abs(f.weights - w_star)) <= 0.02


def row(t, s, p, label="x"):
    return PredictorRow(label, t, s, p)


def test_tracking_perfect_match_is_one():
    assert tracking_error_reduction([row(2.0, 2.0, 5.0), row(-1.0, -1.0, 3.0)]) == 1.0


def test_tracking_synthetic_at_pool_mean_is_zero():
    assert tracking_error_reduction([row(2.0, 5.0, 5.0), row(-1.0, 3.0, 3.0)]) == 0.0


def test_tracking_skips_zero_treated_values():
    rows = [row(0.0, 1.0, 7.0, "zero"), row(2.0, 2.0, 4.0)]
    num, den, skipped = tracking_error_terms(rows)
    assert skipped == ["zero"]
    assert tracking_error_reduction(rows) == 1.0
    with pytest.raises(PanelError):
        tracking_error_reduction([row(0.0, 1.0, 2.0)])


def test_tracking_on_ukraine_triples():
    rows = [row(t, s, p) for t, s, p in zip(UKRAINE_TREATED, UKRAINE_SYNTHETIC, UKRAINE_POOL)]
    expected = tracking_reduction_exact(UKRAINE_TREATED, UKRAINE_SYNTHETIC, UKRAINE_POOL)
    # frozen from the exact rational evaluation: 143150835 / 171202247
    assert expected == pytest.approx(0.8361504449179338, abs=1e-15)
    assert tracking_error_reduction(rows) == pytest.approx(float(expected), abs=1e-12)
