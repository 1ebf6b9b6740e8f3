import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthctl.errors import PanelError
from synthctl.panel import (
    OutcomeLag,
    Panel,
    PredictorSpec,
    donor_pool,
    split_periods,
    validate_panel,
)

from conftest import random_panel, study


def full_panel(n_units=47, years=range(2009, 2020)):
    rng = np.random.default_rng(0)
    years = list(years)
    shape = (n_units, len(years))
    return Panel(
        units=[f"c{i:02d}" for i in range(n_units)],
        years=years,
        outcomes={"self_employed_pct": rng.uniform(5, 40, shape), "sme_pct": rng.uniform(0, 10, shape)},
        covariates={"gdp_growth": rng.normal(2, 3, shape)},
    )


def test_complete_47_unit_panel_is_valid():
    assert validate_panel(full_panel()) == []


def test_single_missing_outcome_is_reported_with_coordinates():
    p = full_panel()
    y = np.array(p.outcomes["sme_pct"])
    y[3, 5] = np.nan
    report = validate_panel(p.with_outcome("sme_pct", y))
    assert len(report) == 1
    v = report[0]
    assert (v.kind, v.unit, v.year, v.field) == ("missing_outcome", "c03", 2014, "sme_pct")


def test_non_consecutive_years():
    p = Panel(units=["a", "b"], years=[2009, 2011, 2012],
              outcomes={"y": np.ones((2, 3))})
    kinds = [v.kind for v in validate_panel(p)]
    assert kinds == ["non_consecutive_years"]


def test_too_small_panels():
    p = Panel(units=["a"], years=[2009, 2010], outcomes={"y": np.ones((1, 2))})
    kinds = {v.kind for v in validate_panel(p)}
    assert kinds == {"too_few_units", "too_few_years"}


def test_missing_covariates_are_allowed():
    p = full_panel(5)
    cov = np.array(p.covariates["gdp_growth"])
    cov[0, 0] = np.nan
    p = Panel(p.units, p.years, p.outcomes, {"gdp_growth": cov})
    assert validate_panel(p) == []


def test_panel_is_immutable():
    p = full_panel(3)
    with pytest.raises(ValueError):
        p.outcomes["sme_pct"][0, 0] = 1.0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 5), st.integers(0, 10), st.sampled_from(["y", "z"]))
def test_any_single_deletion_is_detected(i, j, name):
    rng = np.random.default_rng(1)
    shape = (6, 11)
    outcomes = {"y": rng.normal(size=shape), "z": rng.normal(size=shape)}
    base = Panel([f"u{k}" for k in range(6)], range(2009, 2020), outcomes)
    assert validate_panel(base) == []
    arr = np.array(outcomes[name])
    arr[i, j] = np.nan
    report = validate_panel(base.with_outcome(name, arr))
    assert [(v.unit, v.year, v.field) for v in report] == [(f"u{i}", 2009 + j, name)]


def test_donor_pool_excludes_treated_and_exclusions():
    p = full_panel()
    spec = study(treated="c00", covariates=["gdp_growth"], exclusions={"c01"}, outcome="sme_pct")
    pool = donor_pool(p, spec)
    assert len(pool) == 45
    assert "c00" not in pool and "c01" not in pool
    assert pool == [u for u in p.units if u not in ("c00", "c01")]


def test_two_unit_pool():
    p = Panel(["A", "B"], [2000, 2001, 2002], {"y": np.ones((2, 3))})
    spec = study(treated="A", covariates=["y"], t0=2002)
    assert donor_pool(p, spec) == ["B"]


def test_everything_excluded_gives_empty_pool():
    p = Panel(["A", "B", "C"], [2000, 2001, 2002], {"y": np.ones((3, 3))})
    spec = study(treated="A", covariates=["y"], exclusions={"B", "C"}, t0=2002)
    assert donor_pool(p, spec) == []


@given(st.sets(st.sampled_from([f"u{i}" for i in range(8)])),
       st.sampled_from([f"u{i}" for i in range(8)]))
def test_donor_pool_size(exclusions, treated):
    p = random_panel(np.random.default_rng(0), n_units=8)
    exclusions = set(exclusions) - {treated}
    pool = donor_pool(p, study(treated=treated, exclusions=exclusions))
    assert treated not in pool and not (set(pool) & exclusions)
    assert len(pool) == 8 - 1 - len(exclusions)


def test_split_periods_eleven_year_window():
    p = full_panel(2)
    pre, post = split_periods(p, 2014)
    assert pre == [2009, 2010, 2011, 2012, 2013]
    assert post == [2014, 2015, 2016, 2017, 2018, 2019]


def test_split_periods_short():
    p = Panel(["a", "b"], [2000, 2001, 2002], {"y": np.ones((2, 3))})
    assert split_periods(p, 2002) == ([2000, 2001], [2002])


@given(st.integers(2005, 2025))
def test_split_periods_partitions(t0):
    p = full_panel(2)
    pre, post = split_periods(p, t0)
    assert sorted(pre + post) == list(p.years)
    assert not set(pre) & set(post)


def test_intervention_at_first_year_is_rejected():
    p = full_panel(3)
    with pytest.raises(PanelError, match="pre"):
        study(treated="c00", covariates=["gdp_growth"], outcome="sme_pct", t0=2009).check(p)


def test_study_checks():
    p = full_panel(3)
    with pytest.raises(PanelError):
        study(treated="zz", covariates=["gdp_growth"], outcome="sme_pct").check(p)
    with pytest.raises(PanelError):
        study(treated="c00", covariates=["gdp_growth"], outcome="sme_pct", exclusions={"c00"}).check(p)
    with pytest.raises(PanelError):
        study(treated="c00", covariates=[], lags=[2015], outcome="sme_pct").check(p)


def test_predictor_spec_needs_an_entry():
    with pytest.raises(PanelError):
        PredictorSpec(())
    assert PredictorSpec.from_lists([], [2013]).entries == (OutcomeLag(2013),)
