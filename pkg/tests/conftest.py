from pathlib import Path

import numpy as np
import pytest

from synthctl.estimator import PredictorRow, ScmFit
from synthctl.panel import Panel, PredictorSpec, StudySpec

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"

YEARS = list(range(2009, 2020))
T0 = 2014


def make_fit(unit, gap, *, years=YEARS, t0=T0, synthetic=None, adequate=True):
    """An ScmFit with a prescribed gap series (actual = synthetic + gap)."""
    gap = np.asarray(gap, dtype=float)
    synthetic = np.full(len(years), 10.0) if synthetic is None else np.asarray(synthetic, float)
    actual = synthetic + gap
    gap = actual - synthetic
    pre = np.array([y < t0 for y in years])
    return ScmFit(
        treated=unit,
        donors=(),
        years=tuple(years),
        intervention_year=t0,
        weights=np.array([]),
        importance=np.array([1.0]),
        actual=actual,
        synthetic=synthetic,
        gap=gap,
        pre_mspe=float(np.mean(gap[pre] ** 2)),
        post_mspe=float(np.mean(gap[~pre] ** 2)),
        predictor_table=(PredictorRow("x", 1.0, 1.0, 1.0),),
        adequate=adequate,
    )


def gap_path(pre_level, post_level, years=YEARS, t0=T0):
    """Alternating-sign gap with constant magnitude before and after t0."""
    out = []
    for i, y in enumerate(years):
        sign = 1.0 if i % 2 == 0 else -1.0
        out.append(sign * (pre_level if y < t0 else post_level))
    return out


def random_panel(rng, n_units=6, years=YEARS, n_cov=2):
    units = [f"u{i}" for i in range(n_units)]
    shape = (n_units, len(years))
    return Panel(
        units=units,
        years=years,
        outcomes={"y": rng.normal(10, 2, size=shape)},
        covariates={f"c{i}": rng.normal(5, 1, size=shape) for i in range(n_cov)},
    )


def study(treated="u0", covariates=("c0", "c1"), lags=(), exclusions=(), t0=T0, outcome="y",
          normalize=True, scale=None):
    return StudySpec(
        treated=treated,
        intervention_year=t0,
        outcome=outcome,
        predictors=PredictorSpec.from_lists(covariates, lags, normalize),
        exclusions=frozenset(exclusions),
        scale=scale,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_suite(treated_gap, placebo_gaps, *, mode="pre-mspe-multiple", threshold=float("inf"),
               treated="T", years=YEARS, t0=T0):
    """A PlaceboSuite assembled from prescribed gap paths, treated unit first."""
    from synthctl.inference import FilterMode, PlaceboSuite

    tf = make_fit(treated, treated_gap, years=years, t0=t0)
    placebos = {u: make_fit(u, g, years=years, t0=t0) for u, g in placebo_gaps.items()}
    suite = PlaceboSuite(tf, placebos, order=(treated, *placebos))
    return suite.refiltered(FilterMode(mode), threshold)


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number, title, ok, detail):
    ACCEPTANCE_LINES[number] = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}"
    print(ACCEPTANCE_LINES[number])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
