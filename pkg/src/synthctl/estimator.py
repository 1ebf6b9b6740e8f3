"""Synthetic control fit.

The fit is a nested program.  For a given diagonal predictor importance ``v``
the donor weights solve

    min_w (x1 - X0 w)' diag(v) (x1 - X0 w)    over the simplex,

and ``v`` itself is chosen on the simplex to minimise the pre-period mean
squared outcome error of the resulting synthetic unit.  The outer problem is
non-convex, so it is searched with a seeded multi-start coordinate search.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from synthctl.errors import CoverageError, DegeneratePoolError, PanelError
from synthctl.panel import (
    OutcomeLag,
    Panel,
    StudySpec,
    donor_pool,
    require_valid,
    split_periods,
)
from synthctl.simplex import _active_set

__all__ = [
    "FitOptions",
    "PredictorMatrices",
    "PredictorRow",
    "ScmFit",
    "build_matrices",
    "fit",
    "optimize_importance",
    "solve_weights_given_v",
    "tracking_error_reduction",
]

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitOptions:
    """Knobs for :func:`fit`.

    ``importance`` pins the predictor importance and skips the outer search.
    ``start_budget`` counts outcome-loss evaluations per start; 0 means the
    equal-importance fallback.
    """

    seed: int = 0
    starts: int = 16
    start_budget: int = 200
    inner_max_iter: int = 1000
    inner_tol: float = 1e-10
    initial_step: float = 0.5
    min_step: float = 1e-4
    adequacy_theta: float = 0.5
    importance: tuple[float, ...] | None = None


@dataclass(frozen=True)
class PredictorMatrices:
    labels: tuple[str, ...]
    donors: tuple[str, ...]
    x1: np.ndarray
    x0: np.ndarray
    z1: np.ndarray
    z0: np.ndarray
    scaling: np.ndarray
    coverage: np.ndarray

    @property
    def k(self) -> int:
        return self.x0.shape[0]

    @property
    def n_donors(self) -> int:
        return self.x0.shape[1]


@dataclass(frozen=True)
class PredictorRow:
    label: str
    treated: float
    synthetic: float
    pool_mean: float


@dataclass(frozen=True, eq=False)
class ScmFit:
    treated: str
    donors: tuple[str, ...]
    years: tuple[int, ...]
    intervention_year: int
    weights: np.ndarray
    importance: np.ndarray
    actual: np.ndarray
    synthetic: np.ndarray
    gap: np.ndarray
    pre_mspe: float
    post_mspe: float
    predictor_table: tuple[PredictorRow, ...]
    adequate: bool
    adequacy_bound: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    @property
    def pre_years(self) -> list[int]:
        return [y for y in self.years if y < self.intervention_year]

    @property
    def post_years(self) -> list[int]:
        return [y for y in self.years if y >= self.intervention_year]

    @property
    def pre_rmse(self) -> float:
        return float(np.sqrt(self.pre_mspe))

    def gap_at(self, year: int) -> float:
        return float(self.gap[self.years.index(int(year))])

    def synthetic_at(self, year: int) -> float:
        return float(self.synthetic[self.years.index(int(year))])

    def actual_at(self, year: int) -> float:
        return float(self.actual[self.years.index(int(year))])

    def weight_map(self) -> dict[str, float]:
        return {d: float(w) for d, w in zip(self.donors, self.weights)}


def _pre_mask(years, t0) -> np.ndarray:
    return np.array([y < t0 for y in years])


def build_matrices(panel: Panel, spec: StudySpec) -> PredictorMatrices:
    """Predictor and pre-period outcome matrices for the treated unit and its pool.

    Covariate entries are pre-period means over the available (non-missing)
    years; lag entries are raw outcome values.  ``coverage`` records the
    fraction of pre years observed per predictor and unit (treated first).
    """
    spec.check(panel)
    donors = donor_pool(panel, spec)
    if not donors:
        raise DegeneratePoolError(f"donor pool for {spec.treated!r} is empty")
    pre, _ = split_periods(panel, spec.intervention_year)
    pre_cols = [panel.year_index(y) for y in pre]
    rows = [panel.unit_index(spec.treated)] + [panel.unit_index(d) for d in donors]
    outcome = panel.outcomes[spec.outcome]

    k = len(spec.predictors.entries)
    x = np.empty((k, len(rows)))
    coverage = np.empty((k, len(rows)))
    for i, entry in enumerate(spec.predictors.entries):
        if isinstance(entry, OutcomeLag):
            x[i] = outcome[rows, panel.year_index(entry.year)]
            coverage[i] = 1.0
            continue
        block = panel.series(entry.series)[np.ix_(rows, pre_cols)]
        observed = np.isfinite(block)
        counts = observed.sum(axis=1)
        for r, n in zip(rows, counts):
            if n == 0:
                raise CoverageError(
                    f"predictor {entry.series!r} has no pre-period values for unit "
                    f"{panel.units[r]!r}"
                )
        x[i] = np.where(observed, block, 0.0).sum(axis=1) / counts
        coverage[i] = counts / len(pre_cols)

    if spec.predictors.normalize:
        scaling = x.std(axis=1, ddof=1)
        flat = [label for label, s in zip(spec.predictors.labels, scaling) if not s > 0]
        if flat:
            raise PanelError(f"predictors with zero cross-unit spread cannot be normalised: {flat}")
    else:
        scaling = np.ones(k)

    return PredictorMatrices(
        labels=tuple(spec.predictors.labels),
        donors=tuple(donors),
        x1=x[:, 0].copy(),
        x0=x[:, 1:].copy(),
        z1=outcome[rows[0], pre_cols].copy(),
        z0=outcome[np.ix_(rows[1:], pre_cols)].T.copy(),
        scaling=scaling,
        coverage=coverage,
    )


def _check_finite(m: PredictorMatrices) -> None:
    for name in ("x1", "x0", "z1", "z0", "scaling"):
        if not np.all(np.isfinite(getattr(m, name))):
            raise PanelError(f"non-finite entries in predictor matrix {name}")


def solve_weights_given_v(
    m: PredictorMatrices, v, *, max_iter: int = 1000, tol: float = 1e-10
) -> np.ndarray:
    """Donor weights minimising the v-weighted predictor discrepancy."""
    _check_finite(m)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (m.k,):
        raise ValueError(f"importance has shape {v.shape}, expected ({m.k},)")
    if m.n_donors == 0:
        raise ValueError("no columns to weight")
    return _weights(m, v, max_iter, tol)


def _weights(m: PredictorMatrices, v: np.ndarray, max_iter: int, tol: float) -> np.ndarray:
    # unchecked: callers have validated m and v
    root = np.sqrt(v) / m.scaling
    return _active_set(m.x0 * root[:, None], m.x1 * root, max_iter, tol)


def _outcome_loss(m: PredictorMatrices, w: np.ndarray) -> float:
    r = m.z1 - m.z0 @ w
    return float(r @ r) / r.size


def _normalise(v: np.ndarray) -> np.ndarray:
    return v / v.sum()


def _coordinate_search(loss, v0: np.ndarray, opts: FitOptions, stop_at: float):
    v = v0
    f = loss(v)
    evals = 1
    step = opts.initial_step
    k = v.size
    while evals < opts.start_budget and step >= opts.min_step and f > stop_at:
        improved = False
        for i in range(k):
            for sign in (1.0, -1.0):
                cand = v.copy()
                cand[i] = max(cand[i] + sign * step, 0.0)
                if cand.sum() <= 0.0:
                    continue
                cand = _normalise(cand)
                fc = loss(cand)
                evals += 1
                if fc < f:
                    v, f, improved = cand, fc, True
                    break
                if evals >= opts.start_budget:
                    break
            if evals >= opts.start_budget:
                break
        if not improved:
            step /= 2.0
    return v, f, evals


def optimize_importance(
    m: PredictorMatrices, opts: FitOptions | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Choose predictor importance ``v`` (on the simplex) and the implied weights.

    Starts are the equal-importance vector followed by Dirichlet(1) draws from
    ``numpy.random.default_rng(seed)`` (PCG64).  The best start wins, ties going
    to the lower start index.
    """
    opts = opts or FitOptions()
    _check_finite(m)
    k = m.k

    if m.n_donors == 0:
        raise ValueError("no columns to weight")

    def inner(v):
        return _weights(m, v, opts.inner_max_iter, opts.inner_tol)

    equal = np.full(k, 1.0 / k)
    if k == 1 or opts.start_budget <= 0 or opts.starts <= 0:
        return equal, inner(equal)

    cache: dict[bytes, float] = {}

    def loss(v):
        key = v.tobytes()
        if key not in cache:
            cache[key] = _outcome_loss(m, inner(v))
        return cache[key]

    # an exact pre-period fit cannot be improved on
    stop_at = 1e-24 * max(1.0, float(np.mean(m.z1 ** 2)))
    rng = np.random.default_rng(opts.seed)
    starts = [equal] + [rng.dirichlet(np.ones(k)) for _ in range(opts.starts - 1)]
    best = None
    for idx, v0 in enumerate(starts):
        v, f, _ = _coordinate_search(loss, v0, opts, stop_at)
        if best is None or f < best[0]:
            best = (f, idx, v)
        if best[0] <= stop_at:
            break
    LOGGER.debug("outer search: best loss %.6g from start %d", best[0], best[1])
    v = best[2]
    return v, inner(v)


def fit(panel: Panel, spec: StudySpec, opts: FitOptions | None = None) -> ScmFit:
    """Fit the synthetic control for ``spec.treated`` over every panel year."""
    opts = opts or FitOptions()
    require_valid(panel)
    m = build_matrices(panel, spec)
    if opts.importance is not None:
        v = _normalise(np.asarray(opts.importance, dtype=np.float64))
        w = solve_weights_given_v(m, v, max_iter=opts.inner_max_iter, tol=opts.inner_tol)
    else:
        v, w = optimize_importance(m, opts)

    outcome = panel.outcomes[spec.outcome]
    actual = outcome[panel.unit_index(spec.treated)].copy()
    donor_rows = [panel.unit_index(d) for d in m.donors]
    synthetic = w @ outcome[donor_rows]
    gap = actual - synthetic
    pre = _pre_mask(panel.years, spec.intervention_year)
    pre_mspe = float(np.mean(gap[pre] ** 2))
    post_mspe = float(np.mean(gap[~pre] ** 2))

    bound = opts.adequacy_theta * float(np.std(actual[pre], ddof=1))
    adequate = bool(np.sqrt(pre_mspe) <= bound)

    synth_x = m.x0 @ w
    pool_x = m.x0.mean(axis=1)
    table = tuple(
        PredictorRow(label, float(t), float(s), float(p))
        for label, t, s, p in zip(m.labels, m.x1, synth_x, pool_x)
    )
    return ScmFit(
        treated=spec.treated,
        donors=m.donors,
        years=panel.years,
        intervention_year=spec.intervention_year,
        weights=w,
        importance=v,
        actual=actual,
        synthetic=synthetic,
        gap=gap,
        pre_mspe=pre_mspe,
        post_mspe=post_mspe,
        predictor_table=table,
        adequate=adequate,
        adequacy_bound=bound,
        diagnostics={"coverage": m.coverage.tolist(), "scaling": m.scaling.tolist()},
    )


def tracking_error_reduction(rows) -> float:
    """Relative drop in summed absolute percentage predictor deviation.

    Compares the synthetic unit against the donor-pool mean, both measured
    relative to the treated value.  Accepts an :class:`ScmFit` or an iterable
    of :class:`PredictorRow`; rows whose treated value is exactly zero are
    skipped (see :func:`tracking_error_terms`).
    """
    num, den, _ = tracking_error_terms(rows)
    return 1.0 - num / den


def tracking_error_terms(rows) -> tuple[float, float, list[str]]:
    """Summed synthetic and pool deviations plus the labels skipped for a zero treated value."""
    rows = list(rows.predictor_table if isinstance(rows, ScmFit) else rows)
    num = den = 0.0
    skipped = []
    for row in rows:
        if row.treated == 0.0:
            skipped.append(row.label)
            continue
        num += abs(row.treated - row.synthetic) / abs(row.treated)
        den += abs(row.treated - row.pool_mean) / abs(row.treated)
    if len(skipped) == len(rows) or den == 0.0:
        raise PanelError("tracking error reduction is undefined for these predictors")
    return num, den, skipped
