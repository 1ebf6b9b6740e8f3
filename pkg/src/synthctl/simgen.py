"""Seeded factor-model panels with known donor structure and treatment effect.

Outcomes follow ``y_it = level + alpha_i + lambda_i . f_t + e_it`` where the
factor paths ``f`` are Gaussian random walks.  Covariates are linear in the
unit's ``(alpha_i, lambda_i)`` plus year-level noise.  The treated unit (the
first unit) is either drawn like every donor or built as an exact convex
combination of donor outcomes and covariates.

Randomness comes from ``numpy.random.Generator(PCG64(seed))`` and is consumed
in a fixed order: donor fixed effects, loadings, factor increments, covariate
coefficients, covariate noise, outcome noise, treated draws.  Changing that
order changes every fixture.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from synthctl.errors import ScmError
from synthctl.panel import Panel, PredictorSpec, StudySpec

__all__ = ["FactorModelConfig", "GroundTruth", "generate", "study_for"]


@dataclass(frozen=True)
class FactorModelConfig:
    n_units: int = 10
    first_year: int = 2009
    last_year: int = 2019
    intervention_year: int = 2014
    n_factors: int = 2
    n_covariates: int = 3
    level: float = 20.0
    unit_sd: float = 3.0
    loading_sd: float = 1.0
    factor_sd: float = 1.0
    covariate_noise_sd: float = 0.1
    noise_sd: float = 0.0
    # None draws the treated unit like any donor; otherwise donor name -> weight
    treated_weights: Mapping[str, float] | None = None
    effect_path: Mapping[int, float] | None = None
    relative_effect: float | None = None
    # added to the treated outcome in every year, pushing it off the donor hull
    treated_offset: float = 0.0
    outcome_name: str = "y"
    unit_names: Sequence[str] | None = None
    loadings: Sequence[Sequence[float]] | None = None
    factor_paths: Sequence[Sequence[float]] | None = None
    seed: int = 0

    @property
    def years(self) -> list[int]:
        return list(range(self.first_year, self.last_year + 1))

    def names(self) -> list[str]:
        if self.unit_names is not None:
            names = [str(n) for n in self.unit_names]
            if len(names) != self.n_units:
                raise ScmError(f"{len(names)} unit names for {self.n_units} units")
            return names
        return ["treated"] + [f"donor{j:02d}" for j in range(1, self.n_units)]


@dataclass(frozen=True, eq=False)
class GroundTruth:
    treated: str
    weights: dict[str, float] | None
    counterfactual: np.ndarray
    effect: np.ndarray
    years: tuple[int, ...] = field(default=())


def _check_weights(weights: Mapping[str, float], donors: list[str]) -> dict[str, float]:
    unknown = set(weights) - set(donors)
    if unknown:
        raise ScmError(f"weights name units outside the donor pool: {sorted(unknown)}")
    w = {d: float(weights.get(d, 0.0)) for d in donors}
    if any(not np.isfinite(x) or x < 0 for x in w.values()):
        raise ScmError("treated weights must be finite and non-negative")
    if abs(sum(w.values()) - 1.0) > 1e-9:
        raise ScmError(f"treated weights sum to {sum(w.values())!r}, not 1")
    return w


def generate(config: FactorModelConfig) -> tuple[Panel, GroundTruth]:
    """Draw a balanced panel and the record of what generated it."""
    if config.noise_sd < 0 or config.covariate_noise_sd < 0:
        raise ScmError("noise standard deviations must be non-negative")
    if config.n_units < 2:
        raise ScmError("need at least two units")
    names = config.names()
    donors = names[1:]
    years = config.years
    n, T, F, C = config.n_units, len(years), config.n_factors, config.n_covariates
    weights = None
    if config.treated_weights is not None:
        weights = _check_weights(config.treated_weights, donors)

    rng = np.random.default_rng(config.seed)
    alpha = rng.normal(0.0, config.unit_sd, size=n)
    if config.loadings is not None:
        lam = np.asarray(config.loadings, dtype=np.float64).reshape(n, F)
        rng.normal(size=(n, F))
    else:
        lam = rng.normal(0.0, config.loading_sd, size=(n, F))
    if config.factor_paths is not None:
        f = np.asarray(config.factor_paths, dtype=np.float64).reshape(F, T)
        rng.normal(size=(F, T))
    else:
        f = np.cumsum(rng.normal(0.0, config.factor_sd, size=(F, T)), axis=1)
    coef = rng.normal(0.0, 1.0, size=(C, 1 + F))
    intercept = 10.0 * (1.0 + np.arange(C))
    cov_noise = rng.normal(0.0, config.covariate_noise_sd, size=(C, n, T))
    noise = rng.normal(0.0, config.noise_sd, size=(n, T))

    traits = np.column_stack([alpha, lam])
    y = config.level + alpha[:, None] + lam @ f + noise
    covs = intercept[:, None, None] + (traits @ coef.T).T[:, :, None] + cov_noise

    if weights is not None:
        w = np.array([weights[d] for d in donors])
        treated_noise = rng.normal(0.0, config.noise_sd, size=T)
        y[0] = w @ y[1:] + treated_noise
        covs[:, 0, :] = np.einsum("j,cjt->ct", w, covs[:, 1:, :])

    y[0] += config.treated_offset
    counterfactual = y[0].copy()
    effect = np.zeros(T)
    post = np.array([yr >= config.intervention_year for yr in years])
    if config.relative_effect is not None:
        effect += np.where(post, config.relative_effect * counterfactual, 0.0)
    if config.effect_path:
        for yr, delta in config.effect_path.items():
            if int(yr) >= config.intervention_year:
                effect[years.index(int(yr))] += float(delta)
    y[0] = counterfactual + effect

    panel = Panel(
        units=names,
        years=years,
        outcomes={config.outcome_name: y},
        covariates={f"x{c + 1}": covs[c] for c in range(C)},
    )
    truth = GroundTruth(names[0], weights, counterfactual, effect, tuple(years))
    return panel, truth


def study_for(config: FactorModelConfig, lags: Sequence[int] = ()) -> StudySpec:
    """Study spec matching a generated panel: all covariates plus optional lags."""
    covariates = [f"x{c + 1}" for c in range(config.n_covariates)]
    return StudySpec(
        treated=config.names()[0],
        intervention_year=config.intervention_year,
        outcome=config.outcome_name,
        predictors=PredictorSpec.from_lists(covariates, lags),
    )
