"""In-space placebo inference.

Every donor is refitted as if it were treated.  The treated gap is then ranked
against the placebo gaps, either year by year (implied p-values) or through
the ratio of post- to pre-period MSPE.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

from synthctl.errors import ScmError
from synthctl.estimator import FitOptions, ScmFit, fit
from synthctl.panel import Panel, StudySpec, donor_pool

__all__ = [
    "FilterMode",
    "PValue",
    "PlaceboSuite",
    "filter_placebos",
    "implied_p_value",
    "mspe_ratio",
    "mspe_ratio_ranking",
    "run_placebos",
]

LOGGER = logging.getLogger(__name__)


class FilterMode(enum.Enum):
    # keep u iff pre_mspe(u) <= threshold * pre_mspe(treated)
    PRE_MSPE_MULTIPLE = "pre-mspe-multiple"
    # keep u iff post_mspe(u) / pre_mspe(u) < threshold
    POST_PRE_RATIO = "post-pre-ratio"


@dataclass(frozen=True)
class PValue:
    year: int
    exceed: int
    total: int

    @property
    def fraction(self) -> Fraction:
        return Fraction(self.exceed, self.total)

    @property
    def p(self) -> float:
        return self.exceed / self.total

    def __str__(self) -> str:
        return f"{self.exceed}/{self.total}"


@dataclass(frozen=True, eq=False)
class PlaceboSuite:
    treated_fit: ScmFit
    placebo_fits: dict[str, ScmFit]
    failures: dict[str, str] = field(default_factory=dict)
    order: tuple[str, ...] = ()
    filter_mode: FilterMode = FilterMode.PRE_MSPE_MULTIPLE
    filter_threshold: float = 10.0
    retained: tuple[str, ...] = ()

    @property
    def treated(self) -> str:
        return self.treated_fit.treated

    def fits(self) -> dict[str, ScmFit]:
        """Treated and placebo fits keyed by unit, in panel order."""
        everything = {self.treated: self.treated_fit, **self.placebo_fits}
        order = self.order or tuple(everything)
        return {u: everything[u] for u in order if u in everything}

    def refiltered(self, mode: FilterMode, threshold: float) -> PlaceboSuite:
        suite = replace(self, filter_mode=FilterMode(mode), filter_threshold=float(threshold))
        return replace(suite, retained=tuple(filter_placebos(suite)))


def run_placebos(
    panel: Panel,
    spec: StudySpec,
    opts: FitOptions | None = None,
    *,
    mode: FilterMode = FilterMode.PRE_MSPE_MULTIPLE,
    threshold: float = 10.0,
    drop_treated: bool = True,
    treated_fit: ScmFit | None = None,
) -> PlaceboSuite:
    """Fit every donor as a pseudo-treated unit.

    Placebo studies reuse the predictor spec and options of the treated study.
    With ``drop_treated`` the real treated unit is left out of every placebo
    pool.  Failing placebo fits are recorded in ``failures`` rather than raised.
    """
    opts = opts or FitOptions()
    if treated_fit is None:
        treated_fit = fit(panel, spec, opts)
    placebos: dict[str, ScmFit] = {}
    failures: dict[str, str] = {}
    for unit in donor_pool(panel, spec):
        placebo_spec = spec.as_placebo(unit, drop_treated=drop_treated)
        try:
            placebos[unit] = fit(panel, placebo_spec, opts)
        except ScmError as exc:
            LOGGER.info("placebo fit for %s failed: %s", unit, exc)
            failures[unit] = str(exc)
    order = tuple(u for u in panel.units if u == spec.treated or u in placebos)
    suite = PlaceboSuite(treated_fit, placebos, failures, order, FilterMode(mode), float(threshold))
    return replace(suite, retained=tuple(filter_placebos(suite)))


def filter_placebos(suite: PlaceboSuite) -> list[str]:
    """Units kept for p-value computation; the treated unit is always kept.

    In pre-MSPE-multiple mode a treated pre-MSPE of exactly zero keeps only
    placebos whose own pre-MSPE is zero as well.
    """
    t = suite.filter_threshold
    treated_pre = suite.treated_fit.pre_mspe
    kept = []
    for unit, f in suite.fits().items():
        if unit == suite.treated:
            kept.append(unit)
        elif suite.filter_mode is FilterMode.PRE_MSPE_MULTIPLE:
            if treated_pre == 0.0:
                keep = f.pre_mspe == 0.0
            else:
                keep = math.isinf(t) or f.pre_mspe <= t * treated_pre
            if keep:
                kept.append(unit)
        else:
            if math.isinf(t) or mspe_ratio(f) < t:
                kept.append(unit)
    return kept


def implied_p_value(suite: PlaceboSuite, year: int) -> PValue:
    """Share of retained units whose absolute gap is at least the treated one."""
    treated_fit = suite.treated_fit
    if year not in treated_fit.post_years:
        raise ScmError(f"year {year} is not in the post-intervention period")
    fits = suite.fits()
    target = abs(treated_fit.gap_at(year))
    retained = suite.retained or (suite.treated,)
    exceed = sum(1 for u in retained if abs(fits[u].gap_at(year)) >= target)
    return PValue(int(year), exceed, len(retained))


def mspe_ratio(f: ScmFit) -> float:
    """post/pre MSPE; ``inf`` for a perfect pre-fit with post error, 1 when both are zero."""
    if f.pre_mspe == 0.0:
        return math.inf if f.post_mspe > 0.0 else 1.0
    return f.post_mspe / f.pre_mspe


def mspe_ratio_ranking(suite: PlaceboSuite) -> tuple[dict[str, float], int]:
    """Ratios for every fitted unit (unfiltered) and the treated rank (1 = largest).

    Equal ratios are ordered by panel unit order.
    """
    fits = suite.fits()
    ratios = {u: mspe_ratio(f) for u, f in fits.items()}
    position = {u: i for i, u in enumerate(fits)}
    ranked = sorted(ratios, key=lambda u: (-ratios[u], position[u]))
    return ratios, ranked.index(suite.treated) + 1
