"""Headline effect quantities derived from a fitted gap series."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from synthctl.errors import ScmError
from synthctl.estimator import ScmFit
from synthctl.panel import Panel, StudySpec

__all__ = ["EffectReport", "EffectRow", "breakeven_projection", "effect_table"]


@dataclass(frozen=True)
class EffectRow:
    year: int
    actual: float
    synthetic: float
    gap: float
    # gap relative to the synthetic (counterfactual) value
    relative_effect: float | None
    # gap relative to the observed value
    relative_to_actual: float | None
    absolute_effect: float | None = None
    note: str | None = None


@dataclass(frozen=True)
class EffectReport:
    treated: str
    outcome: str
    scale: str | None
    rows: tuple[EffectRow, ...]
    breakeven_year: int | None = None

    @property
    def years(self) -> list[int]:
        return [r.year for r in self.rows]


def _ratio(num: float, den: float) -> float | None:
    return num / den if den != 0.0 else None


def effect_table(
    fit: ScmFit,
    panel: Panel,
    spec: StudySpec,
    *,
    force: bool = False,
    window: int | None = None,
) -> EffectReport:
    """Per post-year gaps, relative effects and (with a scale series) absolute counts.

    The outcome is taken to be a percentage share when a scale is configured,
    so ``absolute_effect = gap / 100 * scale``.
    """
    if not fit.adequate and not force:
        raise ScmError(f"fit for {fit.treated!r} is inadequate; pass force=True to report it")
    scale = None
    if spec.scale is not None:
        scale = panel.scale_series[spec.scale][panel.unit_index(spec.treated)]
    rows = []
    for year in fit.post_years:
        gap = fit.gap_at(year)
        synth = fit.synthetic_at(year)
        actual = fit.actual_at(year)
        absolute = None
        notes = []
        if synth == 0.0:
            notes.append("synthetic value is zero, relative_effect undefined")
        if actual == 0.0:
            notes.append("actual value is zero, relative_to_actual undefined")
        if scale is not None:
            s = float(scale[panel.year_index(year)])
            if np.isfinite(s):
                absolute = gap / 100.0 * s
            else:
                notes.append(f"scale {spec.scale!r} missing for {year}")
        rows.append(EffectRow(year, actual, synth, gap, _ratio(gap, synth), _ratio(gap, actual), absolute,
                              "; ".join(notes) or None))
    report = EffectReport(spec.treated, spec.outcome, spec.scale, tuple(rows))
    defined = [r for r in rows if r.relative_effect is not None]
    if len(defined) >= 2:
        be = breakeven_projection(report, window)
        report = EffectReport(report.treated, report.outcome, report.scale, report.rows, be)
    return report


def breakeven_projection(report, window: int | None = None) -> int | None:
    """First year at or past the zero crossing of an OLS trend in relative effects.

    The trend is fitted over the last ``window`` years with a defined relative
    effect (all of them by default).  Each input is read as the shortest decimal
    that round-trips its float, and the regression is done in exact rationals,
    so ``-0.3, -0.2`` crosses at exactly 2018 rather than a hair later.  Returns ``None``
    when the trend is flat at a non-zero level or moves away from zero.

    ``report`` may be an :class:`EffectReport` or a ``{year: effect}`` mapping.
    """
    if isinstance(report, EffectReport):
        points = [(r.year, r.relative_effect) for r in report.rows if r.relative_effect is not None]
    else:
        points = sorted((int(y), e) for y, e in report.items() if e is not None)
    if len(points) < 2:
        raise ScmError("break-even projection needs at least two years with a relative effect")
    first_year = int(points[0][0])
    if window is not None:
        if window < 2:
            raise ScmError("break-even window must cover at least two years")
        points = points[-window:]

    xs = [Fraction(y) for y, _ in points]
    ys = [Fraction(repr(float(e))) for _, e in points]
    n = len(points)
    xbar = sum(xs) / n
    ybar = sum(ys) / n
    sxx = sum((x - xbar) ** 2 for x in xs)
    sxy = sum((x - xbar) * (y - ybar) for x, y in zip(xs, ys))
    slope = sxy / sxx
    if slope == 0:
        return first_year if ybar == 0 else None
    level = ybar + slope * (xs[-1] - xbar)
    if level != 0 and (level > 0) == (slope > 0):
        return None
    return math.ceil(xbar - ybar / slope)
