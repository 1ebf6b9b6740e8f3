"""Balanced unit-by-year panels, study definitions and donor-pool semantics.

A :class:`Panel` stores every series as a ``(n_units, n_years)`` float array in
the panel's declared unit order.  Missing values are ``NaN``; they are allowed
in covariates and scale series but not in outcomes.  Construction does not
validate (so that :func:`validate_panel` can report on broken inputs); the
estimator calls :func:`require_valid` before using a panel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from synthctl.errors import PanelError

__all__ = [
    "CovariateMean",
    "OutcomeLag",
    "Panel",
    "PredictorSpec",
    "StudySpec",
    "Violation",
    "donor_pool",
    "require_valid",
    "split_periods",
    "validate_panel",
]


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Panel:
    """Immutable unit x year panel.

    ``outcomes``, ``covariates`` and ``scale_series`` map a series name to an
    array of shape ``(len(units), len(years))``.
    """

    units: tuple[str, ...]
    years: tuple[int, ...]
    outcomes: Mapping[str, np.ndarray]
    covariates: Mapping[str, np.ndarray] = field(default_factory=dict)
    scale_series: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(str(u) for u in self.units))
        object.__setattr__(self, "years", tuple(int(y) for y in self.years))
        shape = (len(self.units), len(self.years))
        for attr in ("outcomes", "covariates", "scale_series"):
            frozen = {}
            for name, values in getattr(self, attr).items():
                arr = _frozen(values)
                if arr.shape != shape:
                    raise PanelError(
                        f"{attr[:-1]} {name!r} has shape {arr.shape}, expected {shape}"
                    )
                frozen[str(name)] = arr
            object.__setattr__(self, attr, frozen)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.units), len(self.years)

    def unit_index(self, unit: str) -> int:
        try:
            return self.units.index(unit)
        except ValueError:
            raise PanelError(f"unknown unit {unit!r}") from None

    def year_index(self, year: int) -> int:
        try:
            return self.years.index(int(year))
        except ValueError:
            raise PanelError(f"year {year} is outside the panel") from None

    def series(self, name: str) -> np.ndarray:
        """Look a series up by name across outcomes, covariates and scales."""
        for table in (self.outcomes, self.covariates, self.scale_series):
            if name in table:
                return table[name]
        raise PanelError(f"unknown series {name!r}")

    def series_names(self) -> list[str]:
        return [*self.outcomes, *self.covariates, *self.scale_series]

    def value(self, name: str, unit: str, year: int) -> float:
        return float(self.series(name)[self.unit_index(unit), self.year_index(year)])

    def with_outcome(self, name: str, values) -> Panel:
        """Copy of the panel with one outcome series replaced or added."""
        outcomes = dict(self.outcomes)
        outcomes[name] = values
        return Panel(self.units, self.years, outcomes, self.covariates, self.scale_series)


@dataclass(frozen=True)
class CovariateMean:
    """Pre-period mean of a covariate (or outcome) series."""

    series: str

    @property
    def label(self) -> str:
        return self.series


@dataclass(frozen=True)
class OutcomeLag:
    """Raw outcome value in a single pre-intervention year."""

    year: int

    @property
    def label(self) -> str:
        return f"outcome[{self.year}]"


PredictorEntry = Union[CovariateMean, OutcomeLag]


@dataclass(frozen=True)
class PredictorSpec:
    entries: tuple[PredictorEntry, ...]
    normalize: bool = True

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.entries:
            raise PanelError("a predictor spec needs at least one entry")

    @classmethod
    def from_lists(
        cls, covariates: Sequence[str] = (), lags: Sequence[int] = (), normalize: bool = True
    ) -> PredictorSpec:
        entries = [CovariateMean(c) for c in covariates] + [OutcomeLag(int(y)) for y in lags]
        return cls(tuple(entries), normalize)

    @property
    def labels(self) -> list[str]:
        return [e.label for e in self.entries]


@dataclass(frozen=True)
class StudySpec:
    treated: str
    intervention_year: int
    outcome: str
    predictors: PredictorSpec
    exclusions: frozenset[str] = frozenset()
    scale: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "exclusions", frozenset(self.exclusions))

    def check(self, panel: Panel) -> None:
        """Raise :class:`PanelError` unless this study is well-posed on ``panel``."""
        if self.treated not in panel.units:
            raise PanelError(f"treated unit {self.treated!r} is not in the panel")
        if self.treated in self.exclusions:
            raise PanelError(f"treated unit {self.treated!r} is also listed as excluded")
        if self.outcome not in panel.outcomes:
            raise PanelError(f"outcome {self.outcome!r} is not an outcome series of the panel")
        if self.scale is not None and self.scale not in panel.scale_series:
            raise PanelError(f"scale series {self.scale!r} is not in the panel")
        pre, post = split_periods(panel, self.intervention_year)
        if len(pre) < 2 or len(post) < 1:
            raise PanelError(
                f"intervention year {self.intervention_year} leaves {len(pre)} pre and "
                f"{len(post)} post years; need at least 2 and 1"
            )
        for entry in self.predictors.entries:
            if isinstance(entry, OutcomeLag):
                if entry.year >= self.intervention_year:
                    raise PanelError(f"lag year {entry.year} is not before the intervention")
                panel.year_index(entry.year)
            else:
                panel.series(entry.series)

    def as_placebo(self, unit: str, drop_treated: bool = True) -> StudySpec:
        """The same study with ``unit`` reassigned as the pseudo-treated unit."""
        exclusions = set(self.exclusions) - {unit}
        if drop_treated:
            exclusions.add(self.treated)
        return StudySpec(
            treated=unit,
            intervention_year=self.intervention_year,
            outcome=self.outcome,
            predictors=self.predictors,
            exclusions=frozenset(exclusions),
            scale=self.scale,
        )


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    unit: str | None = None
    year: int | None = None
    field: str | None = None


def validate_panel(panel: Panel) -> list[Violation]:
    """Collect every balance/range violation; an empty list means the panel is valid."""
    out: list[Violation] = []
    if len(panel.units) < 2:
        out.append(Violation("too_few_units", f"{len(panel.units)} units, need at least 2"))
    if len(panel.years) < 3:
        out.append(Violation("too_few_years", f"{len(panel.years)} years, need at least 3"))
    seen = set()
    for unit in panel.units:
        if not unit.strip():
            out.append(Violation("empty_unit_id", "unit id is empty", unit=unit))
        if unit in seen:
            out.append(Violation("duplicate_unit", f"unit {unit!r} appears twice", unit=unit))
        seen.add(unit)
    for prev, nxt in zip(panel.years, panel.years[1:]):
        if nxt != prev + 1:
            out.append(
                Violation("non_consecutive_years", f"years jump from {prev} to {nxt}", year=nxt)
            )
    if not panel.outcomes:
        out.append(Violation("no_outcomes", "panel declares no outcome series"))
    for name, values in panel.outcomes.items():
        for i, j in zip(*np.nonzero(~np.isfinite(values))):
            unit, year = panel.units[i], panel.years[j]
            out.append(
                Violation("missing_outcome", f"{name} missing for {unit} in {year}", unit, year, name)
            )
    for name, values in panel.scale_series.items():
        with np.errstate(invalid="ignore"):
            bad = np.isfinite(values) & (values <= 0)
        for i, j in zip(*np.nonzero(bad)):
            unit, year = panel.units[i], panel.years[j]
            out.append(
                Violation("non_positive_scale", f"{name} is {values[i, j]} for {unit} in {year}",
                          unit, year, name)
            )
    return out


def require_valid(panel: Panel) -> None:
    violations = validate_panel(panel)
    if violations:
        head = "; ".join(v.message for v in violations[:5])
        more = f" (+{len(violations) - 5} more)" if len(violations) > 5 else ""
        raise PanelError(f"invalid panel: {head}{more}")


def donor_pool(panel: Panel, spec: StudySpec) -> list[str]:
    """All units except the treated one and the exclusions, in panel order."""
    return [u for u in panel.units if u != spec.treated and u not in spec.exclusions]


def split_periods(panel: Panel, intervention_year: int) -> tuple[list[int], list[int]]:
    pre = [y for y in panel.years if y < intervention_year]
    post = [y for y in panel.years if y >= intervention_year]
    return pre, post
