"""Panel CSV I/O, study configuration files and cached indicator downloads.

Panels travel as long CSV with the header ``unit,year,series,value``; an empty
``value`` is a missing cell.  Values are written with Python's shortest
round-trip float repr so that reading a written panel reproduces it exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import httpx
import numpy as np
import yaml

from synthctl.errors import FetchError, IngestError
from synthctl.estimator import FitOptions
from synthctl.inference import FilterMode
from synthctl.panel import Panel, PredictorSpec, StudySpec

__all__ = [
    "CSV_HEADER",
    "CACHE_ENV",
    "IndicatorSource",
    "StudyConfig",
    "atomic_write",
    "fetch_indicators",
    "load_panel",
    "load_study_config",
    "read_records",
    "write_panel_csv",
]

LOGGER = logging.getLogger(__name__)

CSV_HEADER = ("unit", "year", "series", "value")
CACHE_ENV = "SYNTHCTL_CACHE_DIR"


def atomic_write(path: Path, data: bytes | str) -> None:
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_value(value: float) -> str:
    value = float(value)
    return "" if not np.isfinite(value) else repr(value)


def read_records(path) -> list[tuple[str, int, str, float]]:
    """Parse one long-format CSV into ``(unit, year, series, value)`` tuples."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestError(f"{path}: no rows")
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise IngestError(f"{path}: header must be {','.join(CSV_HEADER)}, got {','.join(header)}")
        records, problems = [], []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 4:
                problems.append(f"line {line}: expected 4 fields, got {len(row)}")
                continue
            unit, year, series, value = (c.strip() for c in row)
            if not unit or not series:
                problems.append(f"line {line}: empty unit or series")
                continue
            try:
                year_i = int(year)
            except ValueError:
                problems.append(f"line {line}: year {year!r} is not an integer")
                continue
            try:
                val = float(value) if value else float("nan")
            except ValueError:
                problems.append(f"line {line}: value {value!r} is not a number")
                continue
            records.append((unit, year_i, series, val))
    if problems:
        raise IngestError(f"{path}: malformed rows: " + "; ".join(problems))
    if not records:
        raise IngestError(f"{path}: no rows")
    return records


def load_panel(
    paths: Sequence | str | Path,
    outcomes: Sequence[str],
    covariates: Sequence[str] = (),
    scales: Sequence[str] = (),
    overrides: Sequence = (),
) -> Panel:
    """Merge long CSVs into a :class:`Panel`.

    Units keep their order of first appearance and years span the observed
    range.  Duplicate ``(unit, year, series)`` keys across the inputs are an
    error; rows in ``overrides`` are applied afterwards and replace values.
    Series present in the files but not declared are ignored.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    values: dict[tuple[str, int, str], float] = {}
    units: dict[str, None] = {}
    for path in paths:
        for unit, year, series, val in read_records(path):
            key = (unit, year, series)
            if key in values:
                raise IngestError(f"duplicate key (unit={unit}, year={year}, series={series}) in {path}")
            values[key] = val
            units.setdefault(unit)
    for path in overrides:
        for unit, year, series, val in read_records(path):
            key = (unit, year, series)
            old = values.get(key)
            LOGGER.info("override %s: %r -> %r (%s)", key, old, val, path)
            values[key] = val
            units.setdefault(unit)

    declared = list(outcomes) + list(covariates) + list(scales)
    present = {s for _, _, s in values}
    missing = [s for s in declared if s not in present]
    if missing:
        raise IngestError(f"declared series not found in panel files: {missing}")
    all_years = [y for _, y, _ in values]
    years = list(range(min(all_years), max(all_years) + 1))
    unit_list = list(units)

    def grid(series):
        arr = np.full((len(unit_list), len(years)), np.nan)
        for i, u in enumerate(unit_list):
            for j, y in enumerate(years):
                arr[i, j] = values.get((u, y, series), np.nan)
        return arr

    return Panel(
        units=unit_list,
        years=years,
        outcomes={s: grid(s) for s in outcomes},
        covariates={s: grid(s) for s in covariates},
        scale_series={s: grid(s) for s in scales},
    )


def panel_csv_text(panel: Panel, series: Iterable[str] | None = None) -> str:
    rows = [",".join(CSV_HEADER)]
    names = list(series) if series is not None else panel.series_names()
    for i, unit in enumerate(panel.units):
        for name in names:
            arr = panel.series(name)
            for j, year in enumerate(panel.years):
                rows.append(f"{unit},{year},{name},{format_value(arr[i, j])}")
    return "\n".join(rows) + "\n"


def write_panel_csv(panel: Panel, path, series: Iterable[str] | None = None) -> Path:
    path = Path(path)
    atomic_write(path, panel_csv_text(panel, series))
    return path


@dataclass(frozen=True)
class StudyConfig:
    panel_files: tuple[Path, ...]
    overrides: tuple[Path, ...]
    outcomes: tuple[str, ...]
    covariates: tuple[str, ...]
    scales: tuple[str, ...]
    study: StudySpec
    fit: FitOptions
    filter_mode: FilterMode | None = None
    filter_threshold: float = 10.0
    drop_treated: bool = True
    breakeven_window: int | None = None
    force_effects: bool = False
    source: Path | None = None

    def load_panel(self) -> Panel:
        return load_panel(self.panel_files, self.outcomes, self.covariates, self.scales, self.overrides)


_FIT_KEYS = {f for f in FitOptions.__dataclass_fields__}


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise IngestError(f"config is missing '{where}{key}'")
    return doc[key]


def load_study_config(path) -> StudyConfig:
    """Read a YAML (or JSON) study config; relative file paths resolve against it.

    Layout::

        panel: {files: [...], overrides: [...], outcomes: [...], covariates: [...], scales: [...]}
        study: {treated, intervention_year, outcome, scale, exclusions: [...]}
        predictors: {covariates: [...], lags: [...], normalize: true}
        fit: {seed, starts, start_budget, adequacy_theta, ...}
        placebo: {filter_mode, filter_threshold, drop_treated}
        effects: {breakeven_window, force}
    """
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise IngestError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise IngestError(f"config {path} must be a mapping")
    base = path.parent

    panel_doc = _require(doc, "panel", "")
    study_doc = _require(doc, "study", "")
    pred_doc = doc.get("predictors") or {}
    fit_doc = dict(doc.get("fit") or {})
    placebo_doc = doc.get("placebo") or {}
    effects_doc = doc.get("effects") or {}

    files = tuple(base / p for p in _require(panel_doc, "files", "panel."))
    overrides = tuple(base / p for p in panel_doc.get("overrides") or ())
    outcome = str(_require(study_doc, "outcome", "study."))
    outcomes = tuple(panel_doc.get("outcomes") or (outcome,))
    pred_covs = tuple(pred_doc.get("covariates") or ())
    covariates = tuple(panel_doc.get("covariates") or [c for c in pred_covs if c not in outcomes])
    scale = study_doc.get("scale")
    scales = tuple(panel_doc.get("scales") or ((scale,) if scale else ()))

    unknown = set(fit_doc) - _FIT_KEYS
    if unknown:
        raise IngestError(f"unknown fit options: {sorted(unknown)}")
    if fit_doc.get("importance") is not None:
        fit_doc["importance"] = tuple(float(x) for x in fit_doc["importance"])

    try:
        predictors = PredictorSpec.from_lists(
            pred_covs, [int(y) for y in pred_doc.get("lags") or ()], bool(pred_doc.get("normalize", True))
        )
        study = StudySpec(
            treated=str(_require(study_doc, "treated", "study.")),
            intervention_year=int(_require(study_doc, "intervention_year", "study.")),
            outcome=outcome,
            predictors=predictors,
            exclusions=frozenset(str(u) for u in study_doc.get("exclusions") or ()),
            scale=scale,
        )
        mode = placebo_doc.get("filter_mode")
        return StudyConfig(
            panel_files=files,
            overrides=overrides,
            outcomes=outcomes,
            covariates=covariates,
            scales=scales,
            study=study,
            fit=FitOptions(**fit_doc),
            filter_mode=FilterMode(mode) if mode else None,
            filter_threshold=float(placebo_doc.get("filter_threshold", 10.0)),
            drop_treated=bool(placebo_doc.get("drop_treated", True)),
            breakeven_window=effects_doc.get("breakeven_window"),
            force_effects=bool(effects_doc.get("force", False)),
            source=path,
        )
    except (TypeError, ValueError) as exc:
        raise IngestError(f"invalid config {path}: {exc}") from exc


@dataclass(frozen=True)
class IndicatorSource:
    """A World Bank style paged-JSON indicator API."""

    name: str = "worldbank"
    base_url: str = "https://api.worldbank.org/v2"
    per_page: int = 1000
    timeout: float = 30.0


@dataclass
class FetchResult:
    csv_files: dict[str, Path] = field(default_factory=dict)
    missing_cells: dict[str, list[tuple[str, int]]] = field(default_factory=dict)
    fetched: list[str] = field(default_factory=list)
    cached: list[str] = field(default_factory=list)


def default_cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV) or Path.home() / ".cache" / "synthctl")


def _cache_key(source: IndicatorSource, series: str, units: Sequence[str], years: Sequence[int]) -> str:
    blob = json.dumps([source.base_url, series, list(units), [min(years), max(years)]])
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _api_error(payload) -> str | None:
    if isinstance(payload, list) and payload and isinstance(payload[0], dict) and "message" in payload[0]:
        return json.dumps(payload[0]["message"])
    return None


def _fetch_pages(client: httpx.Client, source, series, units, years) -> list[bytes]:
    url = f"{source.base_url.rstrip('/')}/country/{';'.join(units)}/indicator/{series}"
    pages, page, total_pages = [], 1, 1
    while page <= total_pages:
        params = {"format": "json", "per_page": source.per_page,
                  "date": f"{min(years)}:{max(years)}", "page": page}
        resp = client.get(url, params=params)
        resp.raise_for_status()
        body = resp.content
        payload = json.loads(body)
        err = _api_error(payload)
        if err is not None:
            raise FetchError(f"indicator source rejected series {series!r}: {err}")
        if not isinstance(payload, list) or len(payload) < 2:
            raise FetchError(f"unexpected response for series {series!r}: {body[:200]!r}")
        total_pages = int(payload[0].get("pages") or 1)
        pages.append(body)
        page += 1
    return pages


def _pages_to_records(pages: list[bytes], series, units, years):
    wanted_units, wanted_years = set(units), set(years)
    grid: dict[tuple[str, int], float] = {}
    for body in pages:
        payload = json.loads(body)
        for item in payload[1] or ():
            code = item.get("countryiso3code") or (item.get("country") or {}).get("id")
            try:
                year = int(item.get("date"))
            except (TypeError, ValueError):
                continue
            if code in wanted_units and year in wanted_years and item.get("value") is not None:
                grid[(code, year)] = float(item["value"])
    records, missing = [], []
    for u in units:
        for y in sorted(years):
            val = grid.get((u, y), float("nan"))
            if not np.isfinite(val):
                missing.append((u, y))
            records.append((u, y, series, val))
    return records, missing


def fetch_indicators(
    source: IndicatorSource,
    series: Sequence[str],
    units: Sequence[str],
    years: Sequence[int],
    cache_dir=None,
    *,
    offline: bool = False,
    force: bool = False,
    client: httpx.Client | None = None,
) -> FetchResult:
    """Download indicator series into long CSVs, cache first.

    Raw response pages are kept verbatim under
    ``<cache>/<source>/<series>-<key>/page-<n>.json`` next to the derived
    ``<series>.csv``.
    A cached series is never downloaded again unless ``force`` is set.
    """
    cache = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    years = list(years)
    result = FetchResult()
    unavailable = []
    own_client = client is None and not offline
    if own_client:
        client = httpx.Client(timeout=source.timeout)
    try:
        for s in series:
            folder = cache / source.name / f"{s}-{_cache_key(source, s, units, years)}"
            marker = folder / "complete.json"
            if marker.exists() and not force:
                n_pages = json.loads(marker.read_text())["pages"]
                pages = [(folder / f"page-{i}.json").read_bytes() for i in range(1, n_pages + 1)]
                result.cached.append(s)
            elif offline:
                unavailable.append(s)
                continue
            else:
                try:
                    pages = _fetch_pages(client, source, s, units, years)
                except httpx.HTTPError as exc:
                    LOGGER.warning("fetching %s failed: %s", s, exc)
                    unavailable.append(s)
                    continue
                for i, body in enumerate(pages, start=1):
                    atomic_write(folder / f"page-{i}.json", body)
                atomic_write(marker, json.dumps({"series": s, "pages": len(pages)}, sort_keys=True))
                result.fetched.append(s)
            records, missing = _pages_to_records(pages, s, units, years)
            if missing:
                LOGGER.warning("series %s is missing %d of %d cells", s, len(missing), len(records))
                result.missing_cells[s] = missing
            text = ",".join(CSV_HEADER) + "\n" + "".join(
                f"{u},{y},{name},{format_value(v)}\n" for u, y, name, v in records
            )
            out = folder / f"{s}.csv"
            atomic_write(out, text)
            result.csv_files[s] = out
    finally:
        if own_client:
            client.close()
    if unavailable:
        raise FetchError(f"series unavailable (network failure or cold cache): {unavailable}")
    return result
