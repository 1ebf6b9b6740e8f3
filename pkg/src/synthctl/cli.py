"""Command-line front end: ``synthctl {fit,placebo,simulate,fetch}``.

Every run writes into ``--out`` and refreshes ``manifest.json`` there, which
lists each artifact with its SHA-256.  Exit codes: 0 success, 1 error (a JSON
object on stderr), 2 usage error, 3 the fit ran but is inadequate.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import yaml

from synthctl.effects import EffectReport, effect_table
from synthctl.errors import IngestError, ScmError
from synthctl.estimator import ScmFit, fit, tracking_error_terms
from synthctl.inference import FilterMode, PlaceboSuite, implied_p_value, mspe_ratio_ranking, run_placebos
from synthctl.ingest import (
    IndicatorSource,
    StudyConfig,
    atomic_write,
    fetch_indicators,
    format_value,
    load_study_config,
    write_panel_csv,
)
from synthctl.simgen import FactorModelConfig, generate

LOGGER = logging.getLogger("synthctl")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INADEQUATE = 3

MANIFEST = "manifest.json"


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _dump_json(path: Path, doc) -> None:
    atomic_write(path, json.dumps(doc, indent=2, allow_nan=False) + "\n")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format_value(v)
    return str(v)


def _csv(path: Path, header, rows) -> None:
    lines = [",".join(header)] + [",".join(_cell(v) for v in row) for row in rows]
    atomic_write(path, "\n".join(lines) + "\n")


def write_manifest(out: Path) -> Path:
    files = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != MANIFEST:
            files[p.relative_to(out).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
    path = out / MANIFEST
    _dump_json(path, {"files": files})
    return path


def _options_doc(cfg: StudyConfig) -> dict:
    doc = asdict(cfg.fit)
    if doc["importance"] is not None:
        doc["importance"] = list(doc["importance"])
    return doc


def _breakeven_note(report: EffectReport | None, effects_note) -> str | None:
    if report is None:
        return effects_note
    if report.breakeven_year is not None:
        return None
    if sum(r.relative_effect is not None for r in report.rows) < 2:
        return "fewer than two post years with a defined relative effect"
    return "fitted trend in relative effects does not move toward zero"


def fit_document(f: ScmFit, cfg: StudyConfig, report: EffectReport | None, effects_note) -> dict:
    try:
        num, den, skipped = tracking_error_terms(f)
        tracking = {"value": _num(1.0 - num / den), "skipped_zero_treated": skipped}
    except ScmError as exc:
        tracking = {"value": None, "reason": str(exc)}
    return {
        "treated": f.treated,
        "outcome": cfg.study.outcome,
        "intervention_year": f.intervention_year,
        "donors": list(f.donors),
        "weights": {d: _num(w) for d, w in zip(f.donors, f.weights)},
        "importance": {row.label: _num(v) for row, v in zip(f.predictor_table, f.importance)},
        "predictors": [
            {"label": r.label, "treated": _num(r.treated), "synthetic": _num(r.synthetic),
             "pool_mean": _num(r.pool_mean)}
            for r in f.predictor_table
        ],
        "pre_mspe": _num(f.pre_mspe),
        "post_mspe": _num(f.post_mspe),
        "pre_rmse": _num(f.pre_rmse),
        "adequacy_theta": cfg.fit.adequacy_theta,
        "adequacy_bound": _num(f.adequacy_bound),
        "adequate": f.adequate,
        "tracking_error_reduction": tracking,
        "breakeven_year": report.breakeven_year if report else None,
        "breakeven_note": _breakeven_note(report, effects_note),
        "effects": "effects.csv" if report else effects_note,
        "options": _options_doc(cfg),
    }


def write_fit_artifacts(out: Path, f: ScmFit, cfg: StudyConfig, report: EffectReport | None,
                        effects_note: str | None = None, pool_mean=None) -> None:
    """``pool_mean`` is the unweighted donor average per year (blank when not given)."""
    _dump_json(out / "fit.json", fit_document(f, cfg, report, effects_note))
    pool = [None] * len(f.years) if pool_mean is None else [_num(x) for x in pool_mean]
    _csv(out / "trajectory.csv", ["year", "actual", "synthetic", "pool_mean"],
         [(y, float(a), float(s), p) for y, a, s, p in zip(f.years, f.actual, f.synthetic, pool)])
    _csv(out / "gap.csv", ["year", "actual", "synthetic", "gap"],
         [(y, float(a), float(s), float(g)) for y, a, s, g in zip(f.years, f.actual, f.synthetic, f.gap)])
    if report is not None:
        _csv(out / "effects.csv",
             ["year", "actual", "synthetic", "gap", "relative_effect", "relative_to_actual",
              "absolute_effect", "note"],
             [(r.year, r.actual, r.synthetic, r.gap, r.relative_effect, r.relative_to_actual,
               r.absolute_effect, r.note) for r in report.rows])


def inference_document(suite: PlaceboSuite) -> dict:
    ratios, rank = mspe_ratio_ranking(suite)
    notes = {}
    for u, r in ratios.items():
        if math.isinf(r):
            notes[u] = "pre-period MSPE is zero with non-zero post-period MSPE; ranked above all finite ratios"
    pvals = [implied_p_value(suite, y) for y in suite.treated_fit.post_years]
    return {
        "treated": suite.treated,
        "filter_mode": suite.filter_mode.value,
        "filter_threshold": _num(suite.filter_threshold),
        "filter_threshold_note": "infinite: no placebo is filtered out" if math.isinf(suite.filter_threshold) else None,
        "retained": list(suite.retained),
        "p_values": [
            {"year": p.year, "exceed": p.exceed, "total": p.total, "p": p.p, "ratio": str(p)}
            for p in pvals
        ],
        "mspe_ratios": {u: _num(r) for u, r in ratios.items()},
        "mspe_ratio_notes": notes,
        "treated_ratio_rank": rank,
        "ranked_units": len(ratios),
        "failures": dict(suite.failures),
    }


def write_placebo_artifacts(out: Path, suite: PlaceboSuite) -> dict:
    doc = inference_document(suite)
    _dump_json(out / "inference.json", doc)
    fits = suite.fits()
    units = list(suite.retained)
    years = suite.treated_fit.years
    _csv(out / "placebo_gaps.csv", ["year", *units],
         [(y, *(float(fits[u].gap[i]) for u in units)) for i, y in enumerate(years)])
    _csv(out / "pvalues.csv", ["year", "exceed", "total", "p"],
         [(p["year"], p["exceed"], p["total"], p["p"]) for p in doc["p_values"]])
    return doc


def _load(args) -> StudyConfig:
    cfg = load_study_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, fit=replace(cfg.fit, seed=args.seed))
    return cfg


def cmd_fit(args) -> int:
    cfg = _load(args)
    panel = cfg.load_panel()
    f = fit(panel, cfg.study, cfg.fit)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    force = args.force or cfg.force_effects
    report = note = None
    if f.adequate or force:
        report = effect_table(f, panel, cfg.study, force=True, window=cfg.breakeven_window)
    else:
        note = "skipped: inadequate pre-period fit (use --force to report anyway)"
    donors = panel.outcomes[cfg.study.outcome][[panel.unit_index(d) for d in f.donors]]
    write_fit_artifacts(out, f, cfg, report, note, np.nanmean(donors, axis=0))
    write_manifest(out)
    status = "adequate" if f.adequate else "INADEQUATE"
    print(f"{f.treated}: pre-RMSE {f.pre_rmse:.6g} (bound {f.adequacy_bound:.6g}) -> {status}")
    for d, w in sorted(f.weight_map().items(), key=lambda kv: -kv[1]):
        if w >= 0.0005:
            print(f"  {d:<24} {w:.3f}")
    return EXIT_OK if f.adequate else EXIT_INADEQUATE


def cmd_placebo(args) -> int:
    cfg = _load(args)
    mode = args.filter_mode or (cfg.filter_mode.value if cfg.filter_mode else None)
    if mode is None:
        raise IngestError("placebo runs need an explicit filter mode (--filter-mode or placebo.filter_mode)")
    threshold = args.filter_threshold if args.filter_threshold is not None else cfg.filter_threshold
    panel = cfg.load_panel()
    suite = run_placebos(panel, cfg.study, cfg.fit, mode=FilterMode(mode), threshold=threshold,
                         drop_treated=cfg.drop_treated)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = write_placebo_artifacts(out, suite)
    write_manifest(out)
    print(f"{suite.treated}: {len(suite.retained)} retained units ({mode}, threshold {threshold:g})")
    for p in doc["p_values"]:
        print(f"  {p['year']}: p = {p['p']:.3f} ({p['ratio']})")
    print(f"  MSPE ratio rank of {suite.treated}: {doc['treated_ratio_rank']} of {doc['ranked_units']}")
    return EXIT_OK if suite.treated_fit.adequate else EXIT_INADEQUATE


def _sim_config(path, seed) -> tuple[FactorModelConfig, dict]:
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(doc, dict):
        raise IngestError(f"simulation config {path} must be a mapping")
    doc = dict(doc)
    extra = {k: doc.pop(k) for k in ("lags",) if k in doc}
    known = set(FactorModelConfig.__dataclass_fields__)
    unknown = set(doc) - known
    if unknown:
        raise IngestError(f"unknown simulation settings: {sorted(unknown)}")
    if seed is not None:
        doc["seed"] = seed
    if doc.get("effect_path"):
        doc["effect_path"] = {int(k): float(v) for k, v in doc["effect_path"].items()}
    try:
        return FactorModelConfig(**doc), extra
    except TypeError as exc:
        raise IngestError(f"invalid simulation config {path}: {exc}") from exc


def cmd_simulate(args) -> int:
    config, extra = _sim_config(args.config, args.seed)
    panel, truth = generate(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_panel_csv(panel, out / "panel.csv")
    _dump_json(out / "truth.json", {
        "treated": truth.treated,
        "seed": config.seed,
        "intervention_year": config.intervention_year,
        "weights": truth.weights,
        "years": list(truth.years),
        "counterfactual": [float(x) for x in truth.counterfactual],
        "effect": [float(x) for x in truth.effect],
        "covariates": list(panel.covariates),
        "lags": extra.get("lags", []),
    })
    write_manifest(out)
    print(f"wrote {len(panel.units)} units x {len(panel.years)} years to {out / 'panel.csv'}")
    return EXIT_OK


def cmd_fetch(args) -> int:
    doc = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
    src = doc.get("source") or {}
    try:
        source = IndicatorSource(**src)
    except TypeError as exc:
        raise IngestError(f"invalid source settings in {args.config}: {exc}") from exc
    years = doc.get("years")
    if not years or len(years) != 2:
        raise IngestError("fetch config needs years: [first, last]")
    cache = args.cache_dir or doc.get("cache_dir")
    result = fetch_indicators(
        source,
        [str(s) for s in doc.get("series") or ()],
        [str(u) for u in doc.get("units") or ()],
        range(int(years[0]), int(years[1]) + 1),
        cache,
        offline=args.offline,
        force=args.force_refresh,
    )
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        for s, p in result.csv_files.items():
            atomic_write(out / p.name, p.read_bytes())
        _dump_json(out / "missing_cells.json",
                   {s: [[u, y] for u, y in cells] for s, cells in result.missing_cells.items()})
        write_manifest(out)
    for s, p in result.csv_files.items():
        gaps = len(result.missing_cells.get(s, ()))
        origin = "cache" if s in result.cached else "network"
        print(f"{s}: {p} ({origin}, {gaps} missing cells)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synthctl", description="Synthetic control studies.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", required=True, help="YAML config file")
        p.add_argument("--out", required=True, help="output run directory")
        if seed:
            p.add_argument("--seed", type=int, default=None, help="override the configured seed")

    p = sub.add_parser("fit", help="fit the treated unit and write effects and plot data")
    common(p)
    p.add_argument("--force", action="store_true", help="write effects even for an inadequate fit")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("placebo", help="in-space placebo inference")
    common(p)
    p.add_argument("--filter-mode", choices=[m.value for m in FilterMode], default=None)
    p.add_argument("--filter-threshold", type=float, default=None)
    p.set_defaults(func=cmd_placebo)

    p = sub.add_parser("simulate", help="generate a factor-model panel")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fetch", help="download indicator series into long CSVs")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="copy derived CSVs here")
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--offline", action="store_true", help="use the cache only")
    p.add_argument("--force-refresh", action="store_true", help="re-download cached series")
    p.set_defaults(func=cmd_fetch)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScmError, OSError) as exc:
        kind = type(exc).__name__
        print(json.dumps({"error": kind, "message": str(exc), "command": args.command}), file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
