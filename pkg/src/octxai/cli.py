"""Command line entry point: generate, run, explain, report, validate."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from .data import (FEATURE_SETS, LAYERS, STRATEGIES, ConfigurationError, DataError, ZoneMap, default_zone_map,
                   load_dataset, write_dataset)
from .evaluation import MODEL_KINDS
from .modelio import ModelFileError
from .report import Manifest, emit_cell
from .runner import CellError, ExperimentConfig, explain_persisted, report_persisted, run_study
from .synthgen import CohortSpec, default_paper_spec, generate_cohort

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("octxai")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _csv_list(choices):
    def parse(text):
        values = [v.strip() for v in text.split(",") if v.strip()]
        bad = [v for v in values if v not in choices]
        if bad or not values:
            raise argparse.ArgumentTypeError(f"expected a comma list from {','.join(choices)}, got {text!r}")
        return values
    return parse


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="octxai", description="Explainable MS classification from OCT thickness grids.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic cohort CSV")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--spec", help="JSON cohort spec (defaults to the published cohort statistics)")
    g.add_argument("--rho-eye", type=float, default=0.8)
    g.add_argument("--cell-sd-fraction", type=float, default=0.5)
    g.add_argument("--no-match-moments", dest="match_moments", action="store_false",
                   help="keep raw Gaussian draws instead of matching zone means and sds exactly")
    g.add_argument("--zones", help="zone map file")

    r = sub.add_parser("run", help="run the study matrix")
    r.add_argument("--seed", type=int, required=True)
    r.add_argument("--out", dest="out_dir", default="study")
    src = r.add_mutually_exclusive_group()
    src.add_argument("--dataset", help="cohort CSV (default: synthetic cohort)")
    src.add_argument("--synthetic", help="JSON cohort spec for a synthetic cohort")
    r.add_argument("--layers", type=_csv_list(LAYERS), default=list(LAYERS))
    r.add_argument("--feature-sets", type=_csv_list(FEATURE_SETS), default=list(FEATURE_SETS))
    r.add_argument("--strategies", type=_csv_list(STRATEGIES), default=list(STRATEGIES))
    r.add_argument("--models", type=_csv_list(MODEL_KINDS), default=list(MODEL_KINDS))
    r.add_argument("--k", type=int, default=10)
    r.add_argument("--test-fraction", type=float)
    r.add_argument("--zones")
    r.add_argument("--no-plots", dest="plots", action="store_false")
    r.add_argument("--jobs", dest="n_jobs", type=int, default=1)
    r.add_argument("--k-neighbors", type=int, default=5)
    r.add_argument("--explain-folds", choices=("best", "all"), default="best")
    r.add_argument("--baseline-auc", type=float)
    r.add_argument("--mirror-left", action="store_true")
    r.add_argument("--min-quality", type=float)
    r.add_argument("--config", help="JSON file; its keys override the flags")

    e = sub.add_parser("explain", help="attribution artifacts for one stored fold model")
    e.add_argument("--study", required=True)
    e.add_argument("--cell", required=True)
    e.add_argument("--fold", type=int, required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--max-items", type=int, default=10)
    e.add_argument("--no-plots", dest="plots", action="store_false")

    rep = sub.add_parser("report", help="re-emit the report tree of a stored study")
    rep.add_argument("--study", required=True)
    rep.add_argument("--explain-folds", choices=("best", "all"), default="best")

    v = sub.add_parser("validate", help="lint a dataset CSV and zone map")
    v.add_argument("--dataset")
    v.add_argument("--zones")
    return p


def _generate(a) -> int:
    zones = ZoneMap.from_file(a.zones) if a.zones else default_zone_map()
    if a.spec:
        spec = CohortSpec.from_dict({**json.loads(Path(a.spec).read_text()), "seed": a.seed})
    else:
        spec = default_paper_spec(a.seed, a.rho_eye, a.cell_sd_fraction, a.match_moments)
    samples = generate_cohort(spec, zones)
    write_dataset(samples, a.out)
    print(f"wrote {len(samples)} eye rows to {a.out}")
    return EXIT_OK


def config_from_args(a) -> ExperimentConfig:
    keys = ("seed", "out_dir", "dataset", "layers", "feature_sets", "strategies", "models", "k", "test_fraction",
            "zones", "plots", "n_jobs", "k_neighbors", "explain_folds", "baseline_auc", "mirror_left", "min_quality")
    d = {k: getattr(a, k) for k in keys}
    if a.synthetic:
        d["synthetic"] = json.loads(Path(a.synthetic).read_text())
    if a.config:
        d.update(json.loads(Path(a.config).read_text()))
    return ExperimentConfig.from_dict(d)


def _run(a) -> int:
    cfg = config_from_args(a)
    result = run_study(cfg)
    print("cell,fold,accuracy,auc")
    for cid, cell in result.cells.items():
        m = cell.folds[cell.best_fold].metrics
        print(f"{cid},{cell.best_fold},{m.accuracy:.2f},{m.auc:.4f}")
    print(f"results in {result.out_dir}")
    return EXIT_OK


def _explain(a) -> int:
    expl = explain_persisted(a.study, a.cell, a.fold)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out)
    # emit_cell writes the best-fold artifact set for whichever fold it is handed
    emit_cell(expl, out, manifest, a.max_items, a.plots)
    manifest.write()
    print(f"{len(manifest.entries)} files in {out}")
    return EXIT_OK


def _report(a) -> int:
    path = report_persisted(a.study, a.explain_folds)
    print(f"manifest {path}")
    return EXIT_OK


def _validate(a) -> int:
    if not a.dataset and not a.zones:
        raise UsageError("validate: give --dataset and/or --zones")
    zones = ZoneMap.from_file(a.zones) if a.zones else default_zone_map()
    if a.zones:
        print(f"zone map ok: cells per zone {zones.counts().tolist()}")
    if a.dataset:
        samples = load_dataset(a.dataset)
        eyes = Counter((s.layer, s.group, s.laterality) for s in samples)
        subjects = Counter(g for _, g in {(s.subject_id, s.group) for s in samples})
        print(f"{len(samples)} eye rows, subjects {dict(sorted(subjects.items()))}")
        for key in sorted(eyes):
            print("  " + "/".join(key) + f": {eyes[key]}")
        layers = {s.layer for s in samples}
        if not layers <= set(LAYERS):
            raise DataError(f"unexpected layers {sorted(layers - set(LAYERS))}")
    return EXIT_OK


VERBS = {"generate": _generate, "run": _run, "explain": _explain, "report": _report, "validate": _validate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return VERBS[a.verb](a)
    except (UsageError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CellError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA if isinstance(exc.cause, (DataError, ValueError)) else EXIT_INTERNAL
    except (DataError, ModelFileError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
