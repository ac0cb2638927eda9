"""Study orchestration: every (layer, feature set, strategy, model) cell over k folds."""

from __future__ import annotations

import csv
import json
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import (FEATURE_SETS, LAYERS, STRATEGIES, ConfigurationError, IntegrityError, ZoneMap, default_zone_map,
                   load_dataset, select_eyes, write_dataset)
from .ebm import EbmModel, ebm_explain, ebm_global
from .evaluation import (MODEL_KINDS, FoldPlan, MetricsReport, compute_metrics, fold_matrices, leakage_scan,
                         run_fold, subject_kfold)
from .modelio import load_model, save_model
from .report import METRIC_COLUMNS, Manifest, as_attribution, emit_reports, write_csv
from .synthgen import CohortSpec, default_paper_spec, generate_cohort
from .treeshap import Attribution, global_summary, shap_values

STATS = ("min", "q1", "median", "q3", "max", "mean")
METRICS_HEADER = ["cell", "layer", "feature_set", "strategy", "model", "fold", "n_test", "tp", "fp", "tn", "fn",
                  *METRIC_COLUMNS, "smote_seed", "model_seed"]


class CellError(RuntimeError):
    """A component failed inside one study cell; ``cell`` names it."""

    def __init__(self, cell: str, cause: BaseException):
        super().__init__(f"cell {cell}: {type(cause).__name__}: {cause}")
        self.cell = cell
        self.cause = cause


def derive_seed(seed: int, *keys) -> int:
    """Stable 32-bit child seed for a path of keys (independent of hash randomization)."""
    words = [int(seed) & 0xFFFFFFFF] + [zlib.crc32(str(k).encode()) for k in keys]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


@dataclass
class ExperimentConfig:
    seed: int
    out_dir: str = "study"
    dataset: str | None = None
    synthetic: dict | None = None
    layers: tuple = LAYERS
    feature_sets: tuple = FEATURE_SETS
    strategies: tuple = STRATEGIES
    models: tuple = MODEL_KINDS
    k: int = 10
    test_fraction: float | None = None
    zones: str | None = None
    plots: bool = True
    n_jobs: int = 1
    model_overrides: dict = field(default_factory=dict)
    k_neighbors: int = 5
    explain_folds: str = "best"
    baseline_auc: float | None = None
    mirror_left: bool = False
    min_quality: float | None = None
    max_items: int = 10

    def __post_init__(self):
        for name in ("layers", "feature_sets", "strategies", "models"):
            setattr(self, name, tuple(getattr(self, name)))

    def validate(self) -> None:
        allowed = {"layers": LAYERS, "feature_sets": FEATURE_SETS, "strategies": STRATEGIES, "models": MODEL_KINDS}
        for name, ok in allowed.items():
            values = getattr(self, name)
            if not values:
                raise ConfigurationError(f"{name}: need at least one value")
            bad = [v for v in values if v not in ok]
            if bad:
                raise ConfigurationError(f"{name}: unknown {bad}, expected a subset of {list(ok)}")
            if len(set(values)) != len(values):
                raise ConfigurationError(f"{name}: duplicate values")
        if self.dataset is not None and self.synthetic is not None:
            raise ConfigurationError("give either a dataset path or a synthetic spec, not both")
        if self.k < 2:
            raise ConfigurationError("k must be >= 2")
        if self.explain_folds not in ("best", "all"):
            raise ConfigurationError("explain_folds must be 'best' or 'all'")
        if self.n_jobs < 1:
            raise ConfigurationError("n_jobs must be >= 1")
        bad = set(self.model_overrides) - set(MODEL_KINDS)
        if bad:
            raise ConfigurationError(f"model_overrides: unknown model kinds {sorted(bad)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in ("layers", "feature_sets", "strategies", "models"):
            d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown config keys {sorted(extra)}")
        if "seed" not in d:
            raise ConfigurationError("config needs a seed")
        return cls(**d)


@dataclass(frozen=True)
class CellKey:
    layer: str
    feature_set: str
    strategy: str
    model: str

    @property
    def id(self) -> str:
        return f"{self.layer}_{self.feature_set}_{self.strategy}_{self.model.replace('+i', 'i')}"


@dataclass(frozen=True)
class FoldRecord:
    fold: int
    metrics: MetricsReport
    n_test: int
    smote_seed: int
    model_seed: int


@dataclass
class CellResult:
    key: CellKey
    folds: list
    best_fold: int
    summary: dict


@dataclass
class StudyResult:
    config: ExperimentConfig
    cells: dict
    out_dir: Path
    manifest: Path | None = None
    # in-memory only: wall-clock seconds per cell and the computed explanations
    timings: dict = field(default_factory=dict)
    explanations: list = field(default_factory=list)


@dataclass
class Explanation:
    """Attribution artifacts for one fitted fold model."""

    cell_id: str
    key: CellKey
    fold: int
    seed: int
    feature_names: tuple
    test: object
    probabilities: np.ndarray
    metrics: MetricsReport
    local: list
    shap: object = None
    ebm: object = None

    @property
    def cell_path(self) -> str:
        return self.cell_id


def best_fold(records) -> int:
    """Highest accuracy, then highest AUC (undefined counts lowest), then lowest fold index."""
    def key(r):
        auc = r.metrics.auc if np.isfinite(r.metrics.auc) else -np.inf
        return (-r.metrics.accuracy, -auc, r.fold)
    return min(records, key=key).fold


def summarize(records) -> dict:
    out = {}
    for m in METRIC_COLUMNS:
        v = np.array([getattr(r.metrics, m) for r in records], dtype=float)
        v = v[np.isfinite(v)]
        if v.size == 0:
            out[m] = (float("nan"),) * len(STATS)
            continue
        q = np.percentile(v, [0, 25, 50, 75, 100])
        out[m] = (*(float(x) for x in q), float(np.mean(v)))
    return out


def explain_fold(key: CellKey, fold: int, seed: int, model, samples, plan, zones) -> Explanation:
    """Local attributions for every test row and a global view over the real training rows."""
    train, test = fold_matrices(samples, plan, fold, key.feature_set, zones)
    prob = model.predict_proba(test.rows)
    names = tuple(test.feature_names)
    if isinstance(model, EbmModel):
        local = [as_attribution(ebm_explain(model, x)) for x in test.rows]
        return Explanation(key.id, key, fold, seed, names, test, prob, compute_metrics(prob, test.labels),
                           local, ebm=ebm_global(model))
    phi, base, outputs = shap_values(model, test.rows)
    space = global_summary(model, np.zeros((0, test.d)), names).target_space
    local = [Attribution(base, phi[i], float(outputs[i]), space, names) for i in range(test.n)]
    return Explanation(key.id, key, fold, seed, names, test, prob, compute_metrics(prob, test.labels), local,
                       shap=global_summary(model, train.rows, names))


def _write_probabilities(path, test, prob):
    write_csv(path, ["subject_id", "eye", "label", "probability"],
              [(s, e, int(y), p) for s, e, y, p in zip(test.subject_ids, test.laterality, test.labels, prob)])


def _run_cell(job):
    """Worker: all folds of one cell. Returns records, written files and explanations."""
    key, samples, plan, zones, cfg, root = job
    start = time.perf_counter()
    cell_dir = Path(root) / "cells" / key.id
    records, files, expl, models = [], [], [], {}
    try:
        for fold in range(plan.k):
            smote_seed = derive_seed(cfg.seed, "smote", key.layer, key.feature_set, key.strategy, fold)
            model_seed = derive_seed(cfg.seed, "model", key.id, fold)
            res = run_fold(samples, plan, fold, key.feature_set, key.model, smote_seed, model_seed, zones,
                           cfg.k_neighbors, cfg.model_overrides.get(key.model))
            fdir = cell_dir / f"fold_{fold}"
            fdir.mkdir(parents=True, exist_ok=True)
            save_model(res.model, fdir / "model.json")
            _write_probabilities(fdir / "probabilities.csv", res.test, res.probabilities)
            files += [(fdir / "model.json", "model", fold, model_seed),
                      (fdir / "probabilities.csv", "probabilities", fold, model_seed)]
            records.append(FoldRecord(fold, res.metrics, res.test.n, smote_seed, model_seed))
            models[fold] = res.model
        best = best_fold(records)
        if cfg.plots or cfg.explain_folds == "all":
            folds = range(plan.k) if cfg.explain_folds == "all" else [best]
            for f in folds:
                expl.append(explain_fold(key, f, records[f].model_seed, models[f], samples, plan, zones))
    except Exception as exc:  # noqa: BLE001
        return key, records, files, expl, CellError(key.id, exc), time.perf_counter() - start
    return key, records, files, expl, None, time.perf_counter() - start


def _cohort(cfg: ExperimentConfig):
    if cfg.dataset is not None:
        return load_dataset(cfg.dataset, mirror_left=cfg.mirror_left, min_quality=cfg.min_quality)
    zones = ZoneMap.from_file(cfg.zones) if cfg.zones else default_zone_map()
    if cfg.synthetic is not None:
        spec = CohortSpec.from_dict(cfg.synthetic)
    else:
        spec = default_paper_spec(seed=derive_seed(cfg.seed, "cohort"))
    return generate_cohort(spec, zones)


def _metric_row(key: CellKey, r: FoldRecord) -> list:
    m = r.metrics
    return [key.id, key.layer, key.feature_set, key.strategy, key.model, r.fold, r.n_test, m.tp, m.fp, m.tn, m.fn,
            *(getattr(m, c) for c in METRIC_COLUMNS), r.smote_seed, r.model_seed]


def write_study_tables(cells: dict, root: Path, manifest: Manifest) -> None:
    rows = [_metric_row(c.key, r) for c in cells.values() for r in c.folds]
    manifest.add(write_csv(root / "metrics.csv", METRICS_HEADER, rows), "fold_metrics")
    header = ["cell", *[f"{m}_{s}" for m in METRIC_COLUMNS for s in STATS]]
    srows = [[cid, *[v for m in METRIC_COLUMNS for v in c.summary[m]]] for cid, c in cells.items()]
    manifest.add(write_csv(root / "summary.csv", header, srows), "metric_distribution")
    brow = []
    for cid, c in cells.items():
        m = c.folds[c.best_fold].metrics
        brow.append([cid, c.key.model, c.key.layer, c.key.feature_set, c.key.strategy, c.best_fold,
                     *(getattr(m, x) for x in METRIC_COLUMNS)])
    manifest.add(write_csv(root / "best_folds.csv", ["cell", "model", "layer", "feature_set", "strategy", "fold",
                                                     *METRIC_COLUMNS], brow), "best_folds")


def _writable(root: Path) -> None:
    try:
        root.mkdir(parents=True, exist_ok=True)
        probe = root / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigurationError(f"output directory {root} is not writable: {exc}") from exc


def prepare(cfg: ExperimentConfig):
    """Cohort, zone map and per (layer, strategy) eye selections and fold plans."""
    samples = _cohort(cfg)
    zones = ZoneMap.from_file(cfg.zones) if cfg.zones else default_zone_map()
    selections, plans = {}, {}
    for layer in cfg.layers:
        layer_samples = [s for s in samples if s.layer == layer]
        if not layer_samples:
            raise IntegrityError(f"dataset has no {layer} rows")
        for strategy in cfg.strategies:
            sel = select_eyes(layer_samples, strategy, derive_seed(cfg.seed, "rand"))
            plan = subject_kfold(sel, cfg.k, derive_seed(cfg.seed, "plan", strategy), cfg.test_fraction)
            selections[(layer, strategy)] = sel
            plans[(layer, strategy)] = plan
    return samples, zones, selections, plans


def run_study(cfg: ExperimentConfig) -> StudyResult:
    """Run the full matrix, persist everything under ``cfg.out_dir`` and return the results."""
    cfg.validate()
    root = Path(cfg.out_dir)
    _writable(root)
    manifest = Manifest(root)
    samples, zones, selections, plans = prepare(cfg)

    (root / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    manifest.add(root / "config.json", "config", seed=cfg.seed)
    write_dataset(samples, root / "dataset.csv")
    manifest.add(root / "dataset.csv", "dataset")
    zones.to_file(root / "zones.txt")
    manifest.add(root / "zones.txt", "zone_map")
    for (layer, strategy), plan in plans.items():
        if leakage_scan(plan):
            raise RuntimeError(f"plan {layer}/{strategy} leaks subjects")
        p = write_csv(root / "plans" / f"plan_{layer}_{strategy}.csv", ["fold", "subject_id", "split"], plan.rows())
        manifest.add(p, "fold_plan", cell=f"{layer}_{strategy}", seed=plan.seed)

    jobs = []
    for layer in cfg.layers:
        for fs in cfg.feature_sets:
            for strategy in cfg.strategies:
                for kind in cfg.models:
                    key = CellKey(layer, fs, strategy, kind)
                    jobs.append((key, selections[(layer, strategy)], plans[(layer, strategy)], zones, cfg, str(root)))

    if cfg.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.n_jobs) as pool:
            outcomes = list(pool.map(_run_cell, jobs))
    else:
        outcomes = [_run_cell(job) for job in jobs]

    cells, explanations, timings, failure = {}, [], {}, None
    for key, records, files, expl, err, seconds in outcomes:
        timings[key.id] = seconds
        for path, kind, fold, seed in files:
            manifest.add(path, kind, key.id, fold, seed)
        if err is not None:
            failure = failure or err
            continue
        cells[key.id] = CellResult(key, records, best_fold(records), summarize(records))
        explanations += expl

    write_study_tables(cells, root, manifest)
    result = StudyResult(cfg, cells, root, timings=timings, explanations=explanations)
    if failure is not None:
        manifest.note(f"study incomplete: {failure}")
        manifest.write()
        raise failure
    emit_reports(result, explanations, root, manifest, cfg.plots, cfg.baseline_auc, cfg.max_items)
    result.manifest = manifest.write()
    check_manifest(root)
    return result


def check_manifest(root) -> None:
    """Every file under ``root`` is listed in the manifest, and every listed file exists."""
    root = Path(root)
    doc = json.loads((root / "manifest.json").read_text())
    listed = {f["path"] for f in doc["files"]}
    present = {p.relative_to(root).as_posix() for p in root.rglob("*") if p.is_file()}
    if listed != present:
        raise RuntimeError(f"manifest mismatch: unlisted {sorted(present - listed)[:5]}, "
                           f"missing {sorted(listed - present)[:5]}")


# -- reloading a finished study -------------------------------------------------

def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def load_study(root) -> StudyResult:
    """Rebuild a :class:`StudyResult` from the files written by :func:`run_study`."""
    root = Path(root)
    cfg = ExperimentConfig.from_dict(json.loads((root / "config.json").read_text()))
    grouped: dict = {}
    for r in _read_csv(root / "metrics.csv"):
        key = CellKey(r["layer"], r["feature_set"], r["strategy"], r["model"])
        m = MetricsReport(int(r["tp"]), int(r["fp"]), int(r["tn"]), int(r["fn"]),
                          *(float(r[c]) for c in METRIC_COLUMNS), auc_defined=r["auc"] != "nan")
        rec = FoldRecord(int(r["fold"]), m, int(r["n_test"]), int(r["smote_seed"]), int(r["model_seed"]))
        grouped.setdefault(key, []).append(rec)
    cells = {}
    for key, recs in grouped.items():
        recs.sort(key=lambda r: r.fold)
        cells[key.id] = CellResult(key, recs, best_fold(recs), summarize(recs))
    return StudyResult(cfg, cells, root, root / "manifest.json")


def study_inputs(root):
    """Samples, zone map and plans as persisted, so folds can be rebuilt exactly."""
    root = Path(root)
    samples = load_dataset(root / "dataset.csv")
    zones = ZoneMap.from_file(root / "zones.txt")
    cfg = ExperimentConfig.from_dict(json.loads((root / "config.json").read_text()))
    plans = {}
    for path in sorted((root / "plans").glob("plan_*.csv")):
        _, layer, strategy = path.stem.split("_", 2)
        rows = [(int(r["fold"]), r["subject_id"], r["split"]) for r in _read_csv(path)]
        plans[(layer, strategy)] = FoldPlan.from_rows(rows, derive_seed(cfg.seed, "plan", strategy))
    return cfg, samples, zones, plans


def _explain_stored(root: Path, study: StudyResult, inputs, cell_id: str, fold: int) -> Explanation:
    cfg, samples, zones, plans = inputs
    cell = study.cells[cell_id]
    key = cell.key
    layer_samples = [s for s in samples if s.layer == key.layer]
    sel = select_eyes(layer_samples, key.strategy, derive_seed(cfg.seed, "rand"))
    model = load_model(root / "cells" / cell_id / f"fold_{fold}" / "model.json")
    return explain_fold(key, fold, cell.folds[fold].model_seed, model, sel, plans[(key.layer, key.strategy)], zones)


def explain_persisted(root, cell_id: str, fold: int) -> Explanation:
    """Recompute the explanation of a stored fold model."""
    root = Path(root)
    study = load_study(root)
    if cell_id not in study.cells:
        raise KeyError(f"no cell {cell_id!r} in {root}")
    if not 0 <= fold < len(study.cells[cell_id].folds):
        raise KeyError(f"cell {cell_id} has no fold {fold}")
    return _explain_stored(root, study, study_inputs(root), cell_id, fold)


def report_persisted(root, explain_folds: str = "best") -> Path:
    """Re-emit the report tree of a stored study and rewrite its manifest."""
    root = Path(root)
    study = load_study(root)
    inputs = study_inputs(root)
    old = json.loads((root / "manifest.json").read_text()) if (root / "manifest.json").exists() else {"files": []}
    manifest = Manifest(root)
    for f in old["files"]:
        if f["kind"] != "manifest" and not f["path"].startswith("reports/") and (root / f["path"]).exists():
            manifest.add(root / f["path"], f["kind"], f["cell"], f["fold"], f["seed"])
    reports = root / "reports"
    if reports.exists():
        for p in sorted(reports.rglob("*"), reverse=True):
            p.unlink() if p.is_file() else p.rmdir()
    expl = []
    for cid, cell in study.cells.items():
        folds = range(len(cell.folds)) if explain_folds == "all" else [cell.best_fold]
        expl += [_explain_stored(root, study, inputs, cid, f) for f in folds]
    emit_reports(study, expl, root, manifest, study.config.plots, study.config.baseline_auc, study.config.max_items)
    path = manifest.write()
    check_manifest(root)
    return path
