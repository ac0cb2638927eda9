"""Report files: delimited tables, SVG figures and the manifest."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import plots
from .data import GRID_NAMES
from .treeshap import Attribution, dependence_data, shap_grid, waterfall

METRIC_COLUMNS = ("accuracy", "sensitivity", "specificity", "f1", "auc")


# -- display upsampling --------------------------------------------------------

def _cubic_kernel(t, a=-0.5):
    t = np.abs(t)
    return np.where(
        t <= 1, (a + 2) * t**3 - (a + 3) * t**2 + 1,
        np.where(t < 2, a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a, 0.0),
    )


def _linear_kernel(t):
    return np.clip(1.0 - np.abs(t), 0.0, None)


def _resample_matrix(n: int, factor: int, kernel, radius: int) -> np.ndarray:
    """(n*factor, n) weights; output pixel centres map back onto input centres, edges clamped."""
    src = (np.arange(n * factor) + 0.5) / factor - 0.5
    W = np.zeros((n * factor, n))
    base = np.floor(src).astype(int)
    for off in range(-radius + 1, radius + 1):
        idx = base + off
        w = kernel(src - idx)
        np.add.at(W, (np.arange(len(src)), np.clip(idx, 0, n - 1)), w)
    return W


def bicubic_upsample(grid, factor: int) -> np.ndarray:
    """Bicubic (Keys, a = -0.5) upsampling for display only."""
    return _upsample(grid, factor, _cubic_kernel, 2)


def bilinear_upsample(grid, factor: int) -> np.ndarray:
    return _upsample(grid, factor, _linear_kernel, 1)


def _upsample(grid, factor, kernel, radius):
    grid = np.asarray(grid, dtype=float)
    if int(factor) != factor or factor < 1:
        raise ValueError("factor must be a positive integer")
    factor = int(factor)
    rows = _resample_matrix(grid.shape[0], factor, kernel, radius)
    cols = _resample_matrix(grid.shape[1], factor, kernel, radius)
    return rows @ grid @ cols.T


# -- manifest ------------------------------------------------------------------

@dataclass
class Manifest:
    root: Path
    entries: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def add(self, path, kind: str, cell: str | None = None, fold: int | None = None, seed: int | None = None):
        rel = Path(path).resolve().relative_to(self.root.resolve()).as_posix()
        self.entries[rel] = {"kind": kind, "cell": cell, "fold": fold, "seed": seed}
        return path

    def note(self, text: str):
        self.notes.append(text)

    def write(self, name: str = "manifest.json") -> Path:
        path = self.root / name
        files = []
        for rel in sorted(self.entries):
            digest = hashlib.sha256((self.root / rel).read_bytes()).hexdigest()
            files.append({"path": rel, **self.entries[rel], "sha256": digest})
        files.append({"path": name, "kind": "manifest", "cell": None, "fold": None, "seed": None, "sha256": None})
        doc = {"files": files, "notes": sorted(self.notes)}
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        return path


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    return path


# -- study-level tables ----------------------------------------------------------

def write_table3(result, path) -> Path:
    rows = []
    for cell in result.cells.values():
        b = cell.folds[cell.best_fold].metrics
        k = cell.key
        rows.append([k.model, k.layer, k.feature_set, k.strategy, cell.best_fold,
                     b.accuracy, b.sensitivity, b.specificity, b.f1, b.auc])
    header = ["Method", "Layer", "Feature set", "Strategy", "fold id", "Acc (%)", "Sens (%)",
              "Spec (%)", "F1-score (%)", "AUC"]
    return write_csv(path, header, rows)


def emit_boxplots(result, out_dir, manifest: Manifest, baseline_auc=None):
    groups: dict = {}
    for cell in result.cells.values():
        k = cell.key
        panel = groups.setdefault((k.layer, k.feature_set), {m: {} for m in METRIC_COLUMNS})
        for m in METRIC_COLUMNS:
            panel[m][(k.strategy, k.model)] = [getattr(f.metrics, m) for f in cell.folds]
    for (layer, fs), table in sorted(groups.items()):
        p = plots.metric_boxplots(table, Path(out_dir) / "boxplots" / f"{layer}_{fs}.svg",
                                  f"{layer}, {fs}", baseline_auc)
        manifest.add(p, "metric_boxplot", cell=f"{layer}_{fs}")


# -- per-cell explanation artifacts ---------------------------------------------

def _local_rows(expl):
    for i, att in enumerate(expl.local):
        t = expl.test
        yield [t.subject_ids[i], t.laterality[i], int(t.labels[i]), expl.probabilities[i],
               att.base_value, att.output, *att.phi]


def emit_cell(expl, out_dir, manifest: Manifest, max_items: int = 10, with_plots: bool = True):
    """Write every artifact for one explained fold of one cell."""
    out = Path(out_dir)
    cid, fold, seed = expl.cell_id, expl.fold, expl.seed
    add = lambda p, kind: manifest.add(p, kind, cid, fold, seed)  # noqa: E731
    names = list(expl.feature_names)
    grid_set = len(names) == 64
    m = expl.metrics

    add(write_csv(out / "confusion.csv", ["", "pred_HC", "pred_MS"],
                  [["true_HC", m.tn, m.fp], ["true_MS", m.fn, m.tp]]), "confusion_csv")
    if with_plots:
        add(plots.confusion_plot(m.tp, m.fp, m.tn, m.fn, out / "confusion.svg", f"{cid} fold {fold}"), "confusion_svg")

    space = expl.local[0].target_space if expl.local else ""
    add(write_csv(out / "attributions.csv",
                  ["subject_id", "eye", "label", "probability", "base_value", "output",
                   *(expl.local[0].feature_names if expl.local else names)],
                  _local_rows(expl)), f"local_attributions[{space}]")

    if expl.shap is not None:
        s = expl.shap
        bar = [(names[j], s.mean_abs_phi[j]) for j in s.ranking]
        add(write_csv(out / "shap_bar.csv", ["feature", "mean_abs_phi"], bar), f"shap_bar[{s.target_space}]")
        vrows = [(i, names[j], s.values[i, j], s.phi[i, j]) for j in s.ranking for i in range(s.phi.shape[0])]
        add(write_csv(out / "shap_violin.csv", ["sample", "feature", "value", "phi"], vrows), "shap_violin_data")
        if with_plots:
            add(plots.bar_importance(names, s.mean_abs_phi, out / "shap_bar.svg", f"{cid} fold {fold}",
                                     f"mean |SHAP| ({s.target_space})"), "shap_bar_svg")
            add(plots.beeswarm(names, s.phi, s.values, s.ranking, out / "shap_beeswarm.svg", f"{cid} fold {fold}"),
                "shap_beeswarm_svg")
        for j in s.ranking[:2]:
            dep = dependence_data(s, j)
            add(write_csv(out / f"dependence_{names[j]}.csv", ["value", "phi"], dep), "shap_dependence")
            if with_plots:
                add(plots.dependence(dep, out / f"dependence_{names[j]}.svg", names[j], cid), "shap_dependence_svg")
        if grid_set:
            _emit_grid(shap_grid(s, GRID_NAMES), out, "shap_grid", f"{cid} mean |SHAP|", add, with_plots)

    if expl.ebm is not None:
        e = expl.ebm
        add(write_csv(out / "ebm_importance.csv", ["term", "importance"],
                      [(e.names[t], e.importance[t]) for t in e.ranking]), "ebm_importance")
        crow = [(name, b, c[b, 0], c[b, 1], c[b, 2], c[b, 3]) for name, c in e.curves.items() for b in range(len(c))]
        add(write_csv(out / "ebm_curves.csv", ["feature", "bin", "lower", "upper", "score", "count"], crow),
            "ebm_curves")
        mains = [t for t in e.ranking if t < len(names)]
        pairs = [e.names[t] for t in e.ranking if t >= len(names)]
        if e.heat_maps:
            hrow = [(name, i, j, T[i, j]) for name, T in e.heat_maps.items()
                    for i in range(T.shape[0]) for j in range(T.shape[1])]
            add(write_csv(out / "ebm_interactions.csv", ["pair", "bin_i", "bin_j", "score"], hrow),
                "ebm_interaction_maps")
        if with_plots:
            add(plots.bar_importance(list(e.names), e.importance, out / "ebm_importance.svg", f"{cid} fold {fold}",
                                     "mean |score|"), "ebm_importance_svg")
            add(plots.score_curves(e.curves, [names[t] for t in mains[:4]], out / "ebm_curves.svg", cid),
                "ebm_curves_svg")
            if pairs:
                add(plots.interaction_maps(e.heat_maps, pairs[:4], out / "ebm_interactions.svg", cid),
                    "ebm_interactions_svg")
        if grid_set:
            _emit_grid(shap_grid(e.importance[: len(names)], GRID_NAMES), out, "ebm_grid",
                       f"{cid} mean |score|", add, with_plots)

    failures = out / "failures"
    wrong = [i for i in range(expl.test.n) if (expl.probabilities[i] >= 0.5) != bool(expl.test.labels[i])]
    if not wrong:
        failures.mkdir(parents=True, exist_ok=True)
        manifest.note(f"{cid} fold {fold}: no misclassified test samples")
    for i in wrong:
        att = expl.local[i]
        tag = f"{expl.test.subject_ids[i]}_{expl.test.laterality[i]}"
        wf = waterfall(att, max_items)
        rows = [("base", wf.base_value)] + wf.items
        if wf.folded_count:
            rows.append((f"{wf.folded_count} other features", wf.folded_sum))
        rows.append(("output", wf.output))
        add(write_csv(failures / f"{tag}_waterfall.csv", ["term", "value"], rows), "failure_waterfall")
        if with_plots:
            truth = "MS" if expl.test.labels[i] else "HC"
            add(plots.waterfall_plot(wf, failures / f"{tag}_waterfall.svg",
                                     f"{tag} (true {truth}, p(MS)={expl.probabilities[i]:.2f})"),
                "failure_waterfall_svg")
        if grid_set:
            # main effects come first for additive models, so the first 64 terms are the cells
            _emit_grid(shap_grid(att.phi[:64], GRID_NAMES), failures, f"{tag}_grid", f"{tag} local",
                       add, with_plots, diverging=True)
            _emit_grid(shap_grid(expl.test.rows[i], GRID_NAMES), failures, f"{tag}_thickness",
                       f"{tag} thickness (um)", add, with_plots)


def _emit_grid(grid, out, stem, title, add, with_plots, diverging=False, factor=8):
    add(write_csv(out / f"{stem}.csv", ["row", *[f"c{c}" for c in range(1, 9)]],
                  [[r + 1, *grid[r]] for r in range(8)]), "grid_csv")
    if with_plots:
        add(plots.grid_heatmap(grid, out / f"{stem}.svg", title, diverging=diverging), "grid_svg")
        add(plots.grid_heatmap(bicubic_upsample(grid, factor), out / f"{stem}_bicubic.svg",
                               f"{title} (bicubic x{factor})", diverging=diverging), "grid_svg_bicubic")


def emit_fold_grid(expl, out_dir, manifest: Manifest, with_plots=True):
    """Importance grid for a non-best fold (per-fold grid panels)."""
    add = lambda p, kind: manifest.add(p, kind, expl.cell_id, expl.fold, expl.seed)  # noqa: E731
    if expl.shap is not None:
        vec = expl.shap.mean_abs_phi
    elif expl.ebm is not None:
        vec = expl.ebm.importance[: len(expl.feature_names)]
    else:
        return
    if len(vec) == 64:
        _emit_grid(shap_grid(vec, GRID_NAMES), Path(out_dir), f"fold_{expl.fold}_grid",
                   f"{expl.cell_id} fold {expl.fold}", add, with_plots)


def emit_reports(result, explanations, out_dir, manifest: Manifest | None = None, with_plots: bool = True,
                 baseline_auc=None, max_items: int = 10) -> Manifest:
    """Write the study tables and every explanation artifact under ``out_dir/reports``."""
    root = Path(out_dir)
    manifest = manifest or Manifest(root)
    rep = root / "reports"
    manifest.add(write_table3(result, rep / "table3.csv"), "table_best_folds")
    if with_plots:
        emit_boxplots(result, rep, manifest, baseline_auc)
    for expl in explanations:
        cell_dir = rep / "cells" / expl.cell_path
        if expl.fold == result.cells[expl.cell_id].best_fold:
            emit_cell(expl, cell_dir, manifest, max_items, with_plots)
        else:
            emit_fold_grid(expl, cell_dir / "folds", manifest, with_plots)
    return manifest


def as_attribution(term_att) -> Attribution:
    return Attribution(term_att.base_value, np.asarray(term_att.contributions), term_att.output, "RawScore",
                       term_att.names)
