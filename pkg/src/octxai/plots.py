"""Matplotlib figures for the report, written as deterministic SVG.

SVG output is reproducible byte for byte: the id hash salt is fixed, the
date metadata is dropped and text stays as ``<text>`` (no glyph paths).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "svg.hashsalt": "octxai",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "path.simplify": False,
}
MS_COLOR = "#d62728"
HC_COLOR = "#1f77b4"
MODEL_COLORS = {"GB": "#1f77b4", "RF": "#2ca02c", "EBM": "#c51b7d", "EBM+i": "#9467bd"}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context(RC):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def _figure(w=5.0, h=3.5):
    with matplotlib.rc_context(RC):
        return plt.subplots(figsize=(w, h))


def bar_importance(names, values, path, title="", xlabel="mean |SHAP value|") -> Path:
    order = np.argsort(-np.asarray(values), kind="stable")[::-1]
    fig, ax = _figure(5, 0.25 * len(names) + 1.2)
    with matplotlib.rc_context(RC):
        ax.barh([names[i] for i in order], [values[i] for i in order], color=HC_COLOR)
        ax.set_xlabel(xlabel)
        ax.set_title(title)
        fig.tight_layout()
    return _save(fig, path)


def beeswarm(names, phi, values, ranking, path, title="", max_features=20) -> Path:
    """Per-feature SHAP scatter coloured by the feature value (violin stand-in)."""
    shown = list(ranking[:max_features])
    fig, ax = _figure(5.5, 0.35 * len(shown) + 1.2)
    with matplotlib.rc_context(RC):
        for row, j in enumerate(reversed(shown)):
            v = values[:, j]
            span = np.ptp(v)
            colour = (v - v.min()) / span if span > 0 else np.full(len(v), 0.5)
            # deterministic vertical jitter by rank of the SHAP value
            rank = np.argsort(np.argsort(phi[:, j], kind="stable"), kind="stable")
            jitter = ((rank * 0.618034) % 1.0 - 0.5) * 0.6
            ax.scatter(phi[:, j], row + jitter, c=colour, cmap="coolwarm", s=6, vmin=0, vmax=1, linewidths=0)
        ax.set_yticks(range(len(shown)))
        ax.set_yticklabels([names[j] for j in reversed(shown)])
        ax.axvline(0.0, color="grey", lw=0.5)
        ax.set_xlabel("SHAP value (colour: feature value, low blue / high red)")
        ax.set_title(title)
        fig.tight_layout()
    return _save(fig, path)


def dependence(pairs, path, feature="", title="") -> Path:
    pairs = np.asarray(pairs, dtype=float).reshape(-1, 2)
    fig, ax = _figure(4, 3)
    with matplotlib.rc_context(RC):
        ax.scatter(pairs[:, 0], pairs[:, 1], s=8, color=HC_COLOR, linewidths=0)
        ax.axhline(0.0, color="grey", lw=0.5)
        ax.set_xlabel(f"{feature} thickness (um)")
        ax.set_ylabel(f"SHAP value for {feature}")
        ax.set_title(title)
        fig.tight_layout()
    return _save(fig, path)


def grid_heatmap(grid, path, title="", cmap="viridis", diverging=False) -> Path:
    grid = np.asarray(grid, dtype=float)
    fig, ax = _figure(4, 3.4)
    with matplotlib.rc_context(RC):
        if diverging:
            lim = float(np.max(np.abs(grid))) or 1.0
            im = ax.imshow(grid, cmap="coolwarm", vmin=-lim, vmax=lim, interpolation="nearest")
        else:
            im = ax.imshow(grid, cmap=cmap, interpolation="nearest")
        if grid.shape == (8, 8):
            ax.set_xticks(range(8))
            ax.set_xticklabels(range(1, 9))
            ax.set_yticks(range(8))
            ax.set_yticklabels(range(1, 9))
            ax.set_xlabel("column")
            ax.set_ylabel("row")
        else:
            ax.set_xticks([])
            ax.set_yticks([])
        fig.colorbar(im, ax=ax)
        ax.set_title(title)
        fig.tight_layout()
    return _save(fig, path)


def waterfall_plot(wf, path, title="") -> Path:
    """Contributions toward MS in red, against in blue, from base to output."""
    labels = [name for name, _ in wf.items]
    deltas = [v for _, v in wf.items]
    if wf.folded_count:
        labels.append(f"{wf.folded_count} other features")
        deltas.append(wf.folded_sum)
    fig, ax = _figure(5.5, 0.32 * len(labels) + 1.4)
    with matplotlib.rc_context(RC):
        start = wf.base_value
        for row, (lab, dv) in enumerate(zip(labels, deltas)):
            y = len(labels) - 1 - row
            ax.barh(y, dv, left=start, color=MS_COLOR if dv > 0 else HC_COLOR)
            ax.text(start + dv, y, f" {dv:+.3f}", va="center", fontsize=7)
            start += dv
        ax.set_yticks(range(len(labels)))
        ax.set_yticklabels(list(reversed(labels)))
        ax.axvline(wf.base_value, color="grey", lw=0.5, ls="--")
        ax.axvline(wf.output, color="black", lw=0.5)
        ax.set_xlabel(f"model output (base {wf.base_value:.3f} -> {wf.output:.3f})")
        ax.set_title(title)
        fig.tight_layout()
    return _save(fig, path)


def confusion_plot(tp, fp, tn, fn, path, title="") -> Path:
    m = np.array([[tn, fp], [fn, tp]])
    fig, ax = _figure(3, 2.8)
    with matplotlib.rc_context(RC):
        ax.imshow(m, cmap="Blues", interpolation="nearest")
        for (i, j), v in np.ndenumerate(m):
            ax.text(j, i, str(v), ha="center", va="center")
        ax.set_xticks([0, 1])
        ax.set_xticklabels(["HC", "MS"])
        ax.set_yticks([0, 1])
        ax.set_yticklabels(["HC", "MS"])
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        ax.set_title(title)
        fig.tight_layout()
    return _save(fig, path)


def score_curves(curves: dict, names, path, title="") -> Path:
    """Step plots of bin score tables for the listed features."""
    k = len(names)
    cols = min(k, 2) or 1
    rows = (k + cols - 1) // cols or 1
    with matplotlib.rc_context(RC):
        fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 2.4 * rows), squeeze=False)
        for ax, name in zip(axes.ravel(), names):
            c = curves[name]
            lo, hi, score = c[:, 0], c[:, 1], c[:, 2]
            finite = np.concatenate([lo[np.isfinite(lo)], hi[np.isfinite(hi)]])
            pad = 1.0 if finite.size == 0 else max(np.ptp(finite) * 0.05, 1e-6)
            left = np.where(np.isfinite(lo), lo, (finite.min() if finite.size else 0.0) - pad)
            right = np.where(np.isfinite(hi), hi, (finite.max() if finite.size else 0.0) + pad)
            xs = np.ravel(np.column_stack([left, right]))
            ys = np.repeat(score, 2)
            ax.plot(xs, ys, color=MS_COLOR, lw=1)
            ax.axhline(0.0, color="grey", lw=0.5)
            ax.set_title(name)
        for ax in axes.ravel()[k:]:
            ax.set_visible(False)
        fig.suptitle(title)
        fig.tight_layout()
    return _save(fig, path)


def interaction_maps(maps: dict, names, path, title="") -> Path:
    k = len(names)
    cols = min(k, 2) or 1
    rows = (k + cols - 1) // cols or 1
    with matplotlib.rc_context(RC):
        fig, axes = plt.subplots(rows, cols, figsize=(3.4 * cols, 3.0 * rows), squeeze=False)
        for ax, name in zip(axes.ravel(), names):
            T = maps[name]
            lim = float(np.max(np.abs(T))) or 1.0
            im = ax.imshow(T, cmap="coolwarm", vmin=-lim, vmax=lim, origin="lower",
                           interpolation="nearest", aspect="auto")
            a, b = name.split(" x ")
            ax.set_ylabel(f"{a} bin")
            ax.set_xlabel(f"{b} bin")
            ax.set_title(name)
            fig.colorbar(im, ax=ax)
        for ax in axes.ravel()[k:]:
            ax.set_visible(False)
        fig.suptitle(title)
        fig.tight_layout()
    return _save(fig, path)


def metric_boxplots(table, path, title="", baseline_auc=None) -> Path:
    """``table``: {metric: {(strategy, model): [fold values]}}; one panel per metric."""
    metrics = list(table)
    with matplotlib.rc_context(RC):
        fig, axes = plt.subplots(1, len(metrics), figsize=(3.0 * len(metrics), 3.2), squeeze=False)
        for ax, metric in zip(axes[0], metrics):
            groups = table[metric]
            keys = list(groups)
            data = [np.asarray(groups[k], dtype=float) for k in keys]
            data = [d[np.isfinite(d)] for d in data]
            bp = ax.boxplot(data, patch_artist=True, widths=0.6)
            for patch, (strategy, model) in zip(bp["boxes"], keys):
                patch.set_facecolor(MODEL_COLORS.get(model, "grey"))
            ax.set_xticks(range(1, len(keys) + 1))
            ax.set_xticklabels([f"{s}\n{m}" for s, m in keys], fontsize=6)
            ax.set_title(metric)
            if metric == "auc" and baseline_auc is not None:
                ax.axhline(baseline_auc, color="black", lw=0.8, ls="--")
        fig.suptitle(title)
        fig.tight_layout()
    return _save(fig, path)
