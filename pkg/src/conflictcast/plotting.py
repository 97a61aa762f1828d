"""Report figures: confusion matrices, metric comparisons and fatality traces."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import Averaging, MetricsReport, PredictionType  # noqa: E402
from .forecasting import Experiment  # noqa: E402

RC = {
    "font.family": "sans-serif",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}
EXP_COLORS = {"parametric": "#4C72B0", "rag": "#DD8452"}
_NO_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=_NO_META)
    plt.close(fig)
    return path


def plot_confusion(classes, counts, title: str, path: Path) -> Path:
    counts = np.asarray(counts)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(3.6, 3.2))
        ax.imshow(counts, cmap="Blues")
        ax.set_xticks(range(len(classes)), [str(c) for c in classes], rotation=35, ha="right")
        ax.set_yticks(range(len(classes)), [str(c) for c in classes])
        ax.set_xlabel("predicted")
        ax.set_ylabel("truth")
        hi = counts.max() if counts.size else 0
        for i in range(counts.shape[0]):
            for j in range(counts.shape[1]):
                ax.text(j, i, str(counts[i, j]), ha="center", va="center",
                        color="white" if hi and counts[i, j] > hi / 2 else "black")
        ax.set_title(title)
        return _save(fig, path)


def plot_metric_comparison(reports: dict[tuple[str, str, str], MetricsReport], model: str, path: Path) -> Path:
    """Macro-F1 per block plus MAE, grouped by country, one bar per experiment."""
    countries = list(dict.fromkeys(c for (m, _, c) in reports if m == model))
    experiments = [e.value for e in Experiment if any(k[0] == model and k[1] == e.value for k in reports)]
    panels = [(t.value, t) for t in PredictionType] + [("Fatalities MAE", None)]
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(panels), figsize=(3.2 * len(panels), 2.8))
        x = np.arange(len(countries))
        width = 0.8 / max(1, len(experiments))
        for ax, (title, ptype) in zip(axes, panels):
            for i, exp in enumerate(experiments):
                vals = []
                for c in countries:
                    rep = reports.get((model, exp, c))
                    if rep is None:
                        vals.append(math.nan)
                    elif ptype is None:
                        vals.append(rep.mae if rep.mae is not None else math.nan)
                    else:
                        block = rep.blocks.get(ptype)
                        vals.append(block.by_averaging[Averaging.MACRO].f1 if block else math.nan)
                ax.bar(x + (i - (len(experiments) - 1) / 2) * width, vals, width,
                       label=Experiment(exp).display, color=EXP_COLORS.get(exp))
            ax.set_xticks(x, countries, rotation=30, ha="right")
            ax.set_title(title)
            if ptype is not None:
                ax.set_ylim(0, 1)
                ax.set_ylabel("F1 (macro)")
        axes[0].legend(frameon=False)
        fig.suptitle(model)
        return _save(fig, path)


def plot_fatalities(country: str, labels: dict, predictions, path: Path) -> Path:
    """Monthly truth against point predictions for each experiment."""
    months = sorted(m for (c, m) in labels if c == country)
    truth = [labels[(country, m)]["truth_fatalities"] for m in months]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5.5, 2.8))
        ax.plot(months, truth, color="black", marker="o", ms=3, label="ACLED")
        for exp in Experiment:
            pts = {r.task.month_key: r.predicted.fatalities_point for r in predictions
                   if r.scorable and r.task.country == country and r.task.experiment is exp}
            if pts:
                ax.plot(months, [pts.get(m, math.nan) for m in months], marker=".", ls="--",
                        color=EXP_COLORS[exp.value], label=exp.display)
        ax.set_ylabel("fatalities / month")
        ax.set_title(country)
        step = max(1, len(months) // 12)
        ax.set_xticks(range(0, len(months), step), months[::step], rotation=45, ha="right")
        ax.legend(frameon=False)
        return _save(fig, path)


def render_figures(reports: dict[tuple[str, str, str], MetricsReport], out_dir: Path,
                   predictions=None, labels=None) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    for model in dict.fromkeys(k[0] for k in reports):
        paths.append(plot_metric_comparison(reports, model, out_dir / f"metrics_{_slug(model)}.png"))
    for (model, exp, country), rep in reports.items():
        block = rep.blocks.get(PredictionType.CATEGORICAL)
        if block is None or block.confusion is None:
            continue
        classes = [str(getattr(c, "value", c)) for c in block.confusion.classes]
        paths.append(plot_confusion(classes, block.confusion.counts, f"{country} · {Experiment(exp).display}",
                                    out_dir / f"confusion_{_slug(model)}_{exp}_{_slug(country)}.png"))
    if predictions is not None and labels:
        for country in dict.fromkeys(k[2] for k in reports):
            paths.append(plot_fatalities(country, labels, predictions, out_dir / f"fatalities_{_slug(country)}.png"))
    return paths


def _slug(s: str) -> str:
    return "".join(ch if ch.isalnum() else "-" for ch in s.lower()).strip("-")
