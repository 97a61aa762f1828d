"""Scoring forecasts against ground truth and rendering comparison tables."""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import NoScorableRecords
from .forecasting import Experiment, ForecastOutput, ForecastTask
from .labeling import LabelingConfig, QuantileBins, TrendLabel, assign_bin, fatalities_to_label


class PredictionType(str, enum.Enum):
    CATEGORICAL = "Class (Categorical)"
    FROM_FATALITIES = "Class (From Fatalities)"
    BINNED = "Binned Regression"


class Averaging(str, enum.Enum):
    MICRO = "micro"
    MACRO = "macro"
    WEIGHTED = "weighted"


@dataclass
class PredictionRecord:
    task: ForecastTask
    truth_label: TrendLabel
    truth_fatalities: int
    predicted: ForecastOutput | None
    parse_failed: bool = False
    model_id: str = ""
    error: str | None = None
    empty_context: bool = False

    def __post_init__(self):
        if self.parse_failed:
            self.predicted = None

    @property
    def scorable(self) -> bool:
        return not self.parse_failed and self.predicted is not None

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "task": self.task.to_dict(),
            "truth_label": self.truth_label.value,
            "truth_fatalities": self.truth_fatalities,
            "predicted": self.predicted.to_dict() if self.predicted else None,
            "raw_text": self.predicted.raw_text if self.predicted else None,
            "parse_failed": self.parse_failed,
            "error": self.error,
            "empty_context": self.empty_context,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PredictionRecord":
        pred = None
        if d.get("predicted"):
            p = d["predicted"]
            rng = tuple(p["fatalities_range"]) if p.get("fatalities_range") else None
            pred = ForecastOutput(TrendLabel(p["label"]), float(p["fatalities_point"]), rng, d.get("raw_text") or "")
        return cls(
            task=ForecastTask.from_dict(d["task"]),
            truth_label=TrendLabel(d["truth_label"]),
            truth_fatalities=int(d["truth_fatalities"]),
            predicted=pred,
            parse_failed=bool(d.get("parse_failed", False)),
            model_id=d.get("model_id", ""),
            error=d.get("error"),
            empty_context=bool(d.get("empty_context", False)),
        )


@dataclass
class ConfusionMatrix:
    classes: list
    counts: np.ndarray  # rows = truth, cols = predicted

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(records: Iterable[PredictionRecord], label_extractor: Callable[[PredictionRecord], tuple[Hashable, Hashable]],
              classes: Sequence[Hashable]) -> ConfusionMatrix:
    scored = [r for r in records if r.scorable]
    if not scored:
        raise NoScorableRecords("no scorable records")
    pos = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for rec in scored:
        truth, pred = label_extractor(rec)
        counts[pos[truth], pos[pred]] += 1
    return ConfusionMatrix(list(classes), counts)


def confusion_from_pairs(pairs: Iterable[tuple[Hashable, Hashable]], classes: Sequence[Hashable]) -> ConfusionMatrix:
    pos = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for truth, pred in pairs:
        counts[pos[truth], pos[pred]] += 1
    return ConfusionMatrix(list(classes), counts)


class ClassMetrics(NamedTuple):
    precision: float
    recall: float
    f1: float
    accuracy: float


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(num.shape, dtype=float)
    np.divide(num, den, out=out, where=den > 0)
    return out


def classification_metrics(matrix: ConfusionMatrix, averaging: Averaging | str) -> ClassMetrics:
    """Precision/recall/F1 under one averaging mode, plus accuracy.

    Undefined per-class ratios count as 0, and macro averages run over every
    class in ``matrix.classes`` whether or not it occurs.
    """
    averaging = Averaging(averaging)
    c = matrix.counts.astype(np.int64)
    total = int(c.sum())
    if total == 0:
        raise NoScorableRecords("empty confusion matrix")
    tp = np.diag(c)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    accuracy = int(tp.sum()) / total

    if averaging is Averaging.MICRO:
        TP, FP, FN = int(tp.sum()), int(fp.sum()), int(fn.sum())
        p = TP / (TP + FP) if TP + FP else 0.0
        r = TP / (TP + FN) if TP + FN else 0.0
        # count form keeps micro-F1 bit-identical to accuracy
        f = 2 * TP / (2 * TP + FP + FN) if TP + FP + FN else 0.0
        return ClassMetrics(p, r, f, accuracy)

    p_c = _safe_div(tp, tp + fp)
    r_c = _safe_div(tp, tp + fn)
    f_c = _safe_div(2 * tp, 2 * tp + fp + fn)
    if averaging is Averaging.MACRO:
        n = len(matrix.classes)
        return ClassMetrics(math.fsum(p_c) / n, math.fsum(r_c) / n, math.fsum(f_c) / n, accuracy)
    support = c.sum(axis=1)
    w = support / support.sum()
    return ClassMetrics(math.fsum(w * p_c), math.fsum(w * r_c), math.fsum(w * f_c), accuracy)


def mae(records: Iterable[PredictionRecord]) -> float:
    errors = [abs(r.predicted.fatalities_point - r.truth_fatalities) for r in records if r.scorable]
    if not errors:
        raise NoScorableRecords("no scorable records for MAE")
    return math.fsum(errors) / len(errors)


@dataclass
class BlockMetrics:
    accuracy: float
    by_averaging: dict[Averaging, ClassMetrics]
    n: int
    confusion: ConfusionMatrix | None = None

    def to_dict(self) -> dict:
        d = {"accuracy": self.accuracy, "n": self.n}
        for avg, m in self.by_averaging.items():
            d[avg.value] = {"precision": m.precision, "recall": m.recall, "f1": m.f1}
        if self.confusion is not None:
            d["classes"] = [str(c.value if isinstance(c, enum.Enum) else c) for c in self.confusion.classes]
            d["confusion"] = self.confusion.counts.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BlockMetrics":
        by = {Averaging(a): ClassMetrics(d[a]["precision"], d[a]["recall"], d[a]["f1"], d["accuracy"])
              for a in ("micro", "macro", "weighted") if a in d}
        cm = ConfusionMatrix(d["classes"], np.asarray(d["confusion"], dtype=np.int64)) if "confusion" in d else None
        return cls(d["accuracy"], by, d["n"], cm)


def block_metrics(matrix: ConfusionMatrix) -> BlockMetrics:
    by = {a: classification_metrics(matrix, a) for a in Averaging}
    return BlockMetrics(by[Averaging.MICRO].accuracy, by, matrix.total, matrix)


@dataclass
class MetricsReport:
    blocks: dict[PredictionType, BlockMetrics | None] = field(default_factory=dict)
    mae: float | None = None
    n_input: int = 0
    n_scored: int = 0
    n_parse_failed: int = 0

    @property
    def parse_failure_rate(self) -> float:
        return self.n_parse_failed / self.n_input if self.n_input else 0.0

    def to_dict(self) -> dict:
        return {
            "blocks": {t.value: (b.to_dict() if b else None) for t, b in self.blocks.items()},
            "mae": self.mae,
            "n_input": self.n_input,
            "n_scored": self.n_scored,
            "n_parse_failed": self.n_parse_failed,
            "parse_failure_rate": self.parse_failure_rate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        blocks = {PredictionType(k): (BlockMetrics.from_dict(v) if v else None) for k, v in d["blocks"].items()}
        return cls(blocks, d.get("mae"), d["n_input"], d["n_scored"], d["n_parse_failed"])


def evaluate_all(records: Sequence[PredictionRecord], bins: QuantileBins, labeling_config: LabelingConfig,
                 trailing_series_lookup: Callable[[PredictionRecord], Sequence[float]]) -> MetricsReport:
    """All three prediction-type blocks plus MAE; parse failures are only counted."""
    scored = [r for r in records if r.scorable]
    report = MetricsReport(n_input=len(records), n_scored=len(scored),
                           n_parse_failed=sum(1 for r in records if r.parse_failed))
    if not scored:
        report.blocks = dict.fromkeys(PredictionType)
        return report
    labels = TrendLabel.ordered()

    def from_fatalities(r: PredictionRecord):
        pred = fatalities_to_label(r.predicted.fatalities_point, trailing_series_lookup(r), labeling_config)
        return r.truth_label, pred

    def binned(r: PredictionRecord):
        return assign_bin(r.truth_fatalities, bins), assign_bin(r.predicted.fatalities_point, bins)

    report.blocks[PredictionType.CATEGORICAL] = block_metrics(
        confusion(scored, lambda r: (r.truth_label, r.predicted.label), labels))
    report.blocks[PredictionType.FROM_FATALITIES] = block_metrics(confusion(scored, from_fatalities, labels))
    report.blocks[PredictionType.BINNED] = block_metrics(confusion(scored, binned, list(range(bins.k))))
    report.mae = mae(scored)
    return report


# --- rendering ---------------------------------------------------------------------

METRIC_ROWS = [
    ("Accuracy", None, "accuracy"),
    ("Precision (micro)", Averaging.MICRO, "precision"),
    ("Precision (macro)", Averaging.MACRO, "precision"),
    ("Precision (weighted)", Averaging.WEIGHTED, "precision"),
    ("Recall (micro)", Averaging.MICRO, "recall"),
    ("Recall (macro)", Averaging.MACRO, "recall"),
    ("Recall (weighted)", Averaging.WEIGHTED, "recall"),
    ("F1 (micro)", Averaging.MICRO, "f1"),
    ("F1 (macro)", Averaging.MACRO, "f1"),
    ("F1 (weighted)", Averaging.WEIGHTED, "f1"),
]
NOT_SCORABLE = "n/a"


def _rate(x: float | None) -> str:
    return NOT_SCORABLE if x is None else f"{x:.4f}"


def _block_value(block: BlockMetrics | None, avg: Averaging | None, attr: str) -> float | None:
    if block is None:
        return None
    if avg is None:
        return block.accuracy
    return getattr(block.by_averaging[avg], attr)


def report_rows(reports: Mapping[tuple[str, str, str], MetricsReport]) -> tuple[list[str], list[list[str]]]:
    """Flatten reports to ``[model, experiment label, section, metric, *per-country]`` string rows."""
    models, experiments, countries = [], [], []
    for model, exp, country in reports:
        for seq, v in ((models, model), (experiments, exp), (countries, country)):
            if v not in seq:
                seq.append(v)
    exp_order = [e.value for e in Experiment]
    experiments.sort(key=lambda e: exp_order.index(e) if e in exp_order else len(exp_order))

    def cell(model, exp, country, fn):
        rep = reports.get((model, exp, country))
        return NOT_SCORABLE if rep is None else fn(rep)

    rows: list[list[str]] = []
    sections = [PredictionType.CATEGORICAL, PredictionType.FROM_FATALITIES, "MAE", PredictionType.BINNED, "Counts"]
    for model in models:
        for section in sections:
            for exp in experiments:
                exp_label = Experiment(exp).display if exp in exp_order else exp
                if section == "MAE":
                    vals = [cell(model, exp, c, lambda r: NOT_SCORABLE if r.mae is None else f"{r.mae:.2f}")
                            for c in countries]
                    rows.append([model, exp_label, "MAE", "Fatalities MAE", *vals])
                elif section == "Counts":
                    for name, fn in (("N scored", lambda r: str(r.n_scored)),
                                     ("Parse failures", lambda r: str(r.n_parse_failed)),
                                     ("Parse failure rate", lambda r: f"{r.parse_failure_rate:.4f}")):
                        rows.append([model, exp_label, "Counts", name, *[cell(model, exp, c, fn) for c in countries]])
                else:
                    for name, avg, attr in METRIC_ROWS:
                        vals = [cell(model, exp, c,
                                     lambda r, a=avg, t=attr: _rate(_block_value(r.blocks.get(section), a, t)))
                                for c in countries]
                        rows.append([model, exp_label, section.value, name, *vals])
    return countries, rows


def render_report(reports: Mapping[tuple[str, str, str], MetricsReport], fmt: str = "markdown") -> str:
    """Comparison document: metric rows grouped by prediction type and experiment, one column per country.

    Rates use 4 decimals and MAE 2; ``n/a`` marks cells with no scorable records.
    """
    if not reports:
        raise ValueError("no reports to render")
    countries, rows = report_rows(reports)
    fmt = fmt.lower()
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["model", "experiment", "prediction_type", "metric", *countries])
        writer.writerows(rows)
        return buf.getvalue()
    if fmt != "markdown":
        raise ValueError(f"unknown report format {fmt!r}")

    out = []
    for model in dict.fromkeys(r[0] for r in rows):
        out.append(f"## {model}: Experiment 1 (Parametric) vs. Experiment 2 (RAG)\n")
        out.append("| Experiment | Metric | " + " | ".join(countries) + " |")
        out.append("|---|---|" + "---:|" * len(countries))
        last_group = None
        for _, exp_label, section, metric, *vals in (r for r in rows if r[0] == model):
            group = f"{exp_label}: {section}"
            shown = group if group != last_group else ""
            last_group = group
            out.append(f"| {shown} | {metric} | " + " | ".join(vals) + " |")
        out.append("")
    return "\n".join(out)
