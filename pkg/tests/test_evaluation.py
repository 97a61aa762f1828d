import random
from datetime import date

import numpy as np
import pytest

from conflictcast.errors import NoScorableRecords
from conflictcast.evaluation import (
    Averaging,
    MetricsReport,
    PredictionRecord,
    PredictionType,
    classification_metrics,
    confusion,
    confusion_from_pairs,
    evaluate_all,
    mae,
    render_report,
)
from conflictcast.forecasting import Experiment, ForecastOutput, ForecastTask
from conflictcast.labeling import LabelingConfig, QuantileBins, TrendLabel
from oracles import metrics_oracle

CLASSES = TrendLabel.ordered()


def _record(month, truth, pred_label, truth_n, pred_n, exp=Experiment.PARAMETRIC, failed=False):
    task = ForecastTask("Sudan", date(2023, month, 1), exp)
    predicted = None if failed else ForecastOutput(pred_label, float(pred_n), None, "")
    return PredictionRecord(task, truth, truth_n, predicted, failed, "m", "parse: x" if failed else None)


def test_hand_computed_metrics():
    truth = ["a", "a", "b", "c"]
    pred = ["a", "b", "b", "b"]
    cm = confusion_from_pairs(zip(truth, pred), ["a", "b", "c"])
    assert cm.counts.tolist() == [[1, 1, 0], [0, 1, 0], [0, 1, 0]]
    macro = classification_metrics(cm, Averaging.MACRO)
    # a: P=1 R=.5 F=2/3 ; b: P=1/3 R=1 F=.5 ; c: 0
    assert macro.accuracy == 0.5
    assert macro.precision == pytest.approx((1 + 1 / 3) / 3)
    assert macro.recall == pytest.approx(0.5)
    assert macro.f1 == pytest.approx((2 / 3 + 0.5) / 3)
    weighted = classification_metrics(cm, "weighted")
    assert weighted.f1 == pytest.approx((2 * 2 / 3 + 0.5) / 4)


def test_random_sets_match_oracle_and_sklearn():
    sk = pytest.importorskip("sklearn.metrics")
    rng = random.Random(3)
    labels = list(range(4))
    for _ in range(50):
        n = rng.randint(1, 20)
        truth = [rng.choice(labels) for _ in range(n)]
        pred = [rng.choice(labels) for _ in range(n)]
        cm = confusion_from_pairs(zip(truth, pred), labels)
        oracle = metrics_oracle(truth, pred, labels)
        for avg in ("micro", "macro", "weighted"):
            got = classification_metrics(cm, avg)
            p, r, f, _ = sk.precision_recall_fscore_support(truth, pred, labels=labels, average=avg,
                                                           zero_division=0)
            assert got[:3] == pytest.approx(oracle[avg], abs=1e-9)
            assert got[:3] == pytest.approx((p, r, f), abs=1e-9)
            assert got.accuracy == pytest.approx(sk.accuracy_score(truth, pred), abs=1e-12)


def test_micro_f1_equals_accuracy_exactly():
    rng = random.Random(11)
    for _ in range(200):
        n = rng.randint(1, 20)
        pairs = [(rng.randrange(4), rng.randrange(4)) for _ in range(n)]
        m = classification_metrics(confusion_from_pairs(pairs, range(4)), Averaging.MICRO)
        assert m.f1 == m.accuracy


def test_confusion_skips_parse_failures_and_errors_when_empty():
    recs = [_record(2, TrendLabel.STABLE, TrendLabel.STABLE, 10, 10),
            _record(3, TrendLabel.STABLE, None, 10, 0, failed=True)]
    cm = confusion(recs, lambda r: (r.truth_label, r.predicted.label), CLASSES)
    assert cm.total == 1
    with pytest.raises(NoScorableRecords):
        confusion(recs[1:], lambda r: (r.truth_label, r.predicted.label), CLASSES)
    with pytest.raises(NoScorableRecords):
        classification_metrics(confusion_from_pairs([], CLASSES), "macro")


def test_mae():
    recs = [_record(2, TrendLabel.STABLE, TrendLabel.STABLE, 100, 150),
            _record(3, TrendLabel.STABLE, TrendLabel.STABLE, 200, 100),
            _record(4, TrendLabel.STABLE, None, 10, 0, failed=True)]
    assert mae(recs) == 75.0


def test_evaluate_all_blocks():
    recs = [_record(2, TrendLabel.ESCALATE, TrendLabel.ESCALATE, 500, 520),
            _record(3, TrendLabel.STABLE, TrendLabel.ESCALATE, 400, 410),
            _record(4, TrendLabel.DEESCALATE, TrendLabel.STABLE, 100, 90, failed=True)]
    bins = QuantileBins((100.0, 300.0, 450.0))
    trailing = {2: [300, 350, 400], 3: [400, 400, 400], 4: [400, 300, 200]}
    rep = evaluate_all(recs, bins, LabelingConfig(), lambda r: trailing[r.task.target_month.month])
    assert rep.n_input == 3 and rep.n_scored == 2 and rep.n_parse_failed == 1
    assert rep.parse_failure_rate == pytest.approx(1 / 3)
    assert rep.mae == 15.0
    assert rep.blocks[PredictionType.CATEGORICAL].accuracy == 0.5
    # 520 vs trailing mean 350 -> Escalate (hit); 410 vs 400 -> Stable (hit)
    assert rep.blocks[PredictionType.FROM_FATALITIES].accuracy == 1.0
    # bins: 500 -> 3, 520 -> 3 ; 400 -> 2, 410 -> 2
    assert rep.blocks[PredictionType.BINNED].accuracy == 1.0
    again = MetricsReport.from_dict(rep.to_dict())
    assert again.to_dict() == rep.to_dict()


def test_render_report_layout():
    recs = [_record(2, TrendLabel.ESCALATE, TrendLabel.ESCALATE, 500, 520),
            _record(3, TrendLabel.STABLE, TrendLabel.DEESCALATE, 400, 100)]
    rep = evaluate_all(recs, QuantileBins((100.0, 300.0, 450.0)), LabelingConfig(), lambda r: [400, 400, 400])
    reports = {("m", "parametric", "Sudan"): rep, ("m", "rag", "Ethiopia"): rep}
    md = render_report(reports, "markdown")
    assert md.startswith("## m: Experiment 1 (Parametric) vs. Experiment 2 (RAG)")
    assert "| Experiment | Metric | Sudan | Ethiopia |" in md
    assert "| Exp 1: MAE | Fatalities MAE | 160.00 | n/a |" in md
    csv_text = render_report(reports, "csv")
    lines = csv_text.splitlines()
    assert lines[0] == "model,experiment,prediction_type,metric,Sudan,Ethiopia"
    assert "m,Exp 2,Class (Categorical),Accuracy,n/a,0.5000" in lines
    assert np.all([len(line.split(",")) == 6 for line in lines])
