from datetime import date, timedelta

import numpy as np
import pytest

from src.errors import MetricsError
from src.fusion_tools import fuse_scores, init_weights
from src.eval_tools import (
    DR_UNDEFINED,
    FPR_UNDEFINED,
    PREC_UNDEFINED,
    REFERENCE_ROWS,
    ablation_report,
    confusion,
    default_thetas,
    evaluate_bundles,
    metrics,
    render_text,
    run_name,
    threshold_sweep,
    view_ablation_report,
)
from src.models.domain import Label
from src.models.fusion import UNSCORED, AggregationMode, FusionHyper, MlpParams, ScoreBundle, ViewSet
from src.models.prompts import Strategy
from src.models.reports import ConfusionMatrix
from src.models.scoring import SessionScores


def scored_records(n_normal, n_abnormal, seed=0, offset=0):
    """Branch scores drawn around the levels the dual-branch mock produces"""
    rng = np.random.default_rng(seed)
    start = date(2010, 1, 4)
    records = []
    for i in range(n_normal + n_abnormal):
        abnormal = i >= n_normal
        centre = 0.69 if abnormal else 0.31
        sem = np.clip(rng.normal(centre, 0.03, size=int(rng.integers(1, 5))), 0, 1).tolist()
        if abnormal:
            sem[0] = float(np.clip(rng.normal(0.69, 0.02), 0, 1))
        records.append(SessionScores(
            user=f"U{offset + i:04d}", day=start + timedelta(days=i % 5),
            label=Label.ABNORMAL if abnormal else Label.NORMAL,
            semantic_scores=sem, alpha_beh=float(np.clip(rng.normal(centre, 0.05), 0, 1)),
        ))
    return records


def test_metrics_of_known_matrix():
    report = metrics(ConfusionMatrix(tp=9, fp=1, fn=1, tn=89))
    assert report.prec == pytest.approx(0.9)
    assert report.dr == pytest.approx(0.9)
    assert report.fpr == pytest.approx(0.011111, abs=1e-6)
    assert report.acc == pytest.approx(0.98)
    assert report.flags == []
    assert report.counts["total"] == 100


def test_confusion_counts_each_cell():
    preds = [1, 1, 0, 0, 1]
    truth = [Label.ABNORMAL, Label.NORMAL, Label.ABNORMAL, Label.NORMAL, Label.ABNORMAL]
    assert confusion(preds, truth) == ConfusionMatrix(tp=2, fp=1, fn=1, tn=1)


def test_all_normal_truth_and_predictions():
    report = metrics(confusion([0, 0, 0], [0, 0, 0]))
    assert report.prec == 1.0 and report.dr == 1.0 and report.fpr == 0.0 and report.acc == 1.0
    assert set(report.flags) == {PREC_UNDEFINED, DR_UNDEFINED}


def test_missed_positives_without_predictions():
    report = metrics(confusion([0, 0], [1, 1]))
    assert report.prec == 0.0
    assert report.dr == 0.0
    assert FPR_UNDEFINED in report.flags


def test_empty_input_is_an_error():
    assert confusion([], []) == ConfusionMatrix()
    with pytest.raises(MetricsError, match="no evaluated sessions"):
        metrics(ConfusionMatrix())


def test_length_mismatch():
    with pytest.raises(MetricsError, match="mismatch"):
        confusion([1], [1, 0])


def test_unscored_bundles_are_counted_not_evaluated():
    day = date(2010, 1, 15)
    bundles = [
        ScoreBundle(user="a", day=day, truth=Label.ABNORMAL, alpha_joint=0.8, prediction=Label.ABNORMAL),
        ScoreBundle(user="b", day=day, truth=Label.NORMAL, alpha_joint=0.2, prediction=Label.NORMAL),
        ScoreBundle(user="c", day=day, truth=Label.ABNORMAL, flags=[UNSCORED]),
    ]
    report = evaluate_bundles(bundles, name="test")
    assert report.counts["total"] == 2
    assert report.counts["unscored"] == 1
    assert report.acc == 1.0


def test_sweep_trades_detection_for_false_positives():
    rng = np.random.default_rng(5)
    truth = [1] * 30 + [0] * 70
    alphas = [float(a) for a in np.clip(np.r_[rng.normal(0.65, 0.1, 30), rng.normal(0.35, 0.1, 70)], 0, 1)]
    rows = threshold_sweep(alphas, truth, default_thetas())
    assert rows[0].name == "theta=0.05"
    assert len(rows) == 19
    for low, high in zip(rows, rows[1:]):
        assert high.dr <= low.dr
        assert high.fpr <= low.fpr


def test_aggregation_ablation_rows():
    train = scored_records(120, 30, seed=1)
    test = scored_records(80, 20, seed=2, offset=500)
    hyper = FusionHyper(learning_rate=0.01, epochs=100, seed=3)
    report = ablation_report(train, test, list(AggregationMode), hyper)
    assert [r.name for r in report.rows] == ["MaxOnly", "MeanOnly", "MeanMax", "FullStats"]
    assert report.references == REFERENCE_ROWS["aggregation"]
    assert all(r.counts["total"] == 100 for r in report.rows)
    assert report.rows[0].config["mode"] == "MaxOnly"


def test_view_ablation_rows():
    train = scored_records(60, 20, seed=4)
    test = scored_records(40, 10, seed=5, offset=500)
    report = view_ablation_report(train, test, FusionHyper(learning_rate=0.01, epochs=50))
    assert [r.name for r in report.rows] == [v.value for v in ViewSet]
    assert len(report.references) == 6


def test_render_text_lists_rows_and_references():
    report = metrics(ConfusionMatrix(tp=9, fp=1, fn=1, tn=89), name="DMFI-B")
    text = render_text(report, REFERENCE_ROWS["headline"])
    lines = text.splitlines()
    assert lines[0] == "Detection metrics"
    assert "DMFI-B" in lines[2] and "0.900" in lines[2] and "0.011" in lines[2]
    assert "Published reference" in text
    assert "CERT r5.2" in text


def test_report_name_comes_from_the_bundles():
    hyper = FusionHyper(mode=AggregationMode.MEAN_MAX)
    weights, biases = init_weights(hyper.layer_sizes, seed=0)
    params = MlpParams.from_arrays(weights, biases, hyper)
    records = [r.model_copy(update={"strategy": Strategy.DMFI_A}) for r in scored_records(3, 2)]
    bundles = fuse_scores(records, params)
    assert {(b.strategy, b.mode) for b in bundles} == {(Strategy.DMFI_A, AggregationMode.MEAN_MAX)}
    assert run_name(bundles, Strategy.DMFI_B, AggregationMode.FULL_STATS) == "DMFI_A MeanMax"

    legacy = [b.model_copy(update={"strategy": None, "mode": None}) for b in bundles]
    assert run_name(legacy, Strategy.DMFI_B, AggregationMode.FULL_STATS) == "DMFI_B FullStats"
