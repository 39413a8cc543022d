"""
Detection metrics, threshold sweeps and ablation reports.
"""
import logging
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import pandas as pd
from sklearn.metrics import confusion_matrix

from src.errors import MetricsError
from src.fusion_tools import decide, fuse_scores, train_fusion, training_set
from src.models.domain import Label
from src.models.fusion import AggregationMode, FusionHyper, ScoreBundle, ViewSet
from src.models.prompts import Strategy
from src.models.reports import ComparisonReport, ConfusionMatrix, MetricsReport, ReferenceRow
from src.models.scoring import SessionScores

logger = logging.getLogger(__name__)

PREC_UNDEFINED = "prec_undefined"
DR_UNDEFINED = "dr_undefined"
FPR_UNDEFINED = "fpr_undefined"

_R42 = "CERT r4.2"
_R52 = "CERT r5.2"

REFERENCE_ROWS: Dict[str, List[ReferenceRow]] = {
    "headline": [
        ReferenceRow(name="DMFI-B", source=_R42, prec=0.953, dr=0.929, fpr=0.009, acc=0.981),
        ReferenceRow(name="DMFI-B", source=_R52, prec=0.945, dr=0.938, fpr=0.011, acc=0.981),
    ],
    # preprocessing x fine-tuning strategy, CERT r4.2
    "views": [
        ReferenceRow(name="semantic / DMFI-A", source=_R42, prec=0.927, dr=0.911, fpr=0.016, acc=0.973),
        ReferenceRow(name="semantic / DMFI-B", source=_R42, prec=0.936, dr=0.932, fpr=0.013, acc=0.978),
        ReferenceRow(name="behavioral / DMFI-A", source=_R42, prec=0.902, dr=0.897, fpr=0.021, acc=0.967),
        ReferenceRow(name="behavioral / DMFI-B", source=_R42, prec=0.914, dr=0.902, fpr=0.019, acc=0.970),
        ReferenceRow(name="both / DMFI-A", source=_R42, prec=0.942, dr=0.933, fpr=0.012, acc=0.979),
        ReferenceRow(name="both / DMFI-B", source=_R42, prec=0.953, dr=0.939, fpr=0.009, acc=0.983),
    ],
    "aggregation": [
        ReferenceRow(name=AggregationMode.MAX_ONLY.value, source=_R42, prec=0.912, dr=0.926, fpr=0.018, acc=0.973),
        ReferenceRow(name=AggregationMode.MEAN_ONLY.value, source=_R42, prec=0.919, dr=0.928, fpr=0.016, acc=0.974),
        ReferenceRow(name=AggregationMode.MEAN_MAX.value, source=_R42, prec=0.932, dr=0.925, fpr=0.013, acc=0.976),
        ReferenceRow(name=AggregationMode.FULL_STATS.value, source=_R42, prec=0.936, dr=0.931, fpr=0.012, acc=0.978),
    ],
}

REPORT_COLUMNS = ["name", "prec", "dr", "fpr", "acc", "tp", "fp", "fn", "tn", "unscored", "flags"]


def confusion(preds: Sequence[Union[Label, int]], truth: Sequence[Union[Label, int]]) -> ConfusionMatrix:
    if len(preds) != len(truth):
        raise MetricsError(f"prediction/truth length mismatch: {len(preds)} vs {len(truth)}")
    if len(preds) == 0:
        return ConfusionMatrix()
    tn, fp, fn, tp = confusion_matrix(
        [int(t) for t in truth], [int(p) for p in preds], labels=[0, 1]
    ).ravel()
    return ConfusionMatrix(tp=int(tp), fp=int(fp), fn=int(fn), tn=int(tn))


def metrics(
    m: ConfusionMatrix, unscored: int = 0, name: str = "", config: Optional[Dict[str, Any]] = None
) -> MetricsReport:
    """Precision, detection rate, false positive rate and accuracy.

    Undefined ratios get a fixed value and a flag: precision with no
    positive predictions is 1.0 when nothing was missed and 0.0 otherwise,
    detection rate with no abnormal truth is 1.0, false positive rate with
    no normal truth is 0.0.
    """
    if m.total == 0:
        raise MetricsError(f"cannot compute metrics{' for ' + name if name else ''}: no evaluated sessions")
    flags = []
    if m.tp + m.fp == 0:
        prec = 1.0 if m.fn == 0 else 0.0
        flags.append(PREC_UNDEFINED)
    else:
        prec = m.tp / (m.tp + m.fp)
    if m.tp + m.fn == 0:
        dr = 1.0
        flags.append(DR_UNDEFINED)
    else:
        dr = m.tp / (m.tp + m.fn)
    if m.fp + m.tn == 0:
        fpr = 0.0
        flags.append(FPR_UNDEFINED)
    else:
        fpr = m.fp / (m.fp + m.tn)
    acc = (m.tp + m.tn) / m.total
    counts = {**m.model_dump(), "total": m.total, "unscored": unscored}
    return MetricsReport(name=name, prec=prec, dr=dr, fpr=fpr, acc=acc, counts=counts, flags=flags, config=config or {})


def evaluate_bundles(
    bundles: Iterable[ScoreBundle], name: str = "", config: Optional[Dict[str, Any]] = None
) -> MetricsReport:
    """Metrics over decided, labeled bundles; unscored ones are only counted"""
    bundles = list(bundles)
    evaluated = [b for b in bundles if b.scored and b.truth is not None]
    unscored = sum(1 for b in bundles if not b.scored)
    if unscored:
        logger.warning(f"{unscored} sessions were unscored and are excluded from metrics")
    m = confusion([b.prediction for b in evaluated], [b.truth for b in evaluated])
    return metrics(m, unscored=unscored, name=name, config=config)


def run_name(bundles: Iterable[ScoreBundle], strategy: Strategy, mode: AggregationMode) -> str:
    """Report name from the strategy and aggregation recorded in the bundles.

    The given config values only fill in for bundles written without them.
    """
    bundles = list(bundles)
    strategies = sorted({b.strategy.value for b in bundles if b.strategy is not None}) or [strategy.value]
    modes = sorted({b.mode.value for b in bundles if b.mode is not None}) or [mode.value]
    if len(strategies) > 1 or len(modes) > 1:
        logger.warning(f"Bundles mix strategies {strategies} and modes {modes}")
    return f"{'+'.join(strategies)} {'+'.join(modes)}"


def threshold_sweep(
    alphas: Sequence[float], truth: Sequence[Union[Label, int]], thetas: Sequence[float]
) -> List[MetricsReport]:
    """One report per threshold over a fixed score set"""
    if len(alphas) != len(truth):
        raise MetricsError(f"score/truth length mismatch: {len(alphas)} vs {len(truth)}")
    return [
        metrics(confusion([decide(a, theta) for a in alphas], truth), name=f"theta={theta:.2f}")
        for theta in thetas
    ]


def default_thetas(step: float = 0.05) -> List[float]:
    return [round(k * step, 4) for k in range(1, int(round(1.0 / step)))]


def _train_and_evaluate(
    train: Sequence[SessionScores], test: Sequence[SessionScores], hyper: FusionHyper, name: str
) -> MetricsReport:
    params, loss = train_fusion(training_set(train), hyper)
    logger.info(f"{name}: trained with loss {loss:.6f}")
    report = evaluate_bundles(fuse_scores(test, params), name=name)
    report.config = {"mode": hyper.mode.value, "views": hyper.views.value, "final_loss": loss}
    return report


def ablation_report(
    train: Sequence[SessionScores],
    test: Sequence[SessionScores],
    modes: Sequence[AggregationMode],
    hyper: FusionHyper,
    config: Optional[Dict[str, Any]] = None,
) -> ComparisonReport:
    """Retrain the fusion network once per aggregation mode, same seed, same scores"""
    rows = [
        _train_and_evaluate(train, test, hyper.model_copy(update={"mode": mode}), mode.value)
        for mode in modes
    ]
    return ComparisonReport(
        title="Semantic score aggregation", rows=rows,
        references=REFERENCE_ROWS["aggregation"], config=config or {},
    )


def view_ablation_report(
    train: Sequence[SessionScores],
    test: Sequence[SessionScores],
    hyper: FusionHyper,
    view_sets: Sequence[ViewSet] = tuple(ViewSet),
    config: Optional[Dict[str, Any]] = None,
) -> ComparisonReport:
    rows = [
        _train_and_evaluate(train, test, hyper.model_copy(update={"views": views}), views.value)
        for views in view_sets
    ]
    return ComparisonReport(
        title="Input views", rows=rows, references=REFERENCE_ROWS["views"], config=config or {},
    )


def report_frame(rows: Iterable[MetricsReport]) -> pd.DataFrame:
    records = [
        {
            "name": r.name or "-",
            "prec": r.prec, "dr": r.dr, "fpr": r.fpr, "acc": r.acc,
            **{k: r.counts.get(k, 0) for k in ("tp", "fp", "fn", "tn", "unscored")},
            "flags": ",".join(r.flags) or "-",
        }
        for r in rows
    ]
    return pd.DataFrame(records, columns=REPORT_COLUMNS)


def reference_frame(rows: Iterable[ReferenceRow]) -> pd.DataFrame:
    return pd.DataFrame(
        [{"name": r.name, "source": r.source, "prec": r.prec, "dr": r.dr, "fpr": r.fpr, "acc": r.acc} for r in rows],
        columns=["name", "source", "prec", "dr", "fpr", "acc"],
    )


def render_text(report: Union[MetricsReport, ComparisonReport], references: Sequence[ReferenceRow] = ()) -> str:
    """Aligned-column text table, published figures appended as reference"""
    if isinstance(report, MetricsReport):
        title, rows, refs = "Detection metrics", [report], list(references)
    else:
        title, rows, refs = report.title, report.rows, list(report.references) + list(references)
    parts = [title, report_frame(rows).to_string(index=False, float_format=lambda x: f"{x:.3f}")]
    if refs:
        parts.append("Published reference (not reproduced here):")
        parts.append(reference_frame(refs).to_string(index=False, float_format=lambda x: f"{x:.3f}"))
    return "\n".join(parts) + "\n"
