"""Classification metrics over per-warning predictions.

All seven metrics are computed from the confusion counts and the ranked
TP-probability scores. Metrics whose denominators vanish are reported as
absent with a reason, never as NaN; MCC follows the zero-when-any-factor-
is-zero convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, UnlabeledRecordError
from .fuzz import FuzzKind
from .warnings import Label


@dataclass
class PredictionRecord:
    warning_id: str
    predicted: Label
    score: float
    fuzz_used: bool = False
    fuzz_kind: FuzzKind | None = None


@dataclass
class EvalReport:
    n: int
    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    precision: float | None
    recall: float | None
    f1: float | None
    mcc: float
    auc_roc: float | None
    auc_pr: float | None
    fuzz_invocation_rate: float
    undefined: dict[str, str] = field(default_factory=dict)


def _auc_roc(scores: np.ndarray, positive: np.ndarray) -> float:
    """Rank statistic (Mann-Whitney U) with tied scores contributing 1/2."""
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    n_pos = int(positive.sum())
    n_neg = len(scores) - n_pos
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _auc_pr(scores: np.ndarray, positive: np.ndarray) -> float:
    """Average precision: step-wise sum of precision at each recall increment.

    Tied scores are folded into one threshold step, no interpolation.
    """
    order = np.argsort(-scores, kind="stable")
    n_pos = int(positive.sum())
    ap = 0.0
    cum_tp = 0
    cum_fp = 0
    prev_recall = 0.0
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        group = order[i : j + 1]
        cum_tp += int(positive[group].sum())
        cum_fp += len(group) - int(positive[group].sum())
        recall = cum_tp / n_pos
        precision = cum_tp / (cum_tp + cum_fp)
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return float(ap)


def compute_metrics(
    predictions: list[PredictionRecord], labels: dict[str, Label]
) -> EvalReport:
    """Build the full report from per-warning predictions and ground truth."""
    if not predictions:
        raise EmptyInput("no predictions to score")
    missing = [p.warning_id for p in predictions if p.warning_id not in labels]
    if missing:
        raise UnlabeledRecordError(f"no label for: {', '.join(missing)}")
    for p in predictions:
        if not 0.0 <= p.score <= 1.0:
            raise ValueError(f"score for {p.warning_id} must be in [0,1], got {p.score}")

    tp = fp = fn = tn = 0
    for p in predictions:
        actual = labels[p.warning_id]
        if p.predicted is Label.TRUE_POSITIVE:
            if actual is Label.TRUE_POSITIVE:
                tp += 1
            else:
                fp += 1
        else:
            if actual is Label.TRUE_POSITIVE:
                fn += 1
            else:
                tn += 1

    n = len(predictions)
    undefined: dict[str, str] = {}
    accuracy = (tp + tn) / n

    precision = recall = f1 = None
    if tp + fp == 0:
        undefined["precision"] = "no positive predictions (TP+FP = 0)"
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        undefined["recall"] = "no positive labels (TP+FN = 0)"
    else:
        recall = tp / (tp + fn)
    if precision is None or recall is None:
        undefined["f1"] = "precision or recall undefined"
    elif precision + recall == 0:
        undefined["f1"] = "precision and recall both 0"
    else:
        f1 = 2 * precision * recall / (precision + recall)

    factors = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = 0.0 if factors == 0 else (tp * tn - fp * fn) / math.sqrt(factors)

    scores = np.array([p.score for p in predictions], dtype=np.float64)
    positive = np.array(
        [labels[p.warning_id] is Label.TRUE_POSITIVE for p in predictions], dtype=bool
    )
    auc_roc = auc_pr = None
    if positive.all() or not positive.any():
        undefined["auc_roc"] = "only one class present"
        undefined["auc_pr"] = "only one class present"
    else:
        auc_roc = _auc_roc(scores, positive)
        auc_pr = _auc_pr(scores, positive)

    fuzz_rate = sum(1 for p in predictions if p.fuzz_used) / n
    return EvalReport(
        n=n, tp=tp, fp=fp, fn=fn, tn=tn,
        accuracy=accuracy, precision=precision, recall=recall, f1=f1, mcc=mcc,
        auc_roc=auc_roc, auc_pr=auc_pr, fuzz_invocation_rate=fuzz_rate,
        undefined=undefined,
    )


_REPORT_KEYS = (
    "n", "tp", "fp", "fn", "tn", "accuracy", "precision", "recall", "f1",
    "mcc", "auc_roc", "auc_pr", "fuzz_invocation_rate",
)


def write_report(report: EvalReport) -> bytes:
    """Flat key-value document in stable key order."""
    lines = []
    for key in _REPORT_KEYS:
        value = getattr(report, key)
        if value is None:
            lines.append(f"{key} = undefined ({report.undefined[key]})")
        elif isinstance(value, int):
            lines.append(f"{key} = {value}")
        else:
            lines.append(f"{key} = {value!r}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def write_verdicts(predictions: list[PredictionRecord]) -> bytes:
    """Verdicts file: id, predicted label, score, fuzz flag, fuzz kind."""
    lines = [
        "\t".join(
            [
                p.warning_id,
                p.predicted.value,
                repr(p.score),
                "1" if p.fuzz_used else "0",
                p.fuzz_kind.value if p.fuzz_kind is not None else "-",
            ]
        )
        for p in predictions
    ]
    return ("\n".join(lines) + "\n" if lines else "").encode("utf-8")


def read_verdicts(data: bytes) -> list[PredictionRecord]:
    out = []
    for line in data.decode("utf-8").split("\n"):
        if not line.strip():
            continue
        wid, predicted, score, fuzz_used, fuzz_kind = line.split("\t")
        out.append(
            PredictionRecord(
                warning_id=wid,
                predicted=Label(predicted),
                score=float(score),
                fuzz_used=fuzz_used == "1",
                fuzz_kind=None if fuzz_kind == "-" else FuzzKind(fuzz_kind),
            )
        )
    return out
