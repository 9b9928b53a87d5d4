"""Classification metrics and multi-run summaries."""
from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field

import numpy as np

from pnnkit.errors import InvalidInputError, ShapeError


def _pair(predictions, labels):
    p = np.asarray(predictions, dtype=np.int64).reshape(-1)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if p.shape != y.shape:
        raise ShapeError(f"{p.size} predictions for {y.size} labels")
    if p.size == 0:
        raise InvalidInputError("no samples to score")
    return p, y


def accuracy(predictions, labels) -> float:
    p, y = _pair(predictions, labels)
    return float(np.mean(p == y))


def confusion_matrix(predictions, labels, num_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    p, y = _pair(predictions, labels)
    if min(p.min(), y.min()) < 0 or max(p.max(), y.max()) >= num_classes:
        raise InvalidInputError(f"class indices must lie in [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y, p), 1)
    return cm


def _per_class(cm: np.ndarray):
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, tp / np.maximum(predicted, 1), 0.0)
        recall = np.where(actual > 0, tp / np.maximum(actual, 1), 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / np.where(denom > 0, denom, 1), 0.0)
    return precision, recall, f1, actual


def macro_f1(predictions, labels, num_classes: int) -> float:
    """Unweighted mean F1 over classes present in ``labels``."""
    cm = confusion_matrix(predictions, labels, num_classes)
    _, _, f1, actual = _per_class(cm)
    return float(f1[actual > 0].mean())


def micro_f1(predictions, labels, num_classes: int) -> float:
    """Pooled F1; for single-label problems this equals accuracy."""
    cm = confusion_matrix(predictions, labels, num_classes)
    return float(np.trace(cm) / cm.sum())


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def binary_auc(scores, positives) -> float:
    """Area under the ROC curve from the Mann-Whitney statistic (ties count one half)."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise InvalidInputError("AUC needs both positive and negative samples")
    ranks = _midranks(s)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auroc_ovr_macro(scores, labels) -> float:
    return _auroc(scores, labels)[0]


def _auroc(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.ndim != 2 or s.shape[0] != y.size:
        raise ShapeError(f"scores {s.shape} do not match {y.size} labels")
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("scores must be finite")
    per_class = {}
    for c in range(s.shape[1]):
        pos = y == c
        if 0 < pos.sum() < y.size:
            per_class[c] = binary_auc(s[:, c], pos)
    if not per_class:
        raise InvalidInputError("no class has both positive and negative samples")
    return float(np.mean(list(per_class.values()))), per_class


@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    micro_f1: float
    auroc_ovr_macro: float
    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    excluded_classes: list[int] = field(default_factory=list)

    def metrics(self) -> dict[str, float]:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
            "auroc_ovr_macro": self.auroc_ovr_macro,
        }

    def to_text(self, class_names=None) -> str:
        c = self.confusion.shape[0]
        names = list(class_names) if class_names is not None else [str(i) for i in range(c)]
        lines = [f"{k} = {v!r}" for k, v in self.metrics().items()]
        lines.append(f"samples = {int(self.confusion.sum())}")
        lines.append("excluded_classes = " + ",".join(str(i) for i in self.excluded_classes))
        for i, name in enumerate(names):
            lines.append(f"precision.{name} = {float(self.precision[i])!r}")
            lines.append(f"recall.{name} = {float(self.recall[i])!r}")
        lines.append("")
        lines.append("confusion (rows=true, cols=predicted)")
        lines.append("\t" + "\t".join(names))
        for i, name in enumerate(names):
            lines.append(name + "\t" + "\t".join(str(int(v)) for v in self.confusion[i]))
        return "\n".join(lines) + "\n"


def evaluate(probabilities, labels, num_classes: int | None = None) -> EvalReport:
    """Full report from softmax scores; classes absent from ``labels`` are excluded from macro averages."""
    probs = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    c = probs.shape[1] if num_classes is None else num_classes
    pred = probs.argmax(axis=1)
    cm = confusion_matrix(pred, y, c)
    precision, recall, f1, actual = _per_class(cm)
    present = actual > 0
    try:
        auc = _auroc(probs, y)[0]
    except InvalidInputError:
        auc = float("nan")
    return EvalReport(
        accuracy=float(np.trace(cm) / cm.sum()),
        macro_f1=float(f1[present].mean()),
        micro_f1=float(np.trace(cm) / cm.sum()),
        auroc_ovr_macro=auc,
        confusion=cm,
        precision=precision,
        recall=recall,
        excluded_classes=[int(i) for i in np.flatnonzero(~present)],
    )


@dataclass
class RunStats:
    runs: int
    mean: dict[str, float]
    sd: dict[str, float] | None

    def row(self, key: str) -> str:
        if self.sd is None:
            return f"{self.mean[key]:.4f}"
        return f"{self.mean[key]:.4f} ± {self.sd[key]:.4f}"


def run_stats(reports) -> RunStats:
    """Per-metric mean and sample standard deviation (``R-1`` denominator)."""
    reports = list(reports)
    if not reports:
        raise InvalidInputError("no reports to summarise")
    keys = list(reports[0].metrics())
    # statistics works in exact rational arithmetic, so identical runs give SD exactly 0
    table = {k: [float(r.metrics()[k]) for r in reports] for k in keys}
    mean = {k: statistics.fmean(v) for k, v in table.items()}
    sd = None
    if len(reports) >= 2:
        sd = {k: statistics.stdev(v) for k, v in table.items()}
    return RunStats(len(reports), mean, sd)


def pooled_sd(a: RunStats, b: RunStats, key: str = "accuracy") -> float:
    if a.sd is None or b.sd is None:
        return 0.0
    return math.sqrt(((a.runs - 1) * a.sd[key] ** 2 + (b.runs - 1) * b.sd[key] ** 2) / (a.runs + b.runs - 2))
