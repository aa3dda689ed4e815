"""Confusion matrices, per-class/macro metrics and Cohen's kappa."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import SSGLError


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes.

    Indeterminate predictions are kept out of the tallies but still count
    toward the accuracy denominator.
    """

    counts: np.ndarray
    indeterminate_count: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    indeterminate: int
    kappa: float | None = None

    def as_dict(self, catalog: Sequence[str]) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "kappa": self.kappa,
            "per_class": [
                {"class": name, "precision": p, "recall": r, "f1": f}
                for name, p, r, f in zip(catalog, self.precision, self.recall, self.f1)
            ],
            "indeterminate": self.indeterminate,
        }


def _as_mapping(values) -> Mapping:
    if isinstance(values, Mapping):
        return values
    return dict(enumerate(values))


def confusion_matrix(truth, pred, catalog: Sequence[str] | int) -> ConfusionMatrix:
    """Tally (true, predicted) pairs over the ids in `pred`.

    `truth` and `pred` are mappings from id to class index (or sequences,
    indexed by position); a predicted value of None is indeterminate.
    """
    truth, pred = _as_mapping(truth), _as_mapping(pred)
    k = catalog if isinstance(catalog, int) else len(catalog)
    counts = np.zeros((k, k), dtype=np.int64)
    indeterminate = 0
    for ident, p in pred.items():
        if ident not in truth:
            raise SSGLError(f"predicted id {ident!r} has no truth entry")
        t = truth[ident]
        if p is None:
            indeterminate += 1
            continue
        if not (0 <= t < k and 0 <= p < k):
            raise SSGLError(f"class index out of range for id {ident!r}")
        counts[t, p] += 1
    return ConfusionMatrix(counts, indeterminate)


def _ratio(num: float, den: float) -> float:
    return float(num) / float(den) if den else 0.0


def classification_metrics(cm: ConfusionMatrix) -> MetricsReport:
    c = cm.counts
    evaluated = cm.total + cm.indeterminate_count
    if evaluated == 0:
        raise SSGLError("empty confusion matrix")
    diag = np.diag(c)
    col, row = c.sum(axis=0), c.sum(axis=1)
    precision = [_ratio(diag[i], col[i]) for i in range(c.shape[0])]
    recall = [_ratio(diag[i], row[i]) for i in range(c.shape[0])]
    f1 = [_ratio(2 * p * r, p + r) for p, r in zip(precision, recall)]
    return MetricsReport(
        accuracy=_ratio(diag.sum(), evaluated),
        precision=tuple(precision),
        recall=tuple(recall),
        f1=tuple(f1),
        macro_precision=float(np.mean(precision)),
        macro_recall=float(np.mean(recall)),
        macro_f1=float(np.mean(f1)),
        indeterminate=cm.indeterminate_count,
    )


def cohen_kappa(rater_a, rater_b, catalog: Sequence[str] | int) -> float:
    """Chance-corrected agreement; defined as 1 when expected agreement is 1."""
    a, b = _as_mapping(rater_a), _as_mapping(rater_b)
    if set(a) != set(b):
        shared = set(a) & set(b)
        if not shared:
            raise SSGLError("raters share no ids")
        raise SSGLError("raters must label the same ids")
    if not a:
        raise SSGLError("raters share no ids")
    k = catalog if isinstance(catalog, int) else len(catalog)
    table = np.zeros((k, k), dtype=np.int64)
    for ident, ca in a.items():
        table[ca, b[ident]] += 1
    n = table.sum()
    p_o = np.trace(table) / n
    p_e = float(table.sum(axis=1) @ table.sum(axis=0)) / (n * n)
    if p_e == 1.0:
        return 1.0
    return float((p_o - p_e) / (1.0 - p_e))
