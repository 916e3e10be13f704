"""Accuracy, confusion matrices and per-class change analysis between two runs."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import AlignmentError, ParameterError


@dataclass
class PredictionSet:
    ids: list[str]
    true: np.ndarray
    pred: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.ids = list(self.ids)
        self.true = np.asarray(self.true, dtype=int)
        self.pred = np.asarray(self.pred, dtype=int)
        if not (len(self.ids) == len(self.true) == len(self.pred)):
            raise ParameterError("ids, true and predicted labels differ in length")
        if len(set(self.ids)) != len(self.ids):
            raise ParameterError("prediction ids are not unique")
        for arr in (self.true, self.pred):
            if arr.size and (arr.min() < 0 or arr.max() >= self.num_classes):
                raise ParameterError(f"labels outside [0, {self.num_classes})")

    @classmethod
    def from_mappings(cls, truth: Mapping[str, int], pred: Mapping[str, int],
                      num_classes: int | None = None) -> "PredictionSet":
        """Join predictions to ground truth by id; every predicted id needs a truth entry."""
        missing = [sid for sid in pred if sid not in truth]
        if missing:
            raise AlignmentError(f"no ground truth for sample {missing[0]!r}")
        ids = list(pred)
        true = [truth[s] for s in ids]
        labels = [pred[s] for s in ids]
        if num_classes is None:
            num_classes = max(true + labels, default=-1) + 1
        return cls(ids, true, labels, num_classes)

    def __len__(self) -> int:
        return len(self.ids)


def accuracy(p: PredictionSet) -> float:
    if len(p) == 0:
        raise ParameterError("accuracy of an empty prediction set")
    return float(np.mean(p.true == p.pred))


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [l, l], rows true, columns predicted

    @property
    def normalized(self) -> np.ndarray:
        """Row-normalised rates; rows of absent classes stay zero."""
        rows = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self, path: str | Path, normalized: bool = False) -> None:
        values = self.normalized if normalized else self.counts
        l = values.shape[0]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["true"] + [f"p{i}" for i in range(l)])
            for i, row in enumerate(values):
                w.writerow([i] + [repr(float(v)) if normalized else int(v) for v in row])


def confusion(p: PredictionSet) -> ConfusionMatrix:
    if len(p) == 0:
        raise ParameterError("confusion of an empty prediction set")
    counts = np.zeros((p.num_classes, p.num_classes), dtype=np.int64)
    np.add.at(counts, (p.true, p.pred), 1)
    return ConfusionMatrix(counts)


@dataclass
class ChangeReport:
    correct: np.ndarray  # per true class: base wrong, fused right
    error: np.ndarray    # per true class: base right, fused wrong

    @property
    def total_correct(self) -> int:
        return int(self.correct.sum())

    @property
    def total_error(self) -> int:
        return int(self.error.sum())

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "correct", "error"])
            for i, (c, e) in enumerate(zip(self.correct, self.error)):
                w.writerow([i, int(c), int(e)])


def change_analysis(base: PredictionSet, fused: PredictionSet) -> ChangeReport:
    """Count, per true class, predictions fixed and broken by moving from ``base`` to ``fused``."""
    if set(base.ids) != set(fused.ids):
        diff = sorted(set(base.ids) ^ set(fused.ids))
        raise AlignmentError(f"sample {diff[0]!r} is not in both prediction sets")
    order = [fused.ids.index(s) for s in base.ids]
    f_true, f_pred = fused.true[order], fused.pred[order]
    if not np.array_equal(base.true, f_true):
        bad = base.ids[int(np.flatnonzero(base.true != f_true)[0])]
        raise AlignmentError(f"ground truth differs for sample {bad!r}")
    l = max(base.num_classes, fused.num_classes)
    b_ok = base.pred == base.true
    f_ok = f_pred == f_true
    correct = np.bincount(base.true[~b_ok & f_ok], minlength=l)
    error = np.bincount(base.true[b_ok & ~f_ok], minlength=l)
    return ChangeReport(correct, error)


def predictions_from_scores(ids: Sequence[str], scores: np.ndarray, truth: Mapping[str, int],
                            num_classes: int) -> PredictionSet:
    from .consensus import predict_label
    pred = {sid: predict_label(row) for sid, row in zip(ids, scores)}
    return PredictionSet.from_mappings(truth, pred, num_classes)
