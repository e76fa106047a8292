"""Evaluation metrics for the scoring model and the frame-usability gate.

Classification quality over the four MES classes is measured with a
confusion matrix, accuracy and Cohen's kappa. Usable/non-usable
discrimination uses the per-frame maximum raw logit as the score;
AUROC is computed in the Mann-Whitney formulation (ties count half),
and the ROC sweep doubles as an internal cross-check since its
trapezoidal area must equal the AUROC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class EmptyMatrix(ValueError):
    """Metric requested on a confusion matrix with no observations."""


class SingleClassInput(ValueError):
    """AUROC needs at least one usable and one non-usable frame."""


@dataclass(frozen=True)
class UsabilityLabelTrack:
    """Per-frame usable/non-usable labels for one video."""

    labels: tuple[bool, ...]
    frame_count: int

    def __post_init__(self) -> None:
        if len(self.labels) != self.frame_count:
            raise ValueError(
                f"{len(self.labels)} labels for {self.frame_count} frames"
            )


@dataclass(frozen=True)
class ConfusionMatrix:
    """4x4 counts; rows are the true class, columns the predicted class."""

    counts: tuple[tuple[int, int, int, int], ...]

    def __post_init__(self) -> None:
        if len(self.counts) != 4 or any(len(row) != 4 for row in self.counts):
            raise ValueError("confusion matrix must be 4x4")
        if any(c < 0 for row in self.counts for c in row):
            raise ValueError("confusion matrix counts must be non-negative")

    @classmethod
    def from_pairs(cls, true: Sequence[int], pred: Sequence[int]) -> "ConfusionMatrix":
        counts = [[0] * 4 for _ in range(4)]
        for t, p in zip(true, pred, strict=True):
            counts[t][p] += 1
        return cls(tuple(tuple(row) for row in counts))

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.counts)


def accuracy(cm: ConfusionMatrix) -> float:
    """Fraction of observations on the diagonal."""
    total = cm.total
    if total < 1:
        raise EmptyMatrix("accuracy needs at least one observation")
    trace = sum(cm.counts[i][i] for i in range(4))
    return trace / total


def cohen_kappa(cm: ConfusionMatrix) -> float:
    """Chance-corrected agreement (p_o - p_e) / (1 - p_e).

    Carried out in exact integer arithmetic with a single final
    division, so rational results like 0.6 come out exact.
    """
    total = cm.total
    if total < 1:
        raise EmptyMatrix("kappa needs at least one observation")
    trace = sum(cm.counts[i][i] for i in range(4))
    row = [sum(cm.counts[i][j] for j in range(4)) for i in range(4)]
    col = [sum(cm.counts[i][j] for i in range(4)) for j in range(4)]
    chance = sum(row[c] * col[c] for c in range(4))
    denominator = total * total - chance
    if denominator == 0:
        # p_e == 1: all mass in a single diagonal cell, perfect agreement.
        return 1.0
    return (total * trace - chance) / denominator


def _check_binary(labels: Sequence[bool]) -> tuple[int, int]:
    pos = sum(1 for x in labels if x)
    neg = len(labels) - pos
    if pos == 0 or neg == 0:
        raise SingleClassInput("need both usable and non-usable frames")
    return pos, neg


def auroc(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """P(random usable frame outscores a random non-usable one), ties half.

    Computed from midranks, which is exactly the Mann-Whitney U
    statistic normalized by the number of pairs.
    """
    if len(scores) != len(labels):
        raise ValueError("scores and labels must have the same length")
    pos, neg = _check_binary(labels)
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s), dtype=np.float64)
    sorted_scores = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        # 1-based midrank for the tie group [i, j]
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    u = float(ranks[y].sum()) - pos * (pos + 1) / 2.0
    return u / (pos * neg)


def macro_auroc(
    per_video: Sequence[tuple[Sequence[float], Sequence[bool]]],
) -> tuple[float, list[float]]:
    """Unweighted mean of per-video AUROCs, plus the per-video values."""
    if not per_video:
        raise ValueError("macro_auroc needs at least one video")
    values = []
    for vid, (scores, labels) in enumerate(per_video):
        try:
            values.append(auroc(scores, labels))
        except SingleClassInput as exc:
            raise SingleClassInput(f"video {vid}: {exc}") from None
    return math.fsum(values) / len(values), values


def roc_sweep(
    scores: Sequence[float], labels: Sequence[bool]
) -> list[tuple[float, float, float]]:
    """(threshold, TPR, FPR) points, one per distinct score.

    A frame is predicted usable when its score is >= the threshold.
    The list starts with the (inf, 0, 0) anchor and thresholds descend,
    so TPR and FPR are non-decreasing along the list.
    """
    if len(scores) != len(labels):
        raise ValueError("scores and labels must have the same length")
    pos, neg = _check_binary(labels)
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    order = np.argsort(-s, kind="mergesort")
    points: list[tuple[float, float, float]] = [(math.inf, 0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < len(s):
        tau = s[order[i]]
        while i < len(s) and s[order[i]] == tau:
            if y[order[i]]:
                tp += 1
            else:
                fp += 1
            i += 1
        points.append((float(tau), tp / pos, fp / neg))
    return points


def roc_area(points: Sequence[tuple[float, float, float]]) -> float:
    """Trapezoidal area under the ROC sweep; equals auroc."""
    area = 0.0
    for (_, tpr0, fpr0), (_, tpr1, fpr1) in zip(points, points[1:]):
        area += (fpr1 - fpr0) * (tpr0 + tpr1) / 2.0
    return area
