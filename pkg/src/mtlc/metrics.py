"""Ranking performance and correlation measures.

AUROC is the Mann-Whitney statistic (ties credited 0.5), AUPR is
average precision with a deterministic tie order, and Spearman
correlation uses average ranks with an exact permutation p-value at
small n. All functions are pure; metrics on labels that do not satisfy
their preconditions raise UndefinedMetricError and callers record the
point as missing rather than zero.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import stdtr
from scipy.stats import rankdata

from .errors import DegenerateInputError, UndefinedMetricError

#: Largest n for which the Spearman p-value is computed by exact
#: permutation enumeration; beyond it the t-approximation is used.
EXACT_PERMUTATION_MAX_N = 9

#: Reported p-values are floored here so downstream CSVs never carry 0.
P_VALUE_FLOOR = 1e-300


@dataclass(frozen=True)
class ScoredLabels:
    """Scores and binary outcomes, with a presence mask for sparse labels."""

    scores: np.ndarray
    labels: np.ndarray
    present_mask: np.ndarray | None = None

    def present(self) -> tuple[np.ndarray, np.ndarray]:
        s = np.asarray(self.scores, dtype=float)
        y = np.asarray(self.labels)
        if s.shape != y.shape:
            raise ValueError("scores and labels must have equal length")
        if self.present_mask is None:
            return s, y
        m = np.asarray(self.present_mask, dtype=bool)
        if m.shape != s.shape:
            raise ValueError("present_mask must match scores in length")
        return s[m], y[m]


@dataclass(frozen=True)
class CorrResult:
    r: float
    p: float
    n: int


@dataclass(frozen=True)
class TaskMetrics:
    """Per-task evaluation record; None marks an undefined metric."""

    auroc: float | None
    aupr: float | None
    n_pos: int
    n_neg: int


def auroc(data: ScoredLabels) -> float:
    """Probability a random positive outscores a random negative.

    Computed from average ranks, which credits tied pairs 0.5 exactly
    as pairwise enumeration would.
    """
    scores, labels = data.present()
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = scores.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs at least one positive and one negative")
    ranks = rankdata(scores, method="average")
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def aupr(data: ScoredLabels) -> float:
    """Average precision over positives in descending-score order.

    Ties are broken by original index (stable sort on (-score, index)),
    so replays are bit-exact.
    """
    scores, labels = data.present()
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUPR needs at least one positive")
    order = np.lexsort((np.arange(scores.size), -scores))
    sorted_labels = (labels[order] == 1).astype(float)
    tp = np.cumsum(sorted_labels)
    precision = tp / np.arange(1, scores.size + 1)
    return float(precision[sorted_labels == 1].sum() / n_pos)


def _exact_permutation_p(rx: np.ndarray, ry: np.ndarray) -> float:
    """Two-sided permutation p-value via integer covariance comparison.

    Average ranks are multiples of 0.5, so doubling them makes the rank
    covariance numerator ``n*sum(x*y) - sum(x)*sum(y)`` an exact
    integer; comparing |numerator| values across permutations avoids
    any floating-point ties. Rank variances are permutation-invariant,
    which makes this equivalent to comparing |r| values.
    """
    n = rx.size
    ix = np.round(2 * rx).astype(np.int64)
    iy = np.round(2 * ry).astype(np.int64)
    s_obs = abs(n * int(ix @ iy) - int(ix.sum()) * int(iy.sum()))
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    s_all = n * (iy[perms] @ ix) - int(ix.sum()) * int(iy.sum())
    count = int((np.abs(s_all) >= s_obs).sum())
    return count / math.factorial(n)


def spearman(x, y) -> CorrResult:
    """Spearman rank correlation with a two-sided p-value.

    Ranks use averages for ties. For n <= 9 the p-value is the exact
    permutation tail; for larger n it is the t approximation
    ``t = r * sqrt((n-2)/(1-r^2))`` with n-2 degrees of freedom.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d arrays of equal length")
    n = x.size
    if n < 3:
        raise ValueError("spearman needs at least 3 pairs")
    rx = rankdata(x, method="average")
    ry = rankdata(y, method="average")
    if np.ptp(rx) == 0 or np.ptp(ry) == 0:
        raise DegenerateInputError("zero rank variance; correlation undefined")
    rx_c = rx - rx.mean()
    ry_c = ry - ry.mean()
    r = float((rx_c @ ry_c) / math.sqrt((rx_c @ rx_c) * (ry_c @ ry_c)))
    r = max(-1.0, min(1.0, r))
    if n <= EXACT_PERMUTATION_MAX_N:
        p = _exact_permutation_p(rx, ry)
    elif abs(r) == 1.0:
        p = P_VALUE_FLOOR
    else:
        t = r * math.sqrt((n - 2) / (1.0 - r * r))
        p = max(2.0 * float(stdtr(n - 2, -abs(t))), P_VALUE_FLOOR)
    return CorrResult(r=r, p=min(p, 1.0), n=n)


def task_metrics(
    predictions: np.ndarray,
    labels: np.ndarray,
    present: np.ndarray,
    tasks=None,
    rows=None,
) -> dict[int, TaskMetrics]:
    """AUROC/AUPR per task over the rows where that task's label exists.

    ``predictions`` is aligned with ``rows`` (or with the full label
    matrix when rows is None). Tasks whose labels cannot support a
    metric get None for it, never zero.
    """
    labels = np.asarray(labels)
    present = np.asarray(present, dtype=bool)
    predictions = np.asarray(predictions, dtype=float)
    if rows is None:
        rows = np.arange(labels.shape[0])
    else:
        rows = np.asarray(rows, dtype=np.intp)
    if predictions.shape[0] != rows.size:
        raise ValueError("predictions rows must align with the row subset")
    if tasks is None:
        tasks = range(labels.shape[1])
    sub_labels = labels[rows]
    sub_present = present[rows]
    out: dict[int, TaskMetrics] = {}
    for t in tasks:
        m = sub_present[:, t]
        y = sub_labels[m, t]
        s = predictions[m, t]
        n_pos = int((y == 1).sum())
        n_neg = int(y.size - n_pos)
        data = ScoredLabels(scores=s, labels=y)
        try:
            roc = auroc(data)
        except UndefinedMetricError:
            roc = None
        try:
            ap = aupr(data)
        except UndefinedMetricError:
            ap = None
        out[int(t)] = TaskMetrics(auroc=roc, aupr=ap, n_pos=n_pos, n_neg=n_neg)
    return out
