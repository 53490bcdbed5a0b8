import itertools
import math

import numpy as np
import pytest
import scipy.stats

from mtlc.errors import DegenerateInputError, UndefinedMetricError
from mtlc.metrics import CorrResult, ScoredLabels, aupr, auroc, spearman, task_metrics


def brute_force_auroc(scores, labels):
    """Pairwise enumeration: positives beating negatives, ties 0.5."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                wins += 1.0
            elif sp == sn:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def brute_force_ap(scores, labels):
    """Average precision with ties broken by original index."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits = 0
    total = 0.0
    for rank, i in enumerate(order, start=1):
        if labels[i] == 1:
            hits += 1
            total += hits / rank
    return total / sum(labels)


def simple_average_ranks(values):
    """Average ranks computed by direct tie-group enumeration."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def brute_force_spearman_p(x, y):
    """Full permutation enumeration of the two-sided tail."""
    rx = simple_average_ranks(x)
    ry = simple_average_ranks(y)
    r_obs = abs(np.corrcoef(rx, ry)[0, 1])
    count = 0
    total = 0
    for perm in itertools.permutations(ry):
        r = abs(np.corrcoef(rx, perm)[0, 1])
        if r >= r_obs - 1e-12:
            count += 1
        total += 1
    return count / total


class TestAuroc:
    def test_perfect_ranking(self):
        assert auroc(ScoredLabels(np.array([0.9, 0.8, 0.3]), np.array([1, 1, 0]))) == 1.0

    def test_inverted_ranking(self):
        assert auroc(ScoredLabels(np.array([0.2, 0.8]), np.array([1, 0]))) == 0.0

    def test_tie_credit(self):
        got = auroc(ScoredLabels(np.array([0.5, 0.5, 0.1]), np.array([1, 0, 0])))
        assert got == 0.75

    def test_single_class_undefined(self):
        with pytest.raises(UndefinedMetricError):
            auroc(ScoredLabels(np.array([0.5, 0.2]), np.array([1, 1])))

    def test_matches_pair_enumeration(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            n = rng.integers(2, 13)
            scores = np.round(rng.random(n), 1)  # coarse grid forces ties
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                continue
            got = auroc(ScoredLabels(scores, labels))
            want = brute_force_auroc(scores.tolist(), labels.tolist())
            assert got == pytest.approx(want, abs=1e-12)

    def test_complement_under_score_negation(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n = int(rng.integers(3, 20))
            scores = rng.random(n)  # continuous, tie-free
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                continue
            a = auroc(ScoredLabels(scores, labels))
            b = auroc(ScoredLabels(-scores, labels))
            assert a + b == pytest.approx(1.0, abs=1e-12)

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            scores = rng.random(12)
            labels = rng.integers(0, 2, 12)
            if labels.min() == labels.max():
                continue
            a = auroc(ScoredLabels(scores, labels))
            b = auroc(ScoredLabels(np.exp(3 * scores) + 1, labels))
            assert a == pytest.approx(b, abs=1e-12)

    def test_present_mask_restriction(self):
        data = ScoredLabels(
            np.array([0.9, 0.1, 0.5, 0.7]),
            np.array([1, 1, 0, 0]),
            present_mask=np.array([True, False, True, False]),
        )
        assert auroc(data) == 1.0


class TestAupr:
    def test_perfect(self):
        assert aupr(ScoredLabels(np.array([0.9, 0.8, 0.3]), np.array([1, 1, 0]))) == 1.0

    def test_single_positive_rank_two(self):
        assert aupr(ScoredLabels(np.array([0.9, 0.1]), np.array([0, 1]))) == 0.5

    def test_all_positives(self):
        assert aupr(ScoredLabels(np.array([0.2, 0.6]), np.array([1, 1]))) == 1.0

    def test_no_positive_undefined(self):
        with pytest.raises(UndefinedMetricError):
            aupr(ScoredLabels(np.array([0.2, 0.6]), np.array([0, 0])))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            n = rng.integers(1, 13)
            scores = np.round(rng.random(n), 1)
            labels = rng.integers(0, 2, n)
            if labels.sum() == 0:
                continue
            got = aupr(ScoredLabels(scores, labels))
            want = brute_force_ap(scores.tolist(), labels.tolist())
            assert got == pytest.approx(want, abs=1e-12)


class TestSpearman:
    def test_monotone_increasing(self):
        res = spearman([1, 2, 3], [1, 4, 9])
        assert res.r == 1.0

    def test_monotone_decreasing(self):
        res = spearman([1, 2, 3], [9, 4, 1])
        assert res.r == -1.0

    def test_r_matches_scipy(self):
        rng = np.random.default_rng(13)
        for n in (5, 8, 12, 50):
            x = rng.random(n)
            y = rng.random(n)
            res = spearman(x, y)
            want = scipy.stats.spearmanr(x, y)
            assert res.r == pytest.approx(float(want.statistic), abs=1e-12)

    def test_exact_permutation_p(self):
        rng = np.random.default_rng(17)
        for trial in range(3):
            x = rng.random(8)
            y = rng.random(8)
            res = spearman(x, y)
            want = brute_force_spearman_p(x.tolist(), y.tolist())
            assert res.p == pytest.approx(want, abs=1e-12)

    def test_exact_permutation_p_with_ties(self):
        x = [1.0, 1.0, 2.0, 3.0, 4.0, 4.0, 5.0]
        y = [2.0, 1.0, 1.0, 3.0, 5.0, 4.0, 4.0]
        res = spearman(x, y)
        want = brute_force_spearman_p(x, y)
        assert res.p == pytest.approx(want, abs=1e-12)

    def test_t_approximation_for_large_n(self):
        rng = np.random.default_rng(19)
        x = rng.random(40)
        y = x + 0.3 * rng.random(40)
        res = spearman(x, y)
        want = scipy.stats.spearmanr(x, y)
        assert res.r == pytest.approx(float(want.statistic), abs=1e-12)
        assert res.p == pytest.approx(float(want.pvalue), rel=1e-9)

    def test_rank_invariance_under_monotone_maps(self):
        rng = np.random.default_rng(23)
        x = rng.random(15)
        y = rng.random(15)
        a = spearman(x, y)
        b = spearman(np.exp(x), y**3 + 2 * y)
        assert a.r == pytest.approx(b.r, abs=1e-12)
        assert a.p == pytest.approx(b.p, abs=1e-12)

    def test_degenerate_input(self):
        with pytest.raises(DegenerateInputError):
            spearman([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_result_type(self):
        res = spearman([3, 1, 2, 5], [2, 1, 3, 4])
        assert isinstance(res, CorrResult)
        assert res.n == 4
        assert 0.0 <= res.p <= 1.0


class TestTaskMetrics:
    def test_undefined_task_marked_not_zeroed(self):
        labels = np.array([[1, 1], [0, 1], [1, 0]])
        present = np.array([[True, False], [True, False], [True, False]])
        preds = np.array([[0.9, 0.5], [0.1, 0.5], [0.8, 0.5]])
        out = task_metrics(preds, labels, present)
        assert out[0].auroc == 1.0
        assert out[1].auroc is None
        assert out[1].aupr is None
        assert out[1].n_pos == 0 and out[1].n_neg == 0

    def test_single_task_consistency(self):
        rng = np.random.default_rng(29)
        labels = rng.integers(0, 2, (30, 1))
        present = np.ones((30, 1), dtype=bool)
        preds = rng.random((30, 1))
        out = task_metrics(preds, labels, present)
        direct = ScoredLabels(preds[:, 0], labels[:, 0])
        assert out[0].auroc == auroc(direct)
        assert out[0].aupr == aupr(direct)

    def test_disjoint_presence_slicing(self):
        # two tasks labeled on disjoint row sets; oracle slices manually
        rng = np.random.default_rng(31)
        n = 40
        labels = rng.integers(0, 2, (n, 2))
        present = np.zeros((n, 2), dtype=bool)
        present[: n // 2, 0] = True
        present[n // 2 :, 1] = True
        preds = rng.random((n, 2))
        rows = np.arange(n)
        out = task_metrics(preds, labels, present, rows=rows)
        for t, sl in ((0, slice(0, n // 2)), (1, slice(n // 2, n))):
            want = brute_force_auroc(preds[sl, t].tolist(), labels[sl, t].tolist())
            assert out[t].auroc == pytest.approx(want, abs=1e-12)

    def test_row_subset(self):
        labels = np.array([[1], [0], [1], [0]])
        present = np.ones((4, 1), dtype=bool)
        rows = np.array([0, 1])
        preds = np.array([[0.9], [0.2]])
        out = task_metrics(preds, labels, present, rows=rows)
        assert out[0].auroc == 1.0
        assert out[0].n_pos == 1 and out[0].n_neg == 1
