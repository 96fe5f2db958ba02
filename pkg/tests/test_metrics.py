import numpy as np
import pytest
from hypothesis import given, strategies as st

from crossmap.errors import ValidationError
from crossmap.harness.metrics import SAME_LABEL, SHARED_LABEL, accuracy, average_precision, map_score


def reference_map(rankings, qlab, tlab, shared):
    """Plain-loop scorer used as an independent check."""
    aps = []
    for r, ranking in enumerate(rankings):
        def relevant(t):
            if shared:
                return len(set(qlab[r]) & set(tlab[t])) > 0
            return qlab[r] == tlab[t]
        total = sum(relevant(t) for t in range(len(tlab)))
        if total == 0:
            continue
        hits, s = 0, 0.0
        for pos, t in enumerate(ranking, start=1):
            if relevant(t):
                hits += 1
                s += hits / pos
        aps.append(s / total)
    return sum(aps) / len(aps) if aps else float("nan"), len(rankings) - len(aps)


class TestAveragePrecision:
    def test_perfect(self):
        assert average_precision([1, 1, 1]) == 1.0

    def test_single_at_three(self):
        assert average_precision([0, 0, 1]) == pytest.approx(1 / 3)

    def test_two_relevant(self):
        assert average_precision([1, 0, 1]) == pytest.approx(0.5 * (1 + 2 / 3))

    def test_truncated_list_uses_full_count(self):
        assert average_precision([1, 0], n_relevant=4) == pytest.approx(0.25)

    def test_empty(self):
        with pytest.raises(ValidationError):
            average_precision([])

    def test_nothing_relevant(self):
        with pytest.raises(ValidationError):
            average_precision([0, 0])


class TestMap:
    def test_all_relevant(self):
        ranks = np.array([[0, 1, 2], [2, 1, 0]])
        res = map_score(ranks, [1, 1], [1, 1, 1])
        assert res.map == 1.0 and res.n_skipped == 0

    def test_no_admissible_query(self):
        res = map_score(np.array([[0, 1]]), [3], [1, 2])
        assert np.isnan(res.map)
        assert res.n_skipped == 1 and not res.defined

    def test_mean_of_ap(self, rng):
        ranks = np.array([rng.permutation(8) for _ in range(5)])
        res = map_score(ranks, rng.integers(1, 3, 5), rng.integers(1, 3, 8))
        assert res.map == pytest.approx(np.nanmean(res.ap), abs=1e-12)

    def test_shared_label_rule(self):
        ranks = np.array([[1, 0, 2]])
        res = map_score(ranks, [(1, 2)], [(3,), (2, 4), (1,)], SHARED_LABEL)
        assert res.map == pytest.approx(0.5 * (1 + 2 / 3))

    def test_same_label_needs_single_labels(self):
        with pytest.raises(ValidationError):
            map_score(np.array([[0]]), [(1, 2)], [(1,)], SAME_LABEL)

    def test_unknown_rule(self):
        with pytest.raises(ValidationError):
            map_score(np.array([[0]]), [1], [1], "any")

    def test_ranking_count(self):
        with pytest.raises(ValidationError):
            map_score(np.array([[0]]), [1, 2], [1])

    @given(st.integers(0, 10_000), st.booleans())
    def test_matches_reference(self, seed, shared):
        r = np.random.default_rng(seed)
        nq, nt = int(r.integers(1, 8)), int(r.integers(1, 10))
        k = int(r.integers(1, nt + 1))
        ranks = np.array([r.permutation(nt)[:k] for _ in range(nq)])
        if shared:
            qlab = [tuple(r.choice(5, int(r.integers(1, 3)), replace=False) + 1) for _ in range(nq)]
            tlab = [tuple(r.choice(5, int(r.integers(1, 3)), replace=False) + 1) for _ in range(nt)]
            res = map_score(ranks, qlab, tlab, SHARED_LABEL)
        else:
            qlab, tlab = list(r.integers(1, 4, nq)), list(r.integers(1, 4, nt))
            res = map_score(ranks, qlab, tlab, SAME_LABEL)
        ref, skipped = reference_map(ranks, qlab, tlab, shared)
        assert res.n_skipped == skipped
        if np.isnan(ref):
            assert np.isnan(res.map)
        else:
            assert 0.0 <= res.map <= 1.0
            assert res.map == pytest.approx(ref, abs=1e-12)


class TestAccuracy:
    def test_identical(self):
        assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0

    def test_disjoint(self):
        assert accuracy([1, 1], [2, 2]) == 0.0

    def test_three_of_four(self):
        assert accuracy([1, 2, 2, 1], [1, 2, 2, 2]) == 0.75

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            accuracy([1], [1, 2])
