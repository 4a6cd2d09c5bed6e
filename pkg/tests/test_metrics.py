import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphfm.metrics import ap, ari, auc, average_precision, kmeans, nmi

from oracles import ap_threshold_enumeration, ari_combinatorial, auc_all_pairs, nmi_contingency

binary_case = st.integers(2, 40).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 6).map(lambda v: v / 4), min_size=n, max_size=n),
    st.lists(st.booleans(), min_size=n, max_size=n)))
clusterings = st.integers(1, 40).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 4), min_size=n, max_size=n), st.lists(st.integers(0, 4), min_size=n, max_size=n)))


class TestAuc:
    def test_examples(self):
        assert auc([0.9, 0.8, 0.7, 0.1], [1, 1, 0, 0]) == 1.0
        assert auc([0.8, 0.4, 0.6, 0.2], [1, 1, 0, 0]) == 0.75
        assert auc([0.3] * 6, [1, 0, 1, 0, 1, 0]) == 0.5

    def test_single_class(self):
        with pytest.raises(ValueError):
            auc([0.1, 0.2], [1, 1])

    @given(binary_case)
    @settings(max_examples=200, deadline=None)
    def test_matches_all_pairs_oracle(self, case):
        s, y = case
        if all(y) or not any(y):
            return
        assert abs(auc(s, y) - auc_all_pairs(s, y)) <= 1e-12


class TestAp:
    def test_examples(self):
        assert average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx(5 / 6, abs=1e-15)
        assert ap([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_no_positive(self):
        with pytest.raises(ValueError):
            ap([0.1, 0.2], [0, 0])

    @given(binary_case)
    @settings(max_examples=200, deadline=None)
    def test_matches_threshold_oracle(self, case):
        s, y = case
        if not any(y):
            return
        assert abs(ap(s, y) - ap_threshold_enumeration(s, y)) <= 1e-12


class TestClusteringScores:
    def test_examples(self):
        assert nmi([0, 0, 1, 1], [0, 0, 1, 1]) == 1.0
        assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(0.0, abs=1e-15)
        assert ari([0, 0, 1, 1], [0, 0, 1, 1]) == 1.0
        assert ari([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(-0.5, abs=1e-15)

    def test_degenerate_entropies(self):
        assert nmi([0, 0, 0], [1, 1, 1]) == 1.0
        assert nmi([0, 0, 0], [0, 1, 2]) == 0.0
        assert nmi([5], [7]) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            nmi([0, 1], [0])
        with pytest.raises(ValueError):
            ari([0, 1], [0, 1, 1])

    @given(clusterings)
    @settings(max_examples=200, deadline=None)
    def test_oracles_symmetry_bounds(self, case):
        u, v = case
        assert abs(nmi(u, v) - nmi_contingency(u, v)) <= 1e-12
        assert abs(nmi(u, v) - nmi(v, u)) <= 1e-12
        assert -1e-12 <= nmi(u, v) <= 1 + 1e-12
        if len(u) >= 2:
            assert abs(ari(u, v) - ari_combinatorial(u, v)) <= 1e-12
            assert ari(u, v) == pytest.approx(ari(v, u), abs=1e-12)
            assert -1 <= ari(u, v) <= 1
            assert ari(u, u) == 1.0

    @given(clusterings, st.permutations(range(5)))
    @settings(max_examples=100, deadline=None)
    def test_relabel_invariance(self, case, perm):
        u, v = case
        w = [perm[x] for x in v]
        assert nmi(u, w) == pytest.approx(nmi(u, v), abs=1e-12)
        if len(u) >= 2:
            assert ari(u, w) == pytest.approx(ari(u, v), abs=1e-12)


class TestKmeans:
    def test_two_blobs(self, rng):
        x = np.vstack([rng.normal(0, 0.1, size=(20, 2)), rng.normal(5, 0.1, size=(20, 2))])
        lab = kmeans(x, 2, seed=0).labels
        assert len(set(lab[:20])) == 1 and len(set(lab[20:])) == 1 and lab[0] != lab[20]

    def test_single_cluster(self, rng):
        res = kmeans(rng.normal(size=(15, 3)), 1)
        assert set(res.labels.tolist()) == {0}

    def test_duplicates_reach_zero_inertia(self, rng):
        pts = rng.normal(size=(5, 2))
        res = kmeans(np.repeat(pts, 2, axis=0), 5, restarts=10, seed=1)
        assert res.inertia == pytest.approx(0.0, abs=1e-18)

    def test_invalid_k(self, rng):
        x = rng.normal(size=(4, 2))
        with pytest.raises(ValueError):
            kmeans(x, 0)
        with pytest.raises(ValueError):
            kmeans(x, 5)

    def test_deterministic(self, rng):
        x = rng.normal(size=(60, 3))
        a, b = kmeans(x, 4, seed=7), kmeans(x, 4, seed=7)
        np.testing.assert_array_equal(a.labels, b.labels)
        assert a.inertia == b.inertia

    def test_more_restarts_never_worse(self, rng):
        x = rng.normal(size=(80, 2))
        assert kmeans(x, 6, restarts=10, seed=2).inertia <= kmeans(x, 6, restarts=1, seed=2).inertia + 1e-12
