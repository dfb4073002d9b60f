"""Metric correctness against brute-force oracles and paper-anchored values."""

import math

import numpy as np
import pytest

from conftest import (
    cosine_distance_oracle,
    dissimilarity_oracle,
    homogeneity_oracle,
    nmi_oracle,
)
from medclust.errors import (
    DegenerateLabelsError,
    EmptyInputError,
    ZeroTargetEntropyError,
    ZeroVectorError,
)
from medclust.metrics import (
    cluster_dissimilarity,
    composition_report,
    cosine_distance,
    d_score,
    entropy,
    homogeneity,
    nmi,
    s_score,
)


class TestEntropy:
    def test_constant(self):
        assert entropy(["A", "A", "A"]) == 0.0

    def test_uniform_two_class(self):
        assert abs(entropy(["A", "B"]) - math.log(2)) < 1e-12

    def test_one_third_two_thirds(self):
        expect = -(1 / 3 * math.log(1 / 3) + 2 / 3 * math.log(2 / 3))
        assert abs(entropy(["A", "A", "B", "B", "B", "B"]) - expect) < 1e-12

    def test_empty_raises(self):
        with pytest.raises(EmptyInputError):
            entropy([])


class TestNmiHomogeneity:
    def test_perfect_match(self):
        assert nmi(["A", "A", "B", "B"], [0, 0, 1, 1]) == 1.0
        assert homogeneity(["A", "A", "B", "B"], [0, 0, 1, 1]) == 1.0

    def test_single_cluster(self):
        assert nmi(["A", "A", "B", "B"], [0, 0, 0, 0]) == 0.0
        assert homogeneity(["A", "A", "B", "B"], [0, 0, 0, 0]) == 0.0

    def test_known_partial_overlap(self):
        y, y_hat = ["A", "A", "B", "B"], [0, 1, 1, 1]
        assert abs(nmi(y, y_hat) - nmi_oracle(y, y_hat)) < 1e-12
        assert abs(nmi(y, y_hat) - 0.3437) < 5e-4
        assert abs(homogeneity(y, y_hat) - homogeneity_oracle(y, y_hat)) < 1e-12
        assert abs(homogeneity(y, y_hat) - 0.3113) < 5e-4

    def test_degenerate_both_constant(self):
        with pytest.raises(DegenerateLabelsError):
            nmi(["A", "A"], [0, 0])

    def test_zero_target_entropy(self):
        with pytest.raises(ZeroTargetEntropyError):
            homogeneity(["A", "A"], [0, 1])

    def test_relabeling_invariance(self, rng):
        y = rng.integers(0, 4, size=100)
        y_hat = rng.integers(0, 5, size=100)
        permuted = (y_hat + 3) % 5
        assert abs(nmi(y, y_hat) - nmi(y, permuted)) < 1e-12
        assert abs(homogeneity(y, y_hat) - homogeneity(y, permuted)) < 1e-12

    def test_nmi_symmetric_homogeneity_not(self):
        y, y_hat = ["A", "A", "B", "B"], [0, 1, 1, 1]
        assert abs(nmi(y, y_hat) - nmi(y_hat, y)) < 1e-12
        assert abs(homogeneity(y, y_hat) - homogeneity(y_hat, y)) > 1e-3

    def test_bounds_on_random_labelings(self, rng):
        for _ in range(300):
            n = int(rng.integers(2, 60))
            y = rng.integers(0, max(2, int(rng.integers(2, 6))), size=n)
            y_hat = rng.integers(0, max(2, int(rng.integers(2, 8))), size=n)
            if len(set(y)) == 1 and len(set(y_hat)) == 1:
                continue
            if len(set(y)) > 1:
                assert 0.0 <= homogeneity(y, y_hat) <= 1.0
            assert 0.0 <= nmi(y, y_hat) <= 1.0

    def test_base_invariance(self, rng):
        # recomputing with base-2 logs changes neither ratio metric
        y = rng.integers(0, 3, size=60)
        y_hat = rng.integers(0, 4, size=60)

        def entropy2(labels):
            from collections import Counter
            n = len(labels)
            return -math.fsum((c / n) * math.log2(c / n)
                              for c in Counter(list(labels)).values())

        def cond2(y, y_hat):
            groups = {}
            for t, c in zip(y, y_hat):
                groups.setdefault(c, []).append(t)
            return math.fsum(len(g) / len(y) * entropy2(g) for g in groups.values())

        nmi2 = 2 * (entropy2(y) - cond2(y, y_hat)) / (entropy2(y) + entropy2(y_hat))
        hs2 = 1 - cond2(y, y_hat) / entropy2(y)
        assert abs(nmi(y, y_hat) - nmi2) < 1e-10
        assert abs(homogeneity(y, y_hat) - hs2) < 1e-10


class TestSScore:
    def test_all_ones(self):
        assert s_score(1, 1, 1, 1) == 1.0

    def test_zero_input(self):
        assert s_score(0.0, 0.5, 0.5, 0.5) == 0.0

    def test_paper_cae_row(self):
        assert abs(s_score(0.538, 0.744, 0.430, 0.459) - 0.519) < 1e-3


class TestCosineDistance:
    def test_identical(self):
        assert cosine_distance([1, 2, 3], [1, 2, 3]) < 1e-15

    def test_orthogonal(self):
        assert abs(cosine_distance([1, 0], [0, 1]) - 1.0) < 1e-15

    def test_45_degrees(self):
        assert abs(cosine_distance([1, 0], [1, 1]) - (1 - 1 / math.sqrt(2))) < 1e-12

    def test_zero_vector(self):
        with pytest.raises(ZeroVectorError):
            cosine_distance([0, 0], [1, 0])


class TestClusterDissimilarity:
    def test_pair_count_three_points(self, rng):
        X = rng.normal(size=(3, 4))
        res = cluster_dissimilarity(X, [0, 0, 0], 1)
        dists = [cosine_distance_oracle(X[i], X[j])
                 for i in range(3) for j in range(i + 1, 3)]
        assert len(dists) == 3
        assert abs(res.per_cluster[0] - math.fsum(dists) / 3) < 1e-12

    def test_identical_members_zero(self):
        X = np.ones((4, 3))
        res = cluster_dissimilarity(X, [0, 0, 0, 0], 1)
        assert res.mean < 1e-12

    def test_matches_bruteforce_two_clusters(self, rng):
        X = rng.normal(size=(20, 5))
        labels = rng.integers(0, 2, size=20)
        res = cluster_dissimilarity(X, labels, 2)
        _, mean, std = dissimilarity_oracle(X, labels, 2)
        assert abs(res.mean - mean) < 1e-12
        assert abs(res.std - std) < 1e-12

    def test_singleton_flagged(self, rng):
        X = rng.normal(size=(3, 4))
        res = cluster_dissimilarity(X, [0, 0, 1], 2)
        assert res.undersized_clusters == [1]
        assert res.per_cluster[1] == 0.0

    def test_zero_member_raises(self):
        X = np.array([[1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(ZeroVectorError):
            cluster_dissimilarity(X, [0, 0], 1)


class TestDScore:
    def test_equal_inputs(self):
        val, flag = d_score(0.25, 0.25)
        assert abs(val - 0.25) < 1e-15 and not flag

    def test_paper_ae_row(self):
        val, _ = d_score(3.051e-2, 3.553e-2)
        assert abs(val - 3.283e-2) < 1e-5

    def test_zero_flagged(self):
        val, flag = d_score(0.0, 0.5)
        assert val == 0.0 and flag


class TestCompositionReport:
    def test_pure_cluster(self):
        rep = composition_report([0, 0], {"modality": ["CT", "CT"]}, 1)
        assert rep[0]["modality"] == {"CT": 1.0}

    def test_sizes_partition(self, rng):
        labels = rng.integers(0, 4, size=50)
        rep = composition_report(labels, {}, 4)
        assert sum(e["size"] for e in rep) == 50

    def test_even_mixture(self):
        rep = composition_report([0, 0, 0, 0], {"m": ["A", "A", "B", "B"]}, 1)
        assert rep[0]["m"] == {"A": 0.5, "B": 0.5}
