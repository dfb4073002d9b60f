"""k-means / k-medoids behaviour, brute-force PAM optimum, Kneedle elbow."""

import itertools
import math

import numpy as np
import pytest

from conftest import gaussian_blobs
from medclust.cluster import (
    COSINE,
    EUCLIDEAN,
    ClusterModel,
    assign,
    elbow,
    kmeans_fit,
    kmedoids_fit,
    pairwise_distances,
)
from medclust.errors import (
    DimensionMismatchError,
    KappaExceedsNError,
    ZeroVectorWithCosineError,
)


def exhaustive_pam_cost(X, kappa, metric):
    """Optimal k-medoids cost by enumerating every medoid subset."""
    D = pairwise_distances(np.asarray(X, dtype=np.float64), metric)
    best = math.inf
    for subset in itertools.combinations(range(len(X)), kappa):
        cost = D[:, subset].min(axis=1).sum()
        best = min(best, cost)
    return best


class TestKmeans:
    def test_two_separable_blobs(self):
        X = np.array([[0, 0], [0, 1], [10, 0], [10, 1]], dtype=float)
        model = kmeans_fit(X, 2, seed=0)
        labels, _ = assign(model, X)
        assert labels[0] == labels[1] and labels[2] == labels[3]
        assert labels[0] != labels[2]
        centers = sorted(model.centers.tolist())
        assert centers == [[0.0, 0.5], [10.0, 0.5]]

    def test_kappa_one_center_is_mean(self, rng):
        X = rng.normal(size=(30, 3))
        model = kmeans_fit(X, 1, seed=0)
        assert np.abs(model.centers[0] - X.mean(axis=0)).max() < 1e-12

    def test_kappa_equals_n_zero_inertia(self, rng):
        X = rng.normal(size=(6, 2))
        model = kmeans_fit(X, 6, seed=0)
        assert model.inertia < 1e-18

    def test_kappa_exceeds_n(self, rng):
        with pytest.raises(KappaExceedsNError):
            kmeans_fit(rng.normal(size=(3, 2)), 4)

    def test_deterministic_given_seed(self, rng):
        X = rng.normal(size=(50, 4))
        a = kmeans_fit(X, 4, seed=9)
        b = kmeans_fit(X, 4, seed=9)
        assert np.array_equal(a.centers, b.centers)
        assert a.inertia == b.inertia


class TestKmedoids:
    def test_identical_points_single_medoid(self):
        X = np.ones((3, 2))
        model = kmedoids_fit(X, 1)
        assert model.inertia == 0.0

    def test_euclidean_pair_example(self):
        X = np.array([[1, 0], [0, 1], [10, 10]], dtype=float)
        model = kmedoids_fit(X, 2, metric=EUCLIDEAN)
        assert abs(model.inertia - math.sqrt(2)) < 1e-12
        labels, _ = assign(model, X)
        assert labels[2] != labels[0] or labels[2] != labels[1]

    def test_cosine_collinear_rays(self):
        X = np.array([[1, 0], [2, 0], [0, 3]], dtype=float)
        model = kmedoids_fit(X, 2, metric=COSINE)
        labels, _ = assign(model, X)
        assert labels[0] == labels[1] != labels[2]
        assert model.inertia < 1e-12

    def test_cosine_zero_vector_rejected(self):
        X = np.array([[1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(ZeroVectorWithCosineError):
            kmedoids_fit(X, 1, metric=COSINE)

    @pytest.mark.parametrize("metric", [EUCLIDEAN, COSINE])
    @pytest.mark.parametrize("kappa", [1, 2, 3])
    def test_matches_exhaustive_optimum_small(self, rng, metric, kappa):
        for trial in range(5):
            X = rng.normal(size=(7, 3)) + 0.5
            model = kmedoids_fit(X, kappa, metric=metric)
            best = exhaustive_pam_cost(X, kappa, metric)
            assert model.inertia >= best - 1e-9
            assert model.inertia <= best + 1e-9, (
                f"BUILD+SWAP cost {model.inertia} vs optimum {best}")


class TestAssign:
    def test_training_point_fixpoint(self, rng):
        X, _ = gaussian_blobs(20, rng.normal(size=(3, 4)) * 10, 0.3, rng)
        model = kmeans_fit(X, 3, seed=1)
        labels1, _ = assign(model, X)
        labels2, _ = assign(model, X)
        assert (labels1 == labels2).all()

    def test_tie_breaks_to_lowest_index(self):
        model = ClusterModel("kmeans", EUCLIDEAN, 2,
                             np.array([[1.0, 0.0], [-1.0, 0.0]]), 0, 0.0)
        labels, dists = assign(model, np.array([[0.0, 0.0]]))
        assert abs(dists[0, 0] - dists[0, 1]) < 1e-15
        assert labels[0] == 0

    def test_distance_matrix_contains_zero_at_center(self):
        centers = np.array([[2.0, 2.0], [5.0, 5.0]])
        model = ClusterModel("kmeans", EUCLIDEAN, 2, centers, 0, 0.0)
        _, dists = assign(model, centers[:1])
        assert dists[0, 0] == 0.0

    def test_dimension_mismatch(self, rng):
        model = kmeans_fit(rng.normal(size=(10, 3)), 2, seed=0)
        with pytest.raises(DimensionMismatchError):
            assign(model, rng.normal(size=(4, 5)))


class TestElbow:
    def test_hand_executed_curve(self):
        kappa, found = elbow([10, 5, 3, 2.5, 2.2], [1, 2, 3, 4, 5])
        assert found and kappa == 3

    def test_linear_curve_no_knee(self):
        kappa, found = elbow([10, 8, 6, 4, 2], [1, 2, 3, 4, 5])
        assert not found and kappa == 3  # grid midpoint

    def test_two_point_grid_errors(self):
        with pytest.raises(ValueError):
            elbow([5, 3], [1, 2])

    def test_non_increasing_grid_errors(self):
        with pytest.raises(ValueError):
            elbow([5, 3, 2], [1, 3, 3])

    def test_model_roundtrip(self, tmp_path, rng):
        X = rng.normal(size=(30, 4))
        model = kmedoids_fit(X, 3, metric=COSINE)
        model.save(tmp_path / "m.model.json")
        again = ClusterModel.load(tmp_path / "m.model.json")
        assert again.algorithm == model.algorithm
        assert again.metric == COSINE
        # centers persist in RNEM, i.e. float32 precision
        assert np.array_equal(again.centers,
                              model.centers.astype("<f4").astype(np.float64))
        assert again.medoid_indices == model.medoid_indices
        assert (tmp_path / "m.model.centers.rnem").exists()


class TestInvariants:
    def test_pam_cost_not_worse_than_build_only(self, rng):
        from medclust.cluster import _pam_build
        X = rng.normal(size=(40, 3))
        D = pairwise_distances(X, EUCLIDEAN)
        build_cost = D[:, _pam_build(D, 4)].min(axis=1).sum()
        model = kmedoids_fit(X, 4)
        assert model.inertia <= build_cost + 1e-12

    def test_blob_recovery_both_algorithms(self, rng):
        centers = np.array([[0, 0, 0], [12, 0, 0], [0, 12, 0]], dtype=float)
        X, truth = gaussian_blobs(40, centers, 1.0, rng)
        from medclust.metrics import nmi
        for fit in (lambda: kmeans_fit(X, 3, seed=2),
                    lambda: kmedoids_fit(X, 3, metric=EUCLIDEAN)):
            labels, _ = assign(fit(), X)
            assert nmi(truth, labels) > 0.95
