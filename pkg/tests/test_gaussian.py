import math

import numpy as np
import pytest
from scipy.spatial.distance import pdist
from scipy.stats import spearmanr
from sklearn.feature_selection import mutual_info_regression

from conftest import random_block_covariance
from dimensionality_lab.core.errors import InvalidParameterError, ShapeError, InvalidMatrixError, SingularModelError
from dimensionality_lab.core.gaussian import (BlobConfig, BlockCovariance, blob_labels, bound_decomposition, empirical_block_covariance,
                                              evaluate_projection, fit_pca, gaussian_entropy, gaussian_mutual_info, generate_blobs,
                                              log_determinant_terms, project, reconstruct, sweep_features, sweep_variance)


def split_joint(joint: np.ndarray, n: int) -> BlockCovariance:
    """
    Blocks of a joint covariance whose first n coordinates are Z
    """
    return BlockCovariance(sigma_r=joint[n:, n:], sigma_z=joint[:n, :n], sigma_rz=joint[n:, :n])


class TestBlobs:

    def test_shape(self):
        X = generate_blobs(BlobConfig(n_samples=1000, n_features=25))
        assert X.values.shape == (1000, 25)

    def test_zero_noise_samples_sit_on_centers(self):
        cfg = BlobConfig(n_samples=50, n_features=4, n_centers=5, cluster_std=0.0, seed=1)
        X, labels = generate_blobs(cfg).values, blob_labels(cfg)
        for label in range(cfg.n_centers):
            members = X[labels == label]
            np.testing.assert_array_equal(members, np.tile(members[0], (len(members), 1)))

    def test_cluster_std(self):
        stds = []
        for seed in range(10):
            cfg = BlobConfig(n_samples=1000, n_features=25, cluster_std=2.0, seed=seed)
            X, labels = generate_blobs(cfg).values, blob_labels(cfg)
            stds += [X[labels == label].std(axis=0, ddof=1).mean() for label in range(cfg.n_centers)]
        assert np.mean(stds) == pytest.approx(2.0, rel=0.05)

    def test_round_robin_labels(self):
        np.testing.assert_array_equal(blob_labels(BlobConfig(n_samples=7, n_centers=3)), [0, 1, 2, 0, 1, 2, 0])

    def test_deterministic_per_seed(self):
        cfg = BlobConfig(seed=9)
        np.testing.assert_array_equal(generate_blobs(cfg).values, generate_blobs(cfg).values)

    def test_rejects_negative_std(self):
        with pytest.raises(ValueError):
            BlobConfig(cluster_std=-1.0)


class TestPca:

    def test_rank_one_reconstruction(self):
        t = np.linspace(-2, 3, 9)
        X = np.column_stack([3 + t, -1 + 2 * t])
        p = fit_pca(X, 1)
        np.testing.assert_allclose(reconstruct(p, project(p, X)).values, X, atol=1e-8)

    def test_full_basis_keeps_variance_and_distances(self, rng):
        X = rng.standard_normal((40, 5)) @ rng.standard_normal((5, 5))
        Z = project(fit_pca(X, 5), X).values
        assert np.var(Z, axis=0, ddof=1).sum() == pytest.approx(np.var(X, axis=0, ddof=1).sum(), abs=1e-8)
        np.testing.assert_allclose(pdist(Z), pdist(X), atol=1e-8)

    def test_mean_maps_to_origin(self, rng):
        X = rng.standard_normal((20, 4))
        p = fit_pca(X, 2)
        np.testing.assert_allclose(project(p, X.mean(axis=0, keepdims=True)).values, np.zeros((1, 2)), atol=1e-12)

    def test_hand_example(self):
        X = np.array([[-1.0, -1.0], [0.0, 0.0], [1.0, 1.0]])
        p = fit_pca(X, 1)
        np.testing.assert_allclose(p.components, [[1 / math.sqrt(2), 1 / math.sqrt(2)]], atol=1e-12)
        np.testing.assert_allclose(project(p, X).values.ravel(), [-math.sqrt(2), 0.0, math.sqrt(2)], atol=1e-12)
        assert p.explained[0] == pytest.approx(2.0)

    @pytest.mark.parametrize("k", [0, 4])
    def test_k_out_of_range(self, rng, k):
        with pytest.raises(InvalidParameterError):
            fit_pca(rng.standard_normal((10, 3)), k)

    def test_projection_shape_mismatch(self, rng):
        p = fit_pca(rng.standard_normal((10, 3)), 2)
        with pytest.raises(ShapeError):
            project(p, rng.standard_normal((4, 5)))


class TestBlockCovariance:

    def test_identical_variables(self, rng):
        R = rng.standard_normal((100, 3))
        c = empirical_block_covariance(R, R)
        np.testing.assert_allclose(c.sigma_rz, c.sigma_r, atol=1e-10)

    def test_independent_variables(self, rng):
        R = rng.standard_normal((100_000, 3))
        Z = np.random.default_rng(7).standard_normal((100_000, 2))
        c = empirical_block_covariance(R, Z)
        assert np.linalg.norm(c.sigma_rz) < 0.05 * np.linalg.norm(c.sigma_r)

    def test_hand_example(self):
        c = empirical_block_covariance(np.array([[1.0], [2.0], [3.0]]), np.array([[2.0], [4.0], [7.0]]))
        assert c.sigma_r[0, 0] == pytest.approx(1.0)
        assert c.sigma_rz[0, 0] == pytest.approx(2.5)
        assert c.sigma_z[0, 0] == pytest.approx(114 / 18)

    def test_row_mismatch(self, rng):
        with pytest.raises(ShapeError):
            empirical_block_covariance(rng.standard_normal((5, 2)), rng.standard_normal((6, 2)))

    def test_rejects_indefinite_joint(self):
        with pytest.raises(InvalidMatrixError):
            BlockCovariance(sigma_r=np.eye(1), sigma_z=np.eye(1), sigma_rz=np.array([[2.0]]))


class TestGaussianMutualInfo:

    def test_independent_blocks(self):
        c = BlockCovariance(sigma_r=np.eye(3), sigma_z=2 * np.eye(2), sigma_rz=np.zeros((3, 2)))
        assert gaussian_mutual_info(c) == pytest.approx(0.0, abs=1e-12)

    def test_bivariate_correlation(self):
        c = BlockCovariance(sigma_r=[[1.0]], sigma_z=[[1.0]], sigma_rz=[[0.5]])
        assert gaussian_mutual_info(c) == pytest.approx(-0.5 * math.log(1 - 0.25), abs=1e-4)
        assert gaussian_mutual_info(c) == pytest.approx(0.14384, abs=1e-4)

    def test_matches_nearest_neighbour_estimate(self, rng):
        samples = rng.multivariate_normal([0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]], size=100_000)
        estimate = mutual_info_regression(samples[:, :1], samples[:, 1], n_neighbors=3, random_state=0)[0]
        closed_form = gaussian_mutual_info(empirical_block_covariance(samples[:, :1], samples[:, 1:]))
        assert closed_form == pytest.approx(estimate, rel=0.05)

    def test_deterministic_map_is_singular(self, rng):
        R = rng.standard_normal((500, 2))
        c = empirical_block_covariance(R, R @ np.array([[1.0, 2.0], [0.5, -1.0]]))
        with pytest.raises(SingularModelError):
            gaussian_mutual_info(c, ridge=0.0)

    def test_identical_variables_are_singular(self):
        with pytest.raises(SingularModelError):
            gaussian_mutual_info(BlockCovariance(sigma_r=np.eye(2), sigma_z=np.eye(2), sigma_rz=np.eye(2)), ridge=0.0)

    def test_ridge_keeps_deterministic_map_finite(self, rng):
        R = rng.standard_normal((500, 4))
        Z = project(fit_pca(R, 2), R)
        assert np.isfinite(gaussian_mutual_info(empirical_block_covariance(R, Z)))

    def test_negative_ridge(self):
        with pytest.raises(InvalidParameterError):
            gaussian_mutual_info(BlockCovariance(sigma_r=np.eye(1), sigma_z=np.eye(1), sigma_rz=np.zeros((1, 1))), ridge=-1.0)

    @pytest.mark.parametrize("scale_r, scale_z", [(10.0, 1.0), (100.0, 1.0), (1e3, 1e-3), (1e-4, 1e5)])
    def test_separate_rescaling(self, rng, scale_r, scale_z):
        c = split_joint(random_block_covariance(rng, 4, 3), 3)
        scaled = BlockCovariance(sigma_r=scale_r ** 2 * c.sigma_r, sigma_z=scale_z ** 2 * c.sigma_z, sigma_rz=scale_r * scale_z * c.sigma_rz)
        assert gaussian_mutual_info(scaled) == pytest.approx(gaussian_mutual_info(c), abs=1e-9)

    def test_per_coordinate_rescaling(self, rng):
        c = split_joint(random_block_covariance(rng, 4, 3), 3)
        a, b = np.diag([0.1, 1.0, 5.0, 30.0]), np.diag([100.0, 0.2, 3.0])
        scaled = BlockCovariance(sigma_r=a @ c.sigma_r @ a.T, sigma_z=b @ c.sigma_z @ b.T, sigma_rz=a @ c.sigma_rz @ b.T)
        assert gaussian_mutual_info(scaled) == pytest.approx(gaussian_mutual_info(c), abs=1e-9)

    def test_invertible_maps(self, rng):
        for _ in range(20):
            c = split_joint(random_block_covariance(rng, 4, 3), 3)
            a = np.linalg.qr(rng.standard_normal((4, 4)))[0] @ np.diag(rng.uniform(0.5, 2.0, 4))
            b = np.linalg.qr(rng.standard_normal((3, 3)))[0] @ np.diag(rng.uniform(0.5, 2.0, 3))
            mapped = BlockCovariance(sigma_r=a @ c.sigma_r @ a.T, sigma_z=b @ c.sigma_z @ b.T, sigma_rz=a @ c.sigma_rz @ b.T)
            assert abs(gaussian_mutual_info(mapped) - gaussian_mutual_info(c)) < 1e-6

    def test_invertible_maps_of_samples(self, rng):
        R = rng.standard_normal((2000, 4))
        Z = R[:, :3] @ rng.standard_normal((3, 3)) + rng.standard_normal((2000, 3))
        a = np.diag([10.0, 1.0, 1.0, 0.1]) @ np.linalg.qr(rng.standard_normal((4, 4)))[0]
        b = 1e-3 * np.linalg.qr(rng.standard_normal((3, 3)))[0]
        before = gaussian_mutual_info(empirical_block_covariance(R, Z))
        after = gaussian_mutual_info(empirical_block_covariance(R @ a.T, Z @ b.T))
        assert abs(after - before) < 1e-6

    def test_schur_forms_agree(self, rng):
        for _ in range(1000):
            m, n = (int(v) for v in rng.integers(1, 7, size=2))
            terms = log_determinant_terms(split_joint(random_block_covariance(rng, m, n), n), ridge=0.0)
            via_z = 0.5 * (terms.logdet_sigma_z - terms.logdet_var_z_given_r)
            via_r = 0.5 * (terms.logdet_sigma_r - terms.logdet_var_r_given_z)
            assert math.isclose(via_z, via_r, rel_tol=1e-6, abs_tol=1e-12)
            assert via_z >= -1e-12


class TestGaussianEntropy:

    def test_standard_normal(self):
        assert gaussian_entropy(np.eye(1)) == pytest.approx(0.5 * math.log(2 * math.pi * math.e), abs=1e-5)
        assert gaussian_entropy(np.eye(1)) == pytest.approx(1.41894, abs=1e-5)

    def test_identity_adds_up(self):
        assert gaussian_entropy(np.eye(4)) == pytest.approx(4 * 0.5 * math.log(2 * math.pi * math.e), abs=1e-9)

    def test_matches_determinant(self, rng):
        factor = rng.standard_normal((4, 4))
        sigma = factor @ factor.T + np.eye(4)
        expected = 0.5 * math.log((2 * math.pi * math.e) ** 4 * np.linalg.det(sigma))
        assert gaussian_entropy(sigma) == pytest.approx(expected, abs=1e-8)

    def test_not_positive_definite(self):
        with pytest.raises(SingularModelError):
            gaussian_entropy(np.array([[1.0, 2.0], [2.0, 1.0]]))


class TestBoundDecomposition:

    def test_identity_over_random_instances(self, rng):
        for _ in range(1000):
            m, n = (int(v) for v in rng.integers(1, 7, size=2))
            c = split_joint(random_block_covariance(rng, m, n), n)
            bound = bound_decomposition(c, ridge=0.0)
            expected = gaussian_entropy(c.sigma_r) - gaussian_mutual_info(c, ridge=0.0)
            assert bound.k_term + bound.v_term + bound.d_term == pytest.approx(expected, abs=1e-8)

    def test_independent_identity_blocks(self):
        bound = bound_decomposition(BlockCovariance(sigma_r=np.eye(3), sigma_z=np.eye(3), sigma_rz=np.zeros((3, 3))))
        assert bound.k_term == pytest.approx(0.0, abs=1e-12)
        assert bound.v_term == pytest.approx(0.0, abs=1e-8)

    def test_dimension_term(self):
        bound = bound_decomposition(BlockCovariance(sigma_r=np.eye(3), sigma_z=np.eye(1), sigma_rz=np.zeros((3, 1))), g_const=2.0)
        assert bound.d_term == pytest.approx(4.25681, abs=1e-5)
        assert bound.upper_bound == pytest.approx(2.0 + bound.k_term + bound.v_term + bound.d_term)


class TestSweeps:

    def test_single_point(self, small_blobs):
        result = sweep_features(small_blobs, [12], pca_k=3, repeats=1)
        assert len(result.points) == 1
        assert result.points[0].mi_std == 0.0

    def test_single_std_equals_direct_evaluation(self, small_blobs):
        result = sweep_variance(small_blobs, [2.0], pca_k=3, repeats=1)
        direct = evaluate_projection(small_blobs.model_copy(update={"cluster_std": 2.0}), 3)
        assert result.points[0].mi_mean == direct.mi

    def test_deterministic(self, small_blobs):
        first = sweep_features(small_blobs, [8, 12], pca_k=3, repeats=3)
        second = sweep_features(small_blobs, [8, 12], pca_k=3, repeats=3)
        assert first.curve() == second.curve()

    def test_workers_do_not_change_results(self, small_blobs):
        serial = sweep_variance(small_blobs, [0.5, 1.0, 2.0], pca_k=3, repeats=4)
        parallel = sweep_variance(small_blobs, [0.5, 1.0, 2.0], pca_k=3, repeats=4, workers=3)
        assert [s.mi for s in serial.samples] == [s.mi for s in parallel.samples]

    def test_common_seeds_across_parameters(self, small_blobs):
        result = sweep_variance(small_blobs, [1.0, 2.0], pca_k=2, repeats=2)
        assert [s.seed for s in result.samples] == [3, 4, 3, 4]

    def test_repeated_setting_gets_its_own_point(self, small_blobs):
        result = sweep_features(small_blobs, [8, 8, 12], pca_k=3, repeats=2)
        assert [point.param for point in result.points] == [8.0, 8.0, 12.0]
        for index, point in enumerate(result.points):
            values = [sample.mi for sample in result.samples[2 * index:2 * index + 2]]
            assert point.mi_mean == pytest.approx(np.mean(values))
            assert point.mi_std == pytest.approx(np.std(values, ddof=1))
        assert result.points[0].mi_mean == result.points[1].mi_mean

    def test_feature_count_below_projection(self, small_blobs):
        with pytest.raises(InvalidParameterError):
            sweep_features(small_blobs, [3], pca_k=3, repeats=1)

    @pytest.mark.slow
    @pytest.mark.parametrize("std", [0.5, 1.0, 2.0])
    def test_more_features_raise_information(self, std):
        result = sweep_features(BlobConfig(cluster_std=std), [15, 20, 30, 40, 50], pca_k=10, repeats=100, workers=4)
        means = [point.mi_mean for point in result.points]
        assert spearmanr([15, 20, 30, 40, 50], means).statistic == pytest.approx(1.0)

    @pytest.mark.slow
    def test_more_variance_lowers_information(self):
        stds = [0.5, 1.0, 2.0, 4.0, 8.0]
        result = sweep_variance(BlobConfig(n_features=25), stds, pca_k=2, repeats=100, workers=4)
        assert spearmanr(stds, [point.mi_mean for point in result.points]).statistic == pytest.approx(-1.0)

    @pytest.mark.slow
    def test_wide_projection_plateaus(self):
        result = sweep_variance(BlobConfig(n_features=25), [0.5, 1.0, 2.0, 4.0, 8.0], pca_k=10, repeats=100, workers=4)
        last, previous = result.points[-1].mi_mean, result.points[-2].mi_mean
        assert abs(last - previous) < 0.1 * abs(previous)
