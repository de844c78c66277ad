import math

import numpy as np
import pandas as pd
import pytest
from scipy import stats
from scipy.integrate import trapezoid

from app.core.config import ArchitectureConfig, QuadratureSpec
from app.core.datasets import (
    LabeledDataset,
    embed_5d,
    fit_surrogate,
    generate,
    generate_splits,
    gt_density,
    gt_log_density,
    gt_posterior,
    ground_truth,
    linear_ground_truth,
    load_csv,
    save_csv,
    semicircle_mix,
    split_sizes,
)
from app.core.errors import DatasetFormatError, QuadratureError, ShapeError, UnknownKindError
from app.core.models import A_GT, SIGMA_SQ_GT
from app.core.utils import GENERATOR_NAMES, count_local_maxima


class TestGenerators:
    @pytest.mark.parametrize("kind", GENERATOR_NAMES)
    def test_every_generator_samples(self, kind):
        gt, data = generate(kind, 50, seed=1)
        assert data.x.shape == (50, gt.data_dim)
        assert np.isfinite(data.x).all()
        assert (data.y is not None) == gt.is_labeled

    def test_same_seed_same_data(self):
        _, a = generate("figure8", 100, seed=3)
        _, b = generate("figure8", 100, seed=3)
        _, c = generate("figure8", 100, seed=4)
        np.testing.assert_array_equal(a.x, b.x)
        assert not np.array_equal(a.x, c.x)

    def test_unknown_kind(self):
        with pytest.raises(UnknownKindError):
            ground_truth("mobius")
        with pytest.raises(KeyError):
            generate("mobius", 10, seed=0)

    def test_noise_override(self):
        assert ground_truth("clusters").noise_variance.tolist() == [0.2, 0.2]
        assert ground_truth("clusters", noise_variance=0.05).noise_variance.tolist() == [0.05, 0.05]

    def test_gaussian_blob_ignores_the_latent(self):
        gt = ground_truth("gaussian")
        np.testing.assert_array_equal(gt.mean(np.linspace(-3, 3, 7)), np.zeros((7, 2)))

    def test_circle_lies_on_the_unit_circle(self):
        points = ground_truth("circle").mean(np.linspace(-3, 3, 50))
        np.testing.assert_allclose(np.linalg.norm(points, axis=1), 1.0)

    def test_semicircle_mix_is_symmetric(self):
        assert semicircle_mix(0.0) == pytest.approx(0.5)
        assert semicircle_mix(-2.0) == pytest.approx(1.0 - semicircle_mix(2.0))

    def test_labeled_mean_needs_labels(self):
        with pytest.raises(ShapeError):
            ground_truth("ss_discrete").mean(np.zeros(3))


class TestSplits:
    def test_split_sizes(self):
        assert split_sizes(9000) == (5000, 2000, 2000)
        assert sum(split_sizes(101)) == 101

    def test_label_mask_is_redrawn_per_split(self):
        _, parts = generate_splits("ss_discrete", seed=0, sizes=(500, 200, 200))
        for name, size in (("train", 500), ("validation", 200), ("test", 200)):
            assert parts[name].split == name
            assert parts[name].n_observed == math.ceil(0.1 * size)

    def test_unlabeled_splits_have_no_observed_labels(self):
        _, parts = generate_splits("figure8", seed=0, sizes=(50, 20, 20))
        assert parts["train"].n_observed == 0

    def test_dataset_field_lengths(self):
        with pytest.raises(ShapeError):
            LabeledDataset(np.zeros((3, 2)), z_true=np.zeros((4, 1)))


class TestEmbedding:
    def test_identity_lift(self):
        gt = ground_truth("figure8")
        lift = np.hstack([np.eye(2), np.zeros((2, 3))])
        lifted = embed_5d(gt, lift)
        z = np.linspace(-2, 2, 9)
        np.testing.assert_allclose(lifted.mean(z)[:, :2], gt.mean(z))
        np.testing.assert_array_equal(lifted.mean(z)[:, 2:], 0.0)
        assert lifted.data_dim == 5

    def test_rank_deficient(self):
        with pytest.raises(ShapeError):
            embed_5d(ground_truth("figure8"), np.ones((2, 5)))

    def test_dataset_lift_keeps_latents(self):
        gt, data = generate("clusters", 30, seed=0)
        lifted = embed_5d(data, gt=gt, seed=1)
        assert lifted.x.shape == (30, 5)
        np.testing.assert_array_equal(lifted.z_true, data.z_true)


class TestQuadrature:
    def test_linear_model_density_is_exact(self, rng):
        gt = linear_ground_truth([[1.0], [0.5]], 0.1)
        x = rng.standard_normal((20, 2))
        expected = stats.multivariate_normal(np.zeros(2), gt.weights @ gt.weights.T + 0.1 * np.eye(2)).logpdf(x)
        np.testing.assert_allclose(gt_log_density(gt, x), expected, atol=1e-6)

    def test_linear_cholesky_carries_its_weights(self):
        gt = ground_truth("linear_cholesky")
        np.testing.assert_array_equal(gt.weights, gt.cholesky)
        assert gt.name == "linear_cholesky" and gt.latent_dim == 2

    def test_uniform_prior_density_normalizes(self):
        gt = ground_truth("quad1")
        xs = np.linspace(-0.5, 1.0, 3001)
        density = np.exp(gt_log_density(gt, xs[:, None]))
        assert trapezoid(density, xs) == pytest.approx(1.0, abs=1e-3)

    def test_two_dimensional_latent(self):
        gt, data = generate("linear_cholesky", 3, seed=0)
        cov = np.asarray(A_GT) @ np.asarray(A_GT).T + SIGMA_SQ_GT * np.eye(2)
        expected = stats.multivariate_normal(np.zeros(2), cov).pdf(data.x)
        np.testing.assert_allclose(gt_density(gt, data.x, QuadratureSpec(points_2d=401)), expected, rtol=1e-6)

    def test_far_away_points_stay_finite(self):
        assert np.isfinite(gt_log_density(ground_truth("circle"), np.array([[40.0, -40.0]]))).all()

    def test_posterior_integrates_to_one(self):
        gt = ground_truth("absval")
        grid = QuadratureSpec().grid()
        post = gt_posterior(gt, np.array([[0.4, 0.4], [0.9, 0.1]]), grid)
        np.testing.assert_allclose(trapezoid(post, grid, axis=1), 1.0, atol=1e-8)

    def test_figure8_posterior_at_the_crossing_is_multimodal(self):
        post = gt_posterior(ground_truth("figure8"), np.zeros(2))
        assert count_local_maxima(post) == 3

    def test_posterior_needs_a_one_dimensional_latent(self):
        with pytest.raises(QuadratureError):
            gt_posterior(ground_truth("linear_cholesky"), np.zeros(2))

    def test_grid_must_increase(self):
        with pytest.raises(ValueError):
            gt_posterior(ground_truth("circle"), np.zeros(2), z_grid=np.array([0.0, -1.0, 1.0]))


def test_linear_surrogate_recovers_the_weights():
    gt = linear_ground_truth([[2.0], [-1.0]], 0.01)
    arch = ArchitectureConfig(latent_dim=1, data_dim=2, hidden=())
    decoder = fit_surrogate(gt, arch, tolerance=1e-10, n_samples=500)
    np.testing.assert_allclose(decoder.net.layers[0].weight.detach().numpy(), [[2.0], [-1.0]], atol=1e-8)


class TestCsv:
    def test_labeled_file_layout(self, tmp_path):
        _, parts = generate_splits("ss_discrete", seed=2, sizes=(40, 10, 10))
        path = save_csv(parts["train"], str(tmp_path / "ss_discrete_train.csv"))
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["x0", "x1", "z0", "y", "y_observed"]
        loaded = load_csv(path)
        assert loaded.split == "train" and loaded.generator == "ss_discrete"
        np.testing.assert_array_equal(loaded.x, parts["train"].x)
        np.testing.assert_array_equal(loaded.observed_mask, parts["train"].observed_mask)

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x0,foo\n1,2\n")
        with pytest.raises(DatasetFormatError, match="header"):
            load_csv(str(path))

    def test_ragged_rows(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("x0,x1\n1,2\n3\n")
        with pytest.raises(DatasetFormatError, match="ragged"):
            load_csv(str(path))
