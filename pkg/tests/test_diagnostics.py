import numpy as np
import pandas as pd
import pytest
import torch
from scipy.integrate import trapezoid

from app.core.config import ArchitectureConfig, ObjectiveConfig, QuadratureSpec
from app.core.datasets import generate, ground_truth, gt_log_density, model_as_ground_truth
from app.core.diagnostics import (
    REPORT_COLUMNS,
    DiagnosticsReport,
    aggregated_posterior,
    average_latent_mi,
    entangling_rotation,
    functional_collapse_distance,
    ksg_mi,
    label_separability,
    manifold_residual_normality,
    mleo_pmo,
    pmo_split,
    posterior_collapse_probe,
    posterior_kl,
    posterior_mode_count,
    prior_mismatch,
    smooth_knn_stat,
    total_variation,
)
from app.core.errors import ConfigError, LabError, NonFiniteError, QuadratureError, ShapeError
from app.core.models import NoiseSource, build_model
from app.core.objectives import elbo_per_datum

GRID = np.linspace(-8.0, 8.0, 2001)


@pytest.fixture
def figure8_x():
    _, data = generate("figure8", 40, seed=3)
    return data.x


class TestSmoothKnn:
    def test_shifted_samples_are_detected(self, rng):
        a = rng.standard_normal((300, 2))
        same = smooth_knn_stat(a, rng.standard_normal((300, 2)), permutations=100)
        shifted = smooth_knn_stat(a, rng.standard_normal((300, 2)) + 1.5, permutations=100)
        assert shifted.statistic > same.statistic
        assert shifted.p_value < 0.05
        assert 0.0 < same.p_value <= 1.0

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ShapeError):
            smooth_knn_stat(rng.standard_normal((10, 2)), rng.standard_normal((10, 3)))

    def test_seeded_p_value(self, rng):
        a, b = rng.standard_normal((100, 2)), rng.standard_normal((100, 2))
        assert smooth_knn_stat(a, b, permutations=50, seed=4) == smooth_knn_stat(a, b, permutations=50, seed=4)


class TestKsg:
    def test_correlated_gaussian(self, rng):
        rho = 0.9
        cov = np.array([[1.0, rho], [rho, 1.0]])
        samples = rng.multivariate_normal(np.zeros(2), cov, size=2000)
        assert ksg_mi(samples[:, 0], samples[:, 1]) == pytest.approx(-0.5 * np.log(1 - rho**2), abs=0.05)

    def test_independent(self, rng):
        assert abs(ksg_mi(rng.standard_normal(2000), rng.standard_normal(2000))) < 0.05

    def test_unpaired(self, rng):
        with pytest.raises(ShapeError):
            ksg_mi(rng.standard_normal(10), rng.standard_normal(11))

    def test_average_latent_mi_per_coordinate(self, figure8_x):
        model = build_model(ArchitectureConfig(latent_dim=2, hidden=(8,)), seed=0)
        mean, values = average_latent_mi(model, figure8_x, NoiseSource(0))
        assert len(values) == 2
        assert mean == pytest.approx(np.mean(values))


class TestReport:
    def test_rejects_non_finite(self):
        with pytest.raises(NonFiniteError):
            DiagnosticsReport("figure8", "vae", 0).add("elbo", float("nan"))

    def test_frame_and_banner(self, tmp_path):
        report = DiagnosticsReport("figure8", "iwae", 3, hyperparameters={"S": 20})
        report.add("elbo", -1.25, 0.01).add("knn_stat", 0.4)
        frame = pd.read_csv(report.to_csv(str(tmp_path / "d.csv")))
        assert list(frame.columns) == REPORT_COLUMNS
        assert frame["metric"].tolist() == ["elbo", "knn_stat"]
        assert report["elbo"] == -1.25
        text = report.format_table()
        assert text.startswith("=" * 20) and "S: 20" in text and "± 0.0100" in text


class TestQuadratureDecomposition:
    def test_posterior_kl_is_nonnegative(self, small_model, figure8_x):
        kl = posterior_kl(small_model, figure8_x[:10], GRID)
        assert kl.shape == (10,)
        assert (kl >= 0).all()

    def test_split_reassembles_the_mean(self, small_model, figure8_x):
        kl = posterior_kl(small_model, figure8_x[:10], GRID)
        split = pmo_split(small_model, figure8_x[:10], GRID, eta=float(np.median(kl)))
        assert split.pmo == pytest.approx(kl.mean(), rel=1e-12)
        assert split.pr_hi + split.pr_lo == pytest.approx(1.0)

    def test_negative_eta(self, small_model, figure8_x):
        with pytest.raises(ValueError):
            pmo_split(small_model, figure8_x, GRID, eta=-0.1)

    def test_model_against_itself(self, small_model, figure8_x):
        mleo, pmo = mleo_pmo(small_model, model_as_ground_truth(small_model), figure8_x[:5], GRID,
                             QuadratureSpec(points=2001))
        assert mleo == pytest.approx(0.0, abs=1e-12)
        assert pmo >= 0.0

    def test_two_dimensional_latent_is_refused(self, figure8_x):
        model = build_model(ArchitectureConfig(latent_dim=2, hidden=(4,)), seed=0)
        with pytest.raises(QuadratureError):
            posterior_kl(model, figure8_x, GRID)

    def test_elbo_equals_evidence_minus_posterior_kl(self, small_model, figure8_x):
        x = figure8_x[:5]
        config = ObjectiveConfig(mc_samples=2000)
        draws = np.array([elbo_per_datum(small_model, x, NoiseSource(s), config).detach().numpy()
                          for s in range(10)]).mean(axis=1)
        stderr = draws.std(ddof=1) / np.sqrt(len(draws))
        log_px = gt_log_density(model_as_ground_truth(small_model), x, QuadratureSpec(points=4001)).mean()
        expected = log_px - posterior_kl(small_model, x).mean()
        assert abs(draws.mean() - expected) < 3 * stderr + 1e-3

    def test_aggregated_posterior_is_normalized(self, small_model, figure8_x):
        assert trapezoid(aggregated_posterior(small_model, figure8_x, GRID), GRID) == pytest.approx(1.0, abs=1e-6)

    def test_prior_mismatch_is_a_distance(self, small_model, figure8_x):
        assert 0.0 <= prior_mismatch(small_model, figure8_x, GRID) <= 1.0

    def test_posterior_mode_count(self, small_model, figure8_x):
        assert posterior_mode_count(ground_truth("figure8"), np.zeros((1, 2))) == 3.0
        assert posterior_mode_count(small_model, figure8_x[:5], GRID) >= 1.0

    def test_total_variation_of_identical_densities(self):
        p = np.exp(-0.5 * GRID**2) / np.sqrt(2 * np.pi)
        assert total_variation(p, p, GRID) == 0.0


class TestCollapse:
    def test_ground_truth_branches_differ(self):
        assert functional_collapse_distance(ground_truth("ss_discrete"), [0, 1]) > 0.1

    def test_ignored_label_collapses(self, discrete_model):
        with torch.no_grad():
            discrete_model.decoder.net.layers[0].weight.data[:, 1:] = 0.0
        assert functional_collapse_distance(discrete_model, [0, 1]) == pytest.approx(0.0, abs=1e-12)

    def test_unlabeled_decoder(self, small_model):
        with pytest.raises(LabError):
            functional_collapse_distance(small_model, [0, 1])

    def test_single_label(self):
        with pytest.raises(ValueError):
            functional_collapse_distance(ground_truth("ss_discrete"), [0])

    def test_zeroed_encoder_has_collapsed(self, small_model, figure8_x):
        small_model.encoder.net.zero_()
        assert posterior_collapse_probe(small_model, figure8_x) == pytest.approx(0.0, abs=1e-12)


class TestEntanglingRotation:
    A = np.array([[2.0, 0.5], [0.3, 1.0]])

    def test_matching_spectrum_preserves_the_marginal(self):
        sigma_sq = 0.1
        s = np.linalg.svd(self.A, compute_uv=False)
        result = entangling_rotation(self.A, s**2 + sigma_sq, sigma_sq)
        assert result.deviation < 1e-10
        assert not np.allclose(result.rotated, self.A)

    def test_lambda_below_noise(self):
        with pytest.raises(ConfigError):
            entangling_rotation(self.A, [0.05, 2.0], 0.1)


class TestDataChecks:
    def test_residual_normality_frame(self):
        gt, data = generate("figure8", 500, seed=0)
        frame = manifold_residual_normality(gt, data.x)
        assert list(frame.columns) == ["dim", "statistic", "p_value"]
        assert len(frame) == 2

    def test_residual_normality_of_a_learned_manifold(self, small_model, figure8_x):
        frame = manifold_residual_normality(small_model, figure8_x)
        assert frame["p_value"].between(0.0, 1.0).all()

    def test_residual_normality_needs_unlabeled(self):
        gt, data = generate("ss_discrete", 50, seed=0)
        with pytest.raises(LabError):
            manifold_residual_normality(gt, data.x)

    def test_separable_labels(self, rng):
        y = np.repeat([0.0, 1.0], 200)
        x = rng.standard_normal((400, 2)) + 6.0 * y[:, None]
        result = label_separability(x, y)
        assert result["accuracy"] > 0.95
        assert result["entropy"] < 0.2

    def test_continuous_labels(self, rng):
        with pytest.raises(ValueError):
            label_separability(rng.standard_normal((20, 2)), rng.standard_normal(20))
