"""
Measurements: sample-based two-sample and information statistics, the
quadrature decomposition of the ELBO gap for 1-D latents, and probes of
collapse and non-identifiability.
"""

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from itertools import combinations
from typing import NamedTuple

import numpy as np
import pandas as pd
import torch
from loguru import logger
from scipy import stats
from scipy.integrate import trapezoid
from scipy.spatial import cKDTree
from scipy.special import digamma, softmax
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import train_test_split
from sklearn.neighbors import NearestNeighbors

from . import autodiff as ad
from .config import QuadratureSpec
from .datasets import GroundTruthModel, gt_log_density, gt_posterior, model_as_ground_truth
from .errors import ConfigError, LabError, NonFiniteError, QuadratureError, ShapeError
from .models import MlpDecoder, VaeModel, kl_diag_gaussian_to_std, reparam_sample
from .utils import count_local_maxima, ensure_parent, normal_log_pdf


# -- reports ------------------------------------------------------------------

REPORT_COLUMNS = ["dataset", "method", "seed", "metric", "value", "stderr"]


@dataclass
class DiagnosticsReport:
    """Named metric values with provenance."""

    dataset: str
    method: str
    seed: int
    hyperparameters: dict = field(default_factory=dict)
    metrics: "OrderedDict[str, tuple]" = field(default_factory=OrderedDict)

    def add(self, name, value, stderr=float("nan")):
        value = float(value)
        if not math.isfinite(value):
            raise NonFiniteError(f"metric {name} is not finite ({value})")
        self.metrics[name] = (value, float(stderr))
        return self

    def __getitem__(self, name):
        return self.metrics[name][0]

    def to_frame(self):
        rows = [
            (self.dataset, self.method, self.seed, name, value, stderr)
            for name, (value, stderr) in self.metrics.items()
        ]
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)

    def to_csv(self, path, append=False):
        ensure_parent(path)
        self.to_frame().to_csv(path, mode="a" if append else "w", header=not append, index=False,
                               float_format="%.17g")
        logger.info(f"💾 diagnostics written to {path}")
        return path

    def format_table(self):
        title = f" {self.dataset} / {self.method} / seed {self.seed} "
        lines = ["=" * 20 + title + "=" * 20]
        for key, value in self.hyperparameters.items():
            lines.append(f"  {key}: {value}")
        for name, (value, stderr) in self.metrics.items():
            spread = "" if math.isnan(stderr) else f" ± {stderr:.4f}"
            lines.append(f"  {name:<28} {value:>12.6f}{spread}")
        lines.append("=" * (40 + len(title)))
        return "\n".join(lines)


@dataclass(frozen=True)
class SplitReport:
    eta: float
    pr_hi: float
    pr_lo: float
    d_hi: float
    d_lo: float

    @property
    def pmo(self):
        return self.pr_hi * self.d_hi + self.pr_lo * self.d_lo


class KnnTestResult(NamedTuple):
    statistic: float
    p_value: float


class RotationResult(NamedTuple):
    rotated: np.ndarray
    deviation: float


# -- smooth kNN two-sample statistic -----------------------------------------

def _neighbours(pooled, k):
    n = pooled.shape[0]
    algorithm = "kd_tree" if pooled.shape[1] <= 8 else "brute"
    dist, idx = NearestNeighbors(n_neighbors=k + 1, algorithm=algorithm).fit(pooled).kneighbors(pooled)
    is_self = idx == np.arange(n)[:, None]
    keep = ~is_self
    keep[~is_self.any(axis=1), -1] = False
    return dist[keep].reshape(n, k), idx[keep].reshape(n, k)


def _agreement(labels, neighbour_idx, weights):
    return float(np.mean(np.sum(weights * (labels[neighbour_idx] == labels[:, None]), axis=1)))


def smooth_knn_stat(samples_a, samples_b, k=5, permutations=500, seed=0):
    """
    Softmax-weighted kNN label agreement of a pooled two-sample problem
    Parameters:
        samples_a, samples_b: (m_a, D), (m_b, D)
        k: neighbours per point, self excluded
        permutations: label permutations for the p-value
    Returns:
        KnnTestResult(statistic, p_value); the statistic is √n·max(0, agreement - null)
    """
    a = np.atleast_2d(np.asarray(samples_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(samples_b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"samples have dimensions {a.shape[1]} and {b.shape[1]}")
    pooled = np.vstack([a, b])
    n = pooled.shape[0]
    if n < k + 1:
        raise ShapeError(f"smooth kNN needs more than k = {k} points, got {n}")
    labels = np.concatenate([np.zeros(len(a), dtype=int), np.ones(len(b), dtype=int)])

    dist, idx = _neighbours(pooled, k)
    bandwidth = float(np.mean(dist[:, -1]))
    weights = softmax(-dist / (bandwidth if bandwidth > 0 else 1.0), axis=1)

    counts = np.array([len(a), len(b)], dtype=np.float64)
    null = float(np.sum(counts / n * (counts - 1) / (n - 1)))
    excess = _agreement(labels, idx, weights) - null

    rng = np.random.default_rng(seed)
    exceed = 0
    for _ in range(permutations):
        if _agreement(rng.permutation(labels), idx, weights) - null >= excess:
            exceed += 1
    return KnnTestResult(max(0.0, excess) * math.sqrt(n), (1 + exceed) / (permutations + 1))


# -- mutual information -------------------------------------------------------

def _marginal_counts(points, radius):
    tree = cKDTree(points)
    return tree.query_ball_point(points, r=radius, p=np.inf, return_length=True) - 1


def ksg_mi(x_samples, z_samples, k=3, seed=0):
    """KSG estimator #1 of I(x; z) in nats, max-norm neighbourhoods."""
    x = np.asarray(x_samples, dtype=np.float64).reshape(len(x_samples), -1)
    z = np.asarray(z_samples, dtype=np.float64).reshape(len(z_samples), -1)
    if len(x) != len(z):
        raise ShapeError(f"paired samples needed, got {len(x)} and {len(z)}")
    n = len(x)
    if n <= k:
        raise ShapeError(f"KSG needs more than k = {k} samples, got {n}")

    joint = np.hstack([x, z])
    eps = cKDTree(joint).query(joint, k=k + 1, p=np.inf)[0][:, -1]
    if np.any(eps == 0):
        logger.warning("⚠️ duplicate samples give zero KSG radii; jittering by 1e-10")
        rng = np.random.default_rng(seed)
        x = x + 1e-10 * rng.standard_normal(x.shape)
        z = z + 1e-10 * rng.standard_normal(z.shape)
        joint = np.hstack([x, z])
        eps = cKDTree(joint).query(joint, k=k + 1, p=np.inf)[0][:, -1]

    radius = np.nextafter(eps, 0)
    nx = _marginal_counts(x, radius)
    nz = _marginal_counts(z, radius)
    return float(digamma(k) + digamma(n) - np.mean(digamma(nx + 1) + digamma(nz + 1)))


@torch.no_grad()
def average_latent_mi(model, x_samples, noise, k=3):
    """Mean over latent coordinates of I(x; z_i) with z drawn from q(z|x)."""
    if model.is_labeled:
        raise LabError("average_latent_mi expects an unlabeled model")
    x = ad.as_value(x_samples)
    mu, var = model.encoder(x)
    z = reparam_sample(mu, var, noise.normal(*mu.shape)).numpy()
    values = [ksg_mi(x.numpy(), z[:, i], k) for i in range(z.shape[1])]
    return float(np.mean(values)), values


# -- quadrature decomposition -------------------------------------------------

def _require_1d(*models):
    for m in models:
        if m.latent_dim != 1:
            raise QuadratureError(f"quadrature diagnostics need a 1-D latent, got {m.latent_dim}")


def _default_grid(z_grid):
    return QuadratureSpec().grid() if z_grid is None else np.asarray(z_grid, dtype=np.float64)


@torch.no_grad()
def _encoder_density(model, x, z_grid, y=None):
    """Grid-normalized q(z | x) for each row, (M, G)."""
    x = ad.as_value(x)
    labels = model.labels(y) if y is not None else None
    mu, var = model.encoder(x, labels)
    mu, var = mu.numpy()[:, :1], var.numpy()[:, :1]
    log_q = -0.5 * ((z_grid[None, :] - mu) ** 2 / var + np.log(2.0 * math.pi * var))
    q = np.exp(log_q)
    mass = trapezoid(q, z_grid, axis=1)
    return q / mass[:, None], log_q - np.log(mass)[:, None]


def posterior_kl(model, x_samples, z_grid=None):
    """Per-x KL(q_φ(z|x) ‖ p_θ(z|x)) on a latent grid."""
    _require_1d(model)
    if model.is_labeled:
        raise LabError("posterior_kl expects an unlabeled model")
    z_grid = _default_grid(z_grid)
    x = np.atleast_2d(np.asarray(x_samples, dtype=np.float64))
    q, log_q = _encoder_density(model, x, z_grid)
    post = gt_posterior(model, x, z_grid)
    log_p = np.log(np.maximum(post, np.finfo(np.float64).tiny))
    kl = trapezoid(np.where(q > 0, q * (log_q - log_p), 0.0), z_grid, axis=1)
    return np.maximum(kl, 0.0)


def mleo_pmo(model, gt, x_samples, z_grid=None, quad=None):
    """
    MLE objective gap and posterior-matching term
    Returns:
        (mleo, pmo) averaged over ``x_samples``
    """
    _require_1d(model, gt)
    x = np.atleast_2d(np.asarray(x_samples, dtype=np.float64))
    log_true = gt_log_density(gt, x, quad)
    log_model = gt_log_density(model_as_ground_truth(model), x, quad)
    mleo = float(np.mean(log_true - log_model))
    pmo = float(np.mean(posterior_kl(model, x, z_grid)))
    return mleo, pmo


def pmo_split(model, x_samples, z_grid, eta):
    """
    Partition the PMO at a KL threshold η
    Returns:
        SplitReport with Pr[X_Hi] (KL > η), Pr[X_Lo] and the conditional mean KLs
    """
    if eta < 0:
        raise ValueError("η must be nonnegative")
    kl = posterior_kl(model, x_samples, z_grid)
    hi = kl > eta
    pr_hi = float(np.mean(hi))
    d_hi = float(np.mean(kl[hi])) if hi.any() else 0.0
    d_lo = float(np.mean(kl[~hi])) if (~hi).any() else 0.0
    return SplitReport(float(eta), pr_hi, 1.0 - pr_hi, d_hi, d_lo)


def aggregated_posterior(model, x_samples, z_grid=None, y=None):
    """(1/N) Σ_n q_φ(z | x_n) on a 1-D grid."""
    _require_1d(model)
    z_grid = _default_grid(z_grid)
    q, _ = _encoder_density(model, np.atleast_2d(np.asarray(x_samples, dtype=np.float64)), z_grid, y)
    return q.mean(axis=0)


def total_variation(p, q, grid):
    return 0.5 * float(trapezoid(np.abs(np.asarray(p) - np.asarray(q)), np.asarray(grid)))


def prior_mismatch(model, x_samples, z_grid=None):
    """Total variation between the aggregated posterior and N(0, 1)."""
    z_grid = _default_grid(z_grid)
    return total_variation(aggregated_posterior(model, x_samples, z_grid), np.exp(normal_log_pdf(z_grid)), z_grid)


def posterior_mode_count(source, x_samples, z_grid=None):
    """Mean number of local maxima of the exact posterior p(z | x) over the rows of ``x_samples``."""
    post = np.atleast_2d(gt_posterior(source, np.atleast_2d(np.asarray(x_samples, dtype=np.float64)), z_grid))
    return float(np.mean([count_local_maxima(row) for row in post]))


# -- collapse probes ----------------------------------------------------------

def _label_mean(source):
    if isinstance(source, GroundTruthModel):
        if not source.is_labeled:
            raise LabError(f"{source.name} is not label-conditioned")
        return lambda z, y: source.mean(z, np.full(len(z), y))
    if isinstance(source, VaeModel):
        if not source.is_labeled:
            raise LabError("the model is not label-conditioned")
        decoder, encode = source.decoder, source.labels
    elif isinstance(source, MlpDecoder):
        if source.label_dim == 0:
            raise LabError("the decoder is not label-conditioned")
        decoder = source

        def encode(values):
            if decoder.label_dim == 1:
                return values.to(ad.DTYPE).unsqueeze(-1)
            return torch.nn.functional.one_hot(values.long(), decoder.label_dim).to(ad.DTYPE)
    else:
        raise LabError(f"cannot read a label-conditioned mean from {type(source).__name__}")

    def mean(z, y):
        with torch.no_grad():
            labels = encode(torch.full((len(z),), float(y), dtype=ad.DTYPE))
            return decoder(torch.as_tensor(z, dtype=ad.DTYPE), labels).numpy()

    return mean


def functional_collapse_distance(decoder, y_values, z_grid=None):
    """
    Mean distance between the label-conditioned mean maps
    Parameters:
        decoder: label-conditioned VaeModel, MlpDecoder or GroundTruthModel
        y_values: labels compared pairwise
        z_grid: latent values the maps are evaluated on
    """
    mean = _label_mean(decoder)
    z = np.asarray(np.linspace(-3.0, 3.0, 301) if z_grid is None else z_grid, dtype=np.float64).reshape(-1, 1)
    pairs = list(combinations(list(y_values), 2))
    if not pairs:
        raise ValueError("need at least two label values")
    curves = {y: mean(z, y) for y in y_values}
    distances = [np.mean(np.linalg.norm(curves[a] - curves[b], axis=1)) for a, b in pairs]
    return float(np.mean(distances))


@torch.no_grad()
def posterior_collapse_probe(model, x_samples, y=None):
    """Mean analytic KL(q(z|x) ‖ N(0, I)); near zero means the latents carry nothing."""
    x = ad.as_value(x_samples)
    mu, var = model.encoder(x, model.labels(y) if y is not None else None)
    return float(kl_diag_gaussian_to_std(mu, var).mean())


def entangling_rotation(A, lam, sigma_sq):
    """
    Rotate a linear decoder A into A·R with R = (ΣVᵀ)⁻¹(Λ - σ²I)^{1/2}
    The marginal N(b, σ²I + A′A′ᵀ) is preserved when Λ = Σ² + σ²I; for any
    other Λ the covariance deviation is reported, not corrected.
    Returns:
        RotationResult(rotated A′, max |A′A′ᵀ - AAᵀ|)
    """
    A = np.asarray(A, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    lam = np.diag(lam) if lam.ndim == 2 else lam
    u, s, vt = np.linalg.svd(A, full_matrices=False)
    if s.min() <= 1e-12 * max(1.0, s.max()):
        raise ValueError("A must have full column rank")
    if lam.shape != s.shape:
        raise ShapeError(f"Λ has {lam.shape[0]} entries, A has {s.shape[0]} singular values")
    if np.any(lam < sigma_sq):
        raise ConfigError("Λ must dominate σ²I", key="lambda")
    rotation = np.linalg.solve(np.diag(s) @ vt, np.diag(np.sqrt(lam - sigma_sq)))
    rotated = A @ rotation
    deviation = float(np.max(np.abs(rotated @ rotated.T - A @ A.T)))
    return RotationResult(rotated, deviation)


# -- data checks --------------------------------------------------------------

@torch.no_grad()
def manifold_residual_normality(model, x_samples, z_grid=None):
    """
    D'Agostino-Pearson normality of residuals to the nearest point of the
    learned (or true) manifold
    Returns:
        DataFrame with one row per data dimension: dim, statistic, p_value
    """
    z = np.asarray(np.linspace(-4.0, 4.0, 4001) if z_grid is None else z_grid, dtype=np.float64).reshape(-1, 1)
    if isinstance(model, GroundTruthModel):
        curve = model.mean(z) if not model.is_labeled else None
    else:
        with torch.no_grad():
            curve = None if model.is_labeled else model.decoder(torch.as_tensor(z, dtype=ad.DTYPE)).numpy()
    if curve is None:
        raise LabError("residual normality is defined for unlabeled manifolds")
    x = np.atleast_2d(np.asarray(x_samples, dtype=np.float64))
    nearest = cKDTree(curve).query(x)[1]
    residual = x - curve[nearest]
    result = stats.normaltest(residual, axis=0)
    return pd.DataFrame(
        {"dim": np.arange(x.shape[1]), "statistic": np.atleast_1d(result.statistic),
         "p_value": np.atleast_1d(result.pvalue)}
    )


def label_separability(x, y, test_fraction=0.3, seed=0):
    """
    How well x predicts a discrete y
    Returns:
        dict with held-out ``accuracy`` and mean predictive ``entropy`` E[H[p(y|x)]]
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if np.any(y != np.round(y)):
        raise ValueError("label_separability needs discrete labels")
    x_fit, x_held, y_fit, y_held = train_test_split(x, y.astype(int), test_size=test_fraction, random_state=seed,
                                                    stratify=y.astype(int))
    classifier = LogisticRegression(max_iter=1000).fit(x_fit, y_fit)
    proba = np.clip(classifier.predict_proba(x_held), 1e-300, 1.0)
    return {
        "accuracy": float(classifier.score(x_held, y_held)),
        "entropy": float(np.mean(-np.sum(proba * np.log(proba), axis=1))),
    }
