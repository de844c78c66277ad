"""
Ground-truth generators, exact densities by quadrature, splits and CSV I/O.

Every generator is a ``GroundTruthModel``: an analytic prior, a deterministic
mean map f_GT(z[, y]) and per-dimension Gaussian noise. Densities and
posteriors are computed on a latent grid in log space so that far-away x do
not underflow.
"""

import math
import os
import re
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, Optional

import numpy as np
import pandas as pd
import torch
from loguru import logger
from scipy.special import logsumexp

from . import autodiff as ad
from .config import ArchitectureConfig, QuadratureSpec
from .errors import (
    DatasetFormatError,
    QuadratureError,
    ShapeError,
    SurrogateFitError,
    UnknownKindError,
)
from .models import A_GT, B_GT, SIGMA_SQ_GT, MlpDecoder, encode_labels
from .utils import GENERATOR_NAMES, SPLIT_NAMES, beta_ppf, ensure_parent, normal_cdf

DEFAULT_EMBEDDING = np.array(
    [[1.0, 0.0, 0.5, 0.2, -0.8], [0.0, 1.0, -0.5, 0.3, -0.1]], dtype=np.float64
)

LABEL_FRACTION = 0.1
SPLIT_PROPORTIONS = (5, 2, 2)

NOISE_VARIANCE = {
    "figure8": 0.02,
    "circle": 0.01,
    "absval": 0.01,
    "clusters": 0.2,
    "spiral_dots": 0.01,
    "stepfn": 0.01,
    "quad1": 0.001,
    "quad2": 0.001,
    "quad3": 0.001,
    "ss_discrete": 0.01,
    "ss_continuous": 0.01,
    "gaussian": 1.0,
}

LOG_2PI = math.log(2.0 * math.pi)


# -- mean maps ----------------------------------------------------------------

def _col(z):
    z = np.asarray(z, dtype=np.float64)
    return z[:, 0] if z.ndim == 2 else z


def figure8_mean(z, y=None):
    u = (0.6 + 1.8 * normal_cdf(_col(z))) * np.pi
    denom = np.sin(u) ** 2 + 1.0
    return np.stack([math.sqrt(2.0) / 2.0 * np.cos(u) / denom, math.sqrt(2.0) * np.cos(u) * np.sin(u) / denom], -1)


def circle_mean(z, y=None):
    angle = 2.0 * np.pi * normal_cdf(_col(z))
    return np.stack([np.cos(angle), np.sin(angle)], -1)


def absval_mean(z, y=None):
    phi = np.abs(normal_cdf(_col(z)))
    return np.stack([phi, phi], -1)


def _stepped_angle(z, scale, amplitude, period):
    u = scale * np.pi / (1.0 + np.exp(-0.5 * np.pi * _col(z)))
    step = np.floor(u / 2.0)
    return amplitude * np.tanh(10.0 * u - 20.0 * step - 10.0) + period * step + amplitude


def clusters_mean(z, y=None):
    t = _stepped_angle(z, 2.0, 2.0, 4.0)
    return np.stack([np.cos(t), np.sin(t)], -1)


def spiral_dots_mean(z, y=None):
    t = _stepped_angle(z, 4.0, 1.0, 2.0)
    return np.stack([t * np.cos(t), t * np.sin(t)], -1)


def stepfn_mean(z, y=None):
    return np.floor(_col(z))[:, None]


def quad1_mean(z, y=None):
    return ((_col(z) - 0.5) ** 2)[:, None]


def quad2_mean(z, y=None):
    return (0.25 * _col(z) ** 2)[:, None]


def quad3_mean(z, y=None):
    z = _col(z)
    return np.where(z < 0.5, (2.0 * z - 0.5) ** 2, (2.0 * z - 1.5) ** 2)[:, None]


def gaussian_mean(z, y=None):
    return np.zeros((_col(z).shape[0], 2))


def linear_mean(weights, z, y=None):
    return np.asarray(z, dtype=np.float64) @ weights.T


def _semicircle(angle):
    return np.stack([np.cos(angle), np.sin(angle)], -1)


def ss_discrete_mean(z, y):
    phi = normal_cdf(_col(z))
    y = np.broadcast_to(np.asarray(y, dtype=np.float64), phi.shape)
    angle = np.where(y < 0.5, np.pi * np.sqrt(phi), np.pi * phi**3)
    return _semicircle(angle)


def semicircle_mix(y):
    """h(y) = Beta(0.2, 0.2) inverse CDF at Φ(y)."""
    return beta_ppf(normal_cdf(y), 0.2, 0.2)


def ss_continuous_mean(z, y):
    phi = normal_cdf(_col(z))
    h = np.broadcast_to(semicircle_mix(np.asarray(y, dtype=np.float64)), phi.shape)
    return _semicircle(h * np.pi * np.sqrt(phi) + (1.0 - h) * np.pi * phi**3)


# -- types --------------------------------------------------------------------

@dataclass
class GroundTruthModel:
    """Prior, mean map and noise of a synthetic generative process."""

    name: str
    latent_dim: int
    data_dim: int
    mean_fn: Callable
    noise_variance: np.ndarray
    prior: str = "normal"
    label_kind: Optional[str] = None
    n_classes: int = 2
    embedding: Optional[np.ndarray] = None

    def __post_init__(self):
        self.noise_variance = np.broadcast_to(
            np.asarray(self.noise_variance, dtype=np.float64), (self.data_dim,)
        ).copy()
        if (self.noise_variance <= 0).any():
            raise ValueError(f"{self.name}: noise variance must be positive")

    @property
    def is_labeled(self):
        return self.label_kind is not None

    def mean(self, z, y=None):
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            z = z[:, None]
        if self.is_labeled and y is None:
            raise ShapeError(f"{self.name}: mean map needs labels")
        out = self.mean_fn(z, y) if self.is_labeled else self.mean_fn(z)
        if self.embedding is not None:
            out = out @ self.embedding
        return out

    def sample_latents(self, n, rng):
        if self.prior == "uniform":
            return rng.uniform(0.0, 1.0, size=(n, self.latent_dim))
        return rng.standard_normal((n, self.latent_dim))

    def sample_labels(self, n, rng):
        if self.label_kind == "discrete":
            return rng.integers(0, self.n_classes, size=n).astype(np.float64)
        if self.label_kind == "continuous":
            return rng.standard_normal(n)
        return None

    def sample(self, n, rng):
        z = self.sample_latents(n, rng)
        y = self.sample_labels(n, rng)
        eps = rng.standard_normal((n, self.data_dim)) * np.sqrt(self.noise_variance)
        return self.mean(z, y) + eps, z, y

    def sample_given_y(self, y, n, rng):
        z = self.sample_latents(n, rng)
        labels = np.full(n, float(y))
        eps = rng.standard_normal((n, self.data_dim)) * np.sqrt(self.noise_variance)
        return self.mean(z, labels) + eps

    def log_prior(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.prior == "uniform":
            inside = np.all((z >= 0.0) & (z <= 1.0), axis=-1) if z.ndim > 1 else (z >= 0.0) & (z <= 1.0)
            return np.where(inside, 0.0, -np.inf)
        sq = (z**2).sum(-1) if z.ndim > 1 else z**2
        dim = z.shape[-1] if z.ndim > 1 else 1
        return -0.5 * sq - 0.5 * dim * LOG_2PI

    def log_likelihood(self, x, mean):
        """log N(x; mean, σ²I) for every (x row, mean row) pair -> (M, G)."""
        x = np.asarray(x, dtype=np.float64)
        var = self.noise_variance
        sq = ((x[:, None, :] - mean[None, :, :]) ** 2 / var).sum(-1)
        return -0.5 * (sq + np.log(var).sum() + self.data_dim * LOG_2PI)


@dataclass
class LabeledDataset:
    x: np.ndarray
    z_true: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    observed_mask: Optional[np.ndarray] = None
    split: str = "train"
    generator: str = ""
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        n = self.x.shape[0]
        if self.observed_mask is None or self.y is None:
            self.observed_mask = np.zeros(n, dtype=bool)
        self.observed_mask = np.asarray(self.observed_mask, dtype=bool)
        for name in ("z_true", "y", "observed_mask"):
            value = getattr(self, name)
            if value is not None and len(value) != n:
                raise ShapeError(f"dataset field {name} has {len(value)} rows, x has {n}")

    def __len__(self):
        return self.x.shape[0]

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def data_dim(self):
        return self.x.shape[1]

    @property
    def n_observed(self):
        return int(self.observed_mask.sum())

    def subset(self, index, split=None):
        index = np.asarray(index)
        return LabeledDataset(
            x=self.x[index],
            z_true=None if self.z_true is None else self.z_true[index],
            y=None if self.y is None else self.y[index],
            observed_mask=self.observed_mask[index],
            split=split or self.split,
            generator=self.generator,
            seed=self.seed,
        )

    def tensor(self):
        return torch.as_tensor(self.x, dtype=ad.DTYPE)


# -- generators ---------------------------------------------------------------

def linear_ground_truth(weights, noise_variance, name="linear"):
    """Conjugate linear-Gaussian model x = W z + ε with z ~ N(0, I)."""
    w = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    gt = GroundTruthModel(name, w.shape[1], w.shape[0], partial(linear_mean, w), noise_variance)
    gt.weights = w
    return gt


def _linear_cholesky_gt():
    a = np.asarray(A_GT)
    c = np.linalg.cholesky(a @ a.T + np.diag(B_GT))
    gt = linear_ground_truth(c, SIGMA_SQ_GT - np.asarray(B_GT), name="linear_cholesky")
    gt.cholesky = c
    return gt


_MEANS = {
    "figure8": (figure8_mean, 2, "normal", None),
    "circle": (circle_mean, 2, "normal", None),
    "absval": (absval_mean, 2, "normal", None),
    "clusters": (clusters_mean, 2, "normal", None),
    "spiral_dots": (spiral_dots_mean, 2, "normal", None),
    "stepfn": (stepfn_mean, 1, "normal", None),
    "quad1": (quad1_mean, 1, "uniform", None),
    "quad2": (quad2_mean, 1, "uniform", None),
    "quad3": (quad3_mean, 1, "uniform", None),
    "ss_discrete": (ss_discrete_mean, 2, "normal", "discrete"),
    "ss_continuous": (ss_continuous_mean, 2, "normal", "continuous"),
    "gaussian": (gaussian_mean, 2, "normal", None),
}


def ground_truth(kind, noise_variance=None):
    """The analytic ``GroundTruthModel`` of a named generator."""
    if kind not in GENERATOR_NAMES:
        raise UnknownKindError(f"unknown generator '{kind}', expected one of {', '.join(GENERATOR_NAMES)}")
    if kind == "linear_cholesky":
        gt = _linear_cholesky_gt()
        if noise_variance is not None:
            gt.noise_variance = np.broadcast_to(np.asarray(noise_variance, dtype=np.float64), (2,)).copy()
        return gt
    fn, data_dim, prior, label_kind = _MEANS[kind]
    variance = NOISE_VARIANCE[kind] if noise_variance is None else noise_variance
    return GroundTruthModel(kind, 1, data_dim, fn, variance, prior=prior, label_kind=label_kind)


def _observed_mask(n, has_labels, rng, fraction=LABEL_FRACTION):
    mask = np.zeros(n, dtype=bool)
    if has_labels:
        mask[rng.permutation(n)[: math.ceil(fraction * n)]] = True
    return mask


def generate(kind, n, seed, noise_variance=None, label_fraction=LABEL_FRACTION):
    """
    Sample a dataset from a named generator
    Parameters:
        kind: one of ``GENERATOR_NAMES``
        n: number of rows
        seed: integer seed; identical arguments give bit-identical data
        noise_variance: optional override of the generator's σ²
    Returns:
        (GroundTruthModel, LabeledDataset)
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    gt = ground_truth(kind, noise_variance)
    rng = np.random.default_rng(seed)
    x, z, y = gt.sample(n, rng)
    mask = _observed_mask(n, y is not None, rng, label_fraction)
    return gt, LabeledDataset(x, z, y, mask, split="train", generator=kind, seed=seed)


def split_sizes(n, proportions=SPLIT_PROPORTIONS):
    total = float(sum(proportions))
    first = int(math.floor(n * proportions[0] / total))
    second = int(math.floor(n * proportions[1] / total))
    return first, second, n - first - second


def make_splits(dataset, sizes=None, seed=None, label_fraction=LABEL_FRACTION):
    """
    Cut a dataset into train/validation/test, redrawing the label mask per split
    Returns:
        dict split name -> LabeledDataset
    """
    sizes = tuple(sizes) if sizes is not None else split_sizes(dataset.n)
    if sum(sizes) != dataset.n:
        sizes = split_sizes(dataset.n, sizes)
    seed = dataset.seed if seed is None else seed
    rng = np.random.default_rng([0 if seed is None else seed, 7919])
    out = {}
    start = 0
    for name, size in zip(SPLIT_NAMES, sizes):
        part = dataset.subset(np.arange(start, start + size), split=name)
        part.observed_mask = _observed_mask(size, part.y is not None, rng, label_fraction)
        out[name] = part
        start += size
    return out


def generate_splits(kind, seed, sizes=(5000, 2000, 2000), noise_variance=None):
    gt, data = generate(kind, sum(sizes), seed, noise_variance)
    return gt, make_splits(data, sizes, seed)


def embed_5d(source, A=DEFAULT_EMBEDDING, gt=None, seed=0):
    """
    Lift a 2-D generator (or a dataset drawn from one) into 5-D
    Parameters:
        source: GroundTruthModel, or LabeledDataset with z_true
        A: 2×5 embedding, full row rank
        gt: the source generator, required when ``source`` is a dataset
        seed: noise seed for the lifted dataset
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != 2:
        raise ShapeError(f"embedding must be 2×D, got {A.shape}")
    if np.linalg.matrix_rank(A) < 2:
        raise ShapeError("embedding matrix is rank-deficient")
    if isinstance(source, GroundTruthModel):
        if source.data_dim != 2 or source.embedding is not None:
            raise ShapeError(f"{source.name} is not a 2-D source")
        variance = float(source.noise_variance[0])
        if not np.allclose(source.noise_variance, variance):
            logger.warning(f"⚠️ {source.name} noise is not isotropic; lifting with σ² = {variance}")
        return replace(source, name=f"{source.name}_5d", data_dim=A.shape[1],
                       noise_variance=np.full(A.shape[1], variance), embedding=A)
    if gt is None or source.z_true is None:
        raise ShapeError("lifting a dataset needs its generator and true latents")
    lifted = embed_5d(gt, A)
    rng = np.random.default_rng([seed, 5])
    x = lifted.mean(source.z_true, source.y)
    x = x + rng.standard_normal(x.shape) * np.sqrt(lifted.noise_variance)
    return LabeledDataset(x, source.z_true, source.y, source.observed_mask, source.split,
                          f"{source.generator}_5d", source.seed)


# -- quadrature ---------------------------------------------------------------

def trapezoid_log_weights(grid):
    grid = np.asarray(grid, dtype=np.float64)
    w = np.zeros_like(grid)
    dx = np.diff(grid)
    w[1:] += dx / 2.0
    w[:-1] += dx / 2.0
    with np.errstate(divide="ignore"):
        return np.log(w)


def _latent_grid(gt, quad, points=None):
    return quad.grid(gt.prior, points)


def _chunks(n, size):
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def _label_grid(gt, quad):
    """(label values, log prior mass) for marginalizing labels."""
    if gt.label_kind == "discrete":
        return np.arange(gt.n_classes, dtype=np.float64), np.full(gt.n_classes, -math.log(gt.n_classes))
    y = np.linspace(quad.lower, quad.upper, quad.points_2d)
    return y, gt.log_prior(y) + trapezoid_log_weights(y)


def gt_log_density(gt, x, quad=None, max_cells=2_000_000):
    """log p(x) by composite trapezoid quadrature over the latent (and label)."""
    quad = quad or QuadratureSpec()
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != gt.data_dim:
        raise ShapeError(f"x has dimension {x.shape[1]}, {gt.name} has {gt.data_dim}")

    if gt.latent_dim == 1 and gt.label_kind == "continuous":
        z = _latent_grid(gt, quad, quad.points_2d)
        labels, log_py = _label_grid(gt, quad)
        zz, yy = np.meshgrid(z, labels, indexing="ij")
        means = gt.mean(zz.reshape(-1, 1), yy.reshape(-1))
        log_w = ((gt.log_prior(z) + trapezoid_log_weights(z))[:, None] + log_py[None, :]).reshape(-1)
    elif gt.latent_dim == 1:
        z = _latent_grid(gt, quad)
        base = gt.log_prior(z) + trapezoid_log_weights(z)
        if gt.is_labeled:
            labels, log_py = _label_grid(gt, quad)
            means = np.concatenate([gt.mean(z[:, None], np.full(z.shape, y)) for y in labels])
            log_w = np.concatenate([base + lp for lp in log_py])
        else:
            means = gt.mean(z[:, None])
            log_w = base
    elif gt.latent_dim == 2 and not gt.is_labeled:
        z = _latent_grid(gt, quad, quad.points_2d)
        z1, z2 = np.meshgrid(z, z, indexing="ij")
        lw = gt.log_prior(z[:, None]) + trapezoid_log_weights(z)
        log_w = (lw[:, None] + lw[None, :]).reshape(-1)
        means = gt.mean(np.stack([z1.reshape(-1), z2.reshape(-1)], -1))
    else:
        raise QuadratureError(f"quadrature supports latent dimension 1 or 2, {gt.name} has {gt.latent_dim}")

    chunk = max(1, max_cells // log_w.size)
    out = np.empty(x.shape[0])
    for rows in _chunks(x.shape[0], chunk):
        out[rows] = logsumexp(gt.log_likelihood(x[rows], means) + log_w[None, :], axis=1)
    return out


def gt_density(gt, x, quad=None):
    return np.exp(gt_log_density(gt, x, quad))


def _log_likelihood_on_grid(gt, x, z_grid, quad, max_cells=2_000_000):
    """log p(x | z) on the grid, labels marginalized -> (M, G)."""
    if not gt.is_labeled:
        label_means, log_py = [gt.mean(z_grid[:, None])], np.zeros(1)
    else:
        if gt.label_kind == "continuous":
            quad = quad.model_copy(update={"points_2d": 801})
        labels, log_py = _label_grid(gt, quad)
        label_means = [gt.mean(z_grid[:, None], np.full(z_grid.shape, y)) for y in labels]
    out = np.empty((x.shape[0], z_grid.size))
    chunk = max(1, max_cells // (z_grid.size * len(label_means)))
    for rows in _chunks(x.shape[0], chunk):
        terms = np.stack([gt.log_likelihood(x[rows], m) + lp for m, lp in zip(label_means, log_py)])
        out[rows] = logsumexp(terms, axis=0)
    return out


def gt_posterior(gt_or_model, x, z_grid=None, quad=None):
    """
    Normalized posterior p(z | x) on a 1-D latent grid
    Parameters:
        gt_or_model: GroundTruthModel or a trained VaeModel
        x: one observation (D,) or a batch (M, D)
        z_grid: sorted grid; defaults to the quadrature grid of the prior
    Returns:
        density values, (G,) for one x or (M, G) for a batch
    """
    gt = as_ground_truth(gt_or_model)
    quad = quad or QuadratureSpec()
    if gt.latent_dim != 1:
        raise QuadratureError(f"posterior on a grid needs a 1-D latent, {gt.name} has {gt.latent_dim}")
    z_grid = _latent_grid(gt, quad) if z_grid is None else np.asarray(z_grid, dtype=np.float64)
    if np.any(np.diff(z_grid) <= 0):
        raise ValueError("z_grid must be strictly increasing")
    single = np.ndim(x) == 1
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    log_joint = _log_likelihood_on_grid(gt, x, z_grid, quad) + gt.log_prior(z_grid)[None, :]
    log_norm = logsumexp(log_joint + trapezoid_log_weights(z_grid)[None, :], axis=1)
    if not np.all(np.isfinite(log_norm)):
        bad = int(np.flatnonzero(~np.isfinite(log_norm))[0])
        raise QuadratureError(f"posterior mass vanished on the grid for x[{bad}] = {x[bad].tolist()}")
    post = np.exp(log_joint - log_norm[:, None])
    return post[0] if single else post


def as_ground_truth(obj):
    if isinstance(obj, GroundTruthModel):
        return obj
    return model_as_ground_truth(obj)


def model_as_ground_truth(model, name="model"):
    """Wrap a trained ``VaeModel`` so quadrature routines can treat it as a generator."""
    decoder = model.decoder

    def mean_fn(z, y=None):
        with torch.no_grad():
            labels = None
            if model.is_labeled:
                raw = np.asarray(y, dtype=np.float64)
                labels = encode_labels(torch.as_tensor(raw), model.label_kind, model.arch.n_classes)
            return decoder(torch.as_tensor(z, dtype=ad.DTYPE), labels).numpy()

    return GroundTruthModel(
        name,
        model.latent_dim,
        model.data_dim,
        mean_fn,
        decoder.noise_variance.detach().numpy(),
        label_kind=model.label_kind,
        n_classes=model.arch.n_classes,
    )


# -- surrogate ----------------------------------------------------------------

def _surrogate_inputs(gt, n, rng):
    z = gt.sample_latents(n, rng)
    y = gt.sample_labels(n, rng)
    return z, y, gt.mean(z, y)


def fit_surrogate(gt, architecture=None, tolerance=1e-4, n_samples=20000, max_steps=30000,
                  batch_size=256, learning_rate=1e-3, seed=0, check_every=500):
    """
    Supervised regression of a decoder network onto f_GT
    Parameters:
        gt: GroundTruthModel
        architecture: ArchitectureConfig; hidden=() gives a linear map fitted by least squares
        tolerance: held-out MSE to reach
    Returns:
        MlpDecoder with the generator's noise variance
    Raises:
        SurrogateFitError when the budget runs out first
    """
    arch = architecture or ArchitectureConfig(latent_dim=gt.latent_dim, data_dim=gt.data_dim,
                                              label_kind=gt.label_kind, n_classes=gt.n_classes)
    label_dim = arch.label_dim if gt.is_labeled else 0
    decoder = None
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        decoder = MlpDecoder(gt.latent_dim, gt.data_dim, arch.hidden, label_dim=label_dim, slope=arch.leaky_slope,
                             noise_variance=gt.noise_variance, learn_noise=False, shared_noise=arch.shared_noise)

    rng = np.random.default_rng([seed, 31])
    z, y, target = _surrogate_inputs(gt, n_samples, rng)
    n_fit = int(0.8 * n_samples)
    labels = encode_labels(torch.as_tensor(y), gt.label_kind, gt.n_classes) if gt.is_labeled else None
    z_t = torch.as_tensor(z, dtype=ad.DTYPE)
    target_t = torch.as_tensor(target, dtype=ad.DTYPE)

    def held_out_mse():
        with torch.no_grad():
            pred = decoder(z_t[n_fit:], None if labels is None else labels[n_fit:])
            return float(((pred - target_t[n_fit:]) ** 2).mean())

    if len(arch.hidden) == 0:
        inputs = z_t if labels is None else torch.cat([z_t, labels], -1)
        design = torch.cat([inputs[:n_fit], torch.ones(n_fit, 1, dtype=ad.DTYPE)], -1)
        solution = torch.linalg.lstsq(design, target_t[:n_fit]).solution
        layer = decoder.net.layers[0]
        with torch.no_grad():
            layer.weight.copy_(solution[:-1].T)
            layer.bias.copy_(solution[-1])
        mse = held_out_mse()
        if mse >= tolerance:
            raise SurrogateFitError(f"linear surrogate for {gt.name} missed tolerance {tolerance}", mse)
        return decoder

    optimizer = torch.optim.Adam(decoder.net.parameters(), lr=learning_rate)
    scheduler = torch.optim.lr_scheduler.StepLR(optimizer, step_size=max(1, max_steps // 4), gamma=0.3)
    noise = torch.Generator().manual_seed(seed)
    best = math.inf
    for step in range(1, max_steps + 1):
        idx = torch.randint(0, n_fit, (batch_size,), generator=noise)
        pred = decoder(z_t[idx], None if labels is None else labels[idx])
        loss = ((pred - target_t[idx]) ** 2).mean()
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        scheduler.step()
        if step % check_every == 0:
            best = min(best, held_out_mse())
            if best < tolerance:
                logger.debug(f"surrogate for {gt.name} reached MSE {best:.2e} after {step} steps")
                return decoder
    raise SurrogateFitError(f"surrogate for {gt.name} missed tolerance {tolerance} in {max_steps} steps", best)


# -- CSV ----------------------------------------------------------------------

_X_COL = re.compile(r"^x(\d+)$")
_Z_COL = re.compile(r"^z(\d+)$")


def save_csv(dataset, path):
    ensure_parent(path)
    frame = pd.DataFrame(dataset.x, columns=[f"x{i}" for i in range(dataset.data_dim)])
    if dataset.z_true is not None:
        for i in range(dataset.z_true.shape[1]):
            frame[f"z{i}"] = dataset.z_true[:, i]
    if dataset.y is not None:
        frame["y"] = np.asarray(dataset.y, dtype=np.float64)
        frame["y_observed"] = dataset.observed_mask.astype(int)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def _split_from_name(path):
    stem = os.path.splitext(os.path.basename(path))[0]
    for name in SPLIT_NAMES:
        if stem.endswith(f"_{name}"):
            return name, stem[: -len(name) - 1]
    return "train", stem


def load_csv(path):
    try:
        frame = pd.read_csv(path, dtype=np.float64)
    except pd.errors.ParserError as exc:
        raise DatasetFormatError(f"{path}: ragged rows ({exc})") from exc
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: non-numeric content ({exc})") from exc
    columns = list(frame.columns)
    x_cols = [c for c in columns if _X_COL.match(c)]
    z_cols = [c for c in columns if _Z_COL.match(c)]
    extra = [c for c in columns if c not in x_cols + z_cols + ["y", "y_observed"]]
    if not x_cols or extra or x_cols != [f"x{i}" for i in range(len(x_cols))] \
            or z_cols != [f"z{i}" for i in range(len(z_cols))] or ("y_observed" in columns) != ("y" in columns):
        raise DatasetFormatError(f"{path}: malformed header {columns}")
    if frame.isna().to_numpy().any():
        raise DatasetFormatError(f"{path}: ragged rows (missing fields)")
    split, generator = _split_from_name(path)
    y = frame["y"].to_numpy() if "y" in columns else None
    mask = frame["y_observed"].to_numpy().astype(bool) if "y" in columns else None
    return LabeledDataset(
        x=frame[x_cols].to_numpy(),
        z_true=frame[z_cols].to_numpy() if z_cols else None,
        y=y,
        observed_mask=mask,
        split=split,
        generator=generator,
    )
