"""
Generative and inference networks.

``VaeModel`` bundles a decoder (``MlpDecoder`` or ``LinearCholeskyDecoder``),
a mean-field Gaussian encoder and, for semi-supervised models, a
``Discriminator`` q(y|x). Forward passes are written in the primitives of
``app.core.autodiff`` so their traces are inspectable.
"""

import math
import pickle
from collections import OrderedDict

import numpy as np
import torch
import torch.nn as nn
from loguru import logger

from . import autodiff as ad
from .config import LEAKY_SLOPE, ArchitectureConfig
from .errors import ConfigError, LabError, ShapeError

DTYPE = ad.DTYPE

LOG_VAR_MIN = math.log(1e-8)
LOG_VAR_MAX = math.log(1e4)

A_GT = ((0.75, 0.25), (1.5, -1.0))
B_GT = (0.006, 0.006)
SIGMA_SQ_GT = 0.01

CHECKPOINT_FORMAT = "vaelab-checkpoint/1"


class NoiseSource:
    """Seeded stream of unit noise; callers own their randomness through it."""

    def __init__(self, seed=0):
        self.seed = int(seed)
        self.generator = torch.Generator().manual_seed(self.seed)

    def normal(self, *shape):
        return torch.randn(*shape, generator=self.generator, dtype=DTYPE)

    def uniform(self, *shape):
        u = torch.rand(*shape, generator=self.generator, dtype=DTYPE)
        return u.clamp_(min=np.finfo(np.float64).tiny, max=1.0 - 2.0**-53)

    def permutation(self, n):
        return torch.randperm(n, generator=self.generator)

    def spawn(self, index):
        return NoiseSource(self.seed * 1_000_003 + int(index) + 1)


class MLP(nn.Module):
    def __init__(self, in_dim, out_dim, hidden=(50, 50, 50), slope=LEAKY_SLOPE):
        super().__init__()
        dims = [in_dim, *hidden, out_dim]
        self.layers = nn.ModuleList(nn.Linear(a, b, dtype=DTYPE) for a, b in zip(dims[:-1], dims[1:]))
        self.slope = slope
        self.in_dim = in_dim
        self.out_dim = out_dim

    def forward(self, x):
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = ad.affine(x, layer.weight, layer.bias)
            if i < last:
                x = ad.leaky_relu(x, self.slope)
        return x

    @torch.no_grad()
    def zero_(self):
        for layer in self.layers:
            layer.weight.zero_()
            layer.bias.zero_()
        return self


def encode_labels(y, label_kind, n_classes=2):
    """Decoder/encoder input encoding of labels: one-hot for discrete, a column for continuous."""
    if label_kind is None:
        return None
    y = torch.as_tensor(y)
    if label_kind == "discrete":
        if y.dtype.is_floating_point and y.dim() >= 1 and y.shape[-1] == n_classes and y.dim() == 2:
            return y.to(DTYPE)
        idx = y.long()
        if ((idx < 0) | (idx >= n_classes)).any():
            raise ValueError(f"discrete labels must lie in 0..{n_classes - 1}")
        return nn.functional.one_hot(idx, n_classes).to(DTYPE)
    y = y.to(DTYPE)
    return y.unsqueeze(-1) if y.dim() == 1 or y.shape[-1] != 1 else y


def _with_label(x, y, label_dim, who):
    if label_dim == 0:
        if y is not None:
            raise ShapeError(f"{who} is not label-conditioned but a label was given")
        return x
    if y is None:
        raise ShapeError(f"{who} is label-conditioned and needs y")
    if y.shape[:-1] != x.shape[:-1]:
        y = y.expand(*x.shape[:-1], y.shape[-1])
    return torch.cat([x, y], dim=-1)


class MlpDecoder(nn.Module):
    """f_θ(z[, y]) with per-dimension (or shared) observation noise."""

    def __init__(
        self,
        latent_dim,
        data_dim,
        hidden=(50, 50, 50),
        label_dim=0,
        slope=LEAKY_SLOPE,
        noise_variance=SIGMA_SQ_GT,
        learn_noise=False,
        shared_noise=False,
    ):
        super().__init__()
        self.latent_dim = latent_dim
        self.data_dim = data_dim
        self.label_dim = label_dim
        self.hidden = tuple(hidden)
        self.shared_noise = shared_noise
        self.net = MLP(latent_dim + label_dim, data_dim, hidden, slope)
        width = 1 if shared_noise else data_dim
        self.noise_log_var = nn.Parameter(torch.zeros(width, dtype=DTYPE), requires_grad=learn_noise)
        self.set_noise_variance(noise_variance)

    def forward(self, z, y=None):
        if z.shape[-1] != self.latent_dim:
            raise ShapeError(f"decode: latent of shape {tuple(z.shape)}, expected last dimension {self.latent_dim}")
        return self.net(_with_label(z, y, self.label_dim, "decoder"))

    @property
    def log_var(self):
        return self.noise_log_var.expand(self.data_dim)

    @property
    def noise_variance(self):
        return torch.exp(self.log_var)

    @torch.no_grad()
    def set_noise_variance(self, values):
        values = torch.as_tensor(values, dtype=DTYPE).reshape(-1)
        if (values <= 0).any():
            raise ValueError("noise variance must be positive")
        if self.shared_noise:
            values = values.mean().reshape(1)
        elif values.numel() == 1:
            values = values.expand(self.data_dim)
        self.noise_log_var.copy_(torch.log(values))

    def set_noise_trainable(self, flag):
        self.noise_log_var.requires_grad_(bool(flag))


class LinearCholeskyDecoder(nn.Module):
    """Mean z -> chol(AAᵀ + B) z with fixed noise covariance σ²I - B."""

    def __init__(self, a=A_GT, b_diag=B_GT, sigma_sq=SIGMA_SQ_GT):
        super().__init__()
        a = torch.as_tensor(a, dtype=DTYPE)
        if a.dim() != 2 or a.shape[0] != a.shape[1]:
            raise ShapeError(f"LinearCholeskyDecoder needs a square A, got {tuple(a.shape)}")
        self.A = nn.Parameter(a.clone())
        self.register_buffer("B", torch.diag(torch.as_tensor(b_diag, dtype=DTYPE)))
        psi = sigma_sq - torch.diagonal(self.B)
        if (psi <= 0).any():
            raise ConfigError("σ²I - B must be positive definite")
        self.register_buffer("noise_log_var", torch.log(psi))
        self.sigma_sq = float(sigma_sq)
        self.latent_dim = self.data_dim = a.shape[0]
        self.label_dim = 0
        self.shared_noise = False

    def cholesky(self):
        return torch.linalg.cholesky(self.A @ self.A.T + self.B)

    def forward(self, z, y=None):
        if y is not None:
            raise ShapeError("LinearCholeskyDecoder is not label-conditioned")
        if z.shape[-1] != self.latent_dim:
            raise ShapeError(f"decode: latent of shape {tuple(z.shape)}, expected last dimension {self.latent_dim}")
        return ad.affine(z, self.cholesky())

    @property
    def log_var(self):
        return self.noise_log_var

    @property
    def noise_variance(self):
        return torch.exp(self.noise_log_var)

    @torch.no_grad()
    def set_noise_variance(self, values):
        values = torch.as_tensor(values, dtype=DTYPE).reshape(-1).expand(self.data_dim)
        if (values <= 0).any():
            raise ValueError("noise variance must be positive")
        self.noise_log_var.copy_(torch.log(values))

    def set_noise_trainable(self, flag):
        if flag:
            logger.warning("⚠️ the linear Cholesky decoder keeps its noise fixed; ignoring joint noise training")


class MfgEncoder(nn.Module):
    """x[, y] -> (μ, σ²) of a mean-field Gaussian q(z|x)."""

    def __init__(self, data_dim, latent_dim, hidden=(50, 50, 50), label_dim=0, slope=LEAKY_SLOPE):
        super().__init__()
        self.data_dim = data_dim
        self.latent_dim = latent_dim
        self.label_dim = label_dim
        self.net = MLP(data_dim + label_dim, 2 * latent_dim, hidden, slope)

    def forward(self, x, y=None):
        if x.shape[-1] != self.data_dim:
            raise ShapeError(f"encode: data of shape {tuple(x.shape)}, expected last dimension {self.data_dim}")
        out = self.net(_with_label(x, y, self.label_dim, "encoder"))
        mu, log_var = out[..., : self.latent_dim], out[..., self.latent_dim:]
        return mu, ad.exp(torch.clamp(log_var, LOG_VAR_MIN, LOG_VAR_MAX))


class Discriminator(nn.Module):
    """q(y|x): class logits for discrete y, a Gaussian head for continuous y."""

    def __init__(self, data_dim, kind="discrete", n_classes=2, hidden=(50, 50, 50), temperature=2.2,
                 slope=LEAKY_SLOPE):
        super().__init__()
        if temperature <= 0:
            raise ConfigError("relaxation temperature must be positive", key="temperature")
        self.kind = kind
        self.n_classes = n_classes if kind == "discrete" else 1
        self.temperature = temperature
        self.net = MLP(data_dim, n_classes if kind == "discrete" else 2, hidden, slope)

    def forward(self, x):
        out = self.net(x)
        if self.kind == "discrete":
            return out
        return out[..., :1], ad.exp(torch.clamp(out[..., 1:], LOG_VAR_MIN, LOG_VAR_MAX))

    def log_prob(self, x, y):
        if self.kind == "discrete":
            logits = self(x)
            idx = torch.as_tensor(y).long()
            if ((idx < 0) | (idx >= self.n_classes)).any():
                raise ValueError(f"discrete labels must lie in 0..{self.n_classes - 1}")
            return torch.log_softmax(logits, dim=-1).gather(-1, idx.unsqueeze(-1)).squeeze(-1)
        mu, var = self(x)
        y = torch.as_tensor(y, dtype=DTYPE).reshape(mu.shape)
        return ad.diag_gaussian_log_density(y, mu, torch.log(var)).sum(-1)

    def predict(self, x):
        with torch.no_grad():
            if self.kind == "discrete":
                return self(x).argmax(dim=-1)
            return self(x)[0].squeeze(-1)


class VaeModel(nn.Module):
    """Decoder, encoder and optional discriminator built from an ``ArchitectureConfig``."""

    def __init__(self, arch, decoder, encoder, discriminator=None):
        super().__init__()
        self.arch = arch
        self.decoder = decoder
        self.encoder = encoder
        self.discriminator = discriminator

    @property
    def latent_dim(self):
        return self.decoder.latent_dim

    @property
    def data_dim(self):
        return self.decoder.data_dim

    @property
    def label_kind(self):
        return self.arch.label_kind

    @property
    def is_labeled(self):
        return self.arch.label_kind is not None

    def labels(self, y):
        return encode_labels(y, self.arch.label_kind, self.arch.n_classes)

    def encoder_parameters(self):
        params = list(self.encoder.parameters())
        if self.discriminator is not None:
            params += list(self.discriminator.parameters())
        return [p for p in params if p.requires_grad]

    def decoder_parameters(self):
        return [p for p in self.decoder.parameters() if p.requires_grad]

    def parameter_set(self):
        return ad.ParameterSet.from_module(self)

    def sample_labels(self, n, noise):
        if self.label_kind == "discrete":
            return (noise.uniform(n) * self.arch.n_classes).floor().long().clamp_(max=self.arch.n_classes - 1)
        return noise.normal(n)

    @torch.no_grad()
    def sample(self, n, noise, return_latents=False):
        """Draw n observations from the learned generative model."""
        z = noise.normal(n, self.latent_dim)
        y = self.sample_labels(n, noise) if self.is_labeled else None
        mean = self.decoder(z, self.labels(y) if y is not None else None)
        x = mean + torch.sqrt(self.decoder.noise_variance) * noise.normal(n, self.data_dim)
        if return_latents:
            return x, z, y
        return x

    @torch.no_grad()
    def sample_given_y(self, y, n, noise):
        """Draw n observations from p_θ(x | y) at one hard label value."""
        if not self.is_labeled:
            raise LabError("sample_given_y needs a label-conditioned model")
        z = noise.normal(n, self.latent_dim)
        if self.label_kind == "discrete":
            labels = torch.full((n,), int(y), dtype=torch.long)
        else:
            labels = torch.full((n,), float(y), dtype=DTYPE)
        mean = self.decoder(z, self.labels(labels))
        return mean + torch.sqrt(self.decoder.noise_variance) * noise.normal(n, self.data_dim)


# -- operations ---------------------------------------------------------------

def decode(decoder, z, y=None):
    return decoder(ad.as_value(z), y)


def log_normal(x, mean, variance):
    """Σ_d log N(x_d; mean_d, variance_d)."""
    variance = ad.as_value(variance)
    if (variance <= 0).any():
        raise ValueError("variance must be positive")
    return ad.diag_gaussian_log_density(x, mean, torch.log(variance)).sum(-1)


def log_px_given_z(decoder, x, z, y=None):
    log_var = decoder.log_var
    if not torch.isfinite(log_var).all():
        raise ValueError("observation noise variance must be positive and finite")
    mean = decoder(z, y)
    return ad.diag_gaussian_log_density(ad.as_value(x), mean, log_var).sum(-1)


def encode(encoder, x, y=None):
    return encoder(ad.as_value(x), y)


def reparam_sample(mu, var, unit_noise):
    return mu + torch.sqrt(var) * unit_noise


def kl_diag_gaussian_to_std(mu, var):
    """KL(N(μ, diag σ²) || N(0, I)), summed over the last dimension."""
    if (var <= 0).any():
        raise ValueError("variance must be positive")
    return 0.5 * ad.sum(mu * mu + var - 1.0 - ad.log(var), dim=-1)


def gumbel_softmax_sample(logits, temperature, uniform_noise):
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    u = ad.as_value(uniform_noise)
    if ((u <= 0) | (u >= 1)).any():
        raise ValueError("uniform noise must lie strictly inside (0, 1)")
    gumbel = -torch.log(-torch.log(u))
    return torch.softmax((logits + gumbel) / temperature, dim=-1)


def build_model(arch, seed=None):
    """
    Construct a ``VaeModel`` from an architecture descriptor
    Parameters:
        arch: ArchitectureConfig (or a dict of its fields)
        seed: initialization seed; the global torch RNG is left untouched
    """
    if isinstance(arch, dict):
        arch = ArchitectureConfig(**arch)
    with torch.random.fork_rng(devices=[]):
        if seed is not None:
            torch.manual_seed(seed)
        label_dim = arch.label_dim
        if arch.kind == "linear_cholesky":
            if arch.label_kind is not None:
                raise ConfigError("the linear Cholesky decoder has no label input", key="label_kind")
            a = torch.randn(arch.latent_dim, arch.latent_dim, dtype=DTYPE)
            decoder = LinearCholeskyDecoder(a)
            if arch.noise_variance is not None:
                decoder.set_noise_variance(arch.noise_variance)
            enc_hidden = arch.encoder_hidden if arch.encoder_hidden is not None else ()
        else:
            decoder = MlpDecoder(
                arch.latent_dim,
                arch.data_dim,
                arch.hidden,
                label_dim=label_dim,
                slope=arch.leaky_slope,
                noise_variance=arch.noise_variance if arch.noise_variance is not None else SIGMA_SQ_GT,
                learn_noise=arch.learn_noise,
                shared_noise=arch.shared_noise,
            )
            enc_hidden = arch.encoder_hidden if arch.encoder_hidden is not None else arch.hidden
        encoder = MfgEncoder(decoder.data_dim, arch.latent_dim, enc_hidden, label_dim=label_dim, slope=arch.leaky_slope)
        discriminator = None
        if arch.label_kind is not None:
            discriminator = Discriminator(
                decoder.data_dim, arch.label_kind, arch.n_classes, enc_hidden, arch.temperature, arch.leaky_slope
            )
    return VaeModel(arch, decoder, encoder, discriminator)


def save_checkpoint(model, path, config_hash=""):
    from .utils import ensure_parent

    ensure_parent(path)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "architecture": model.arch.model_dump(),
        "state": OrderedDict((k, v.detach().to(DTYPE).cpu().clone()) for k, v in model.state_dict().items()),
        "noise_variance": model.decoder.noise_variance.detach().tolist(),
        "config_hash": config_hash,
    }
    torch.save(payload, path)
    logger.info(f"💾 checkpoint written to {path}")
    return path


def load_checkpoint(path):
    """
    Returns:
        (VaeModel, metadata dict with ``config_hash`` and ``noise_variance``)
    """
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except (pickle.UnpicklingError, EOFError, RuntimeError) as exc:
        raise LabError(f"{path} is not a readable checkpoint: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise LabError(f"{path} is not a {CHECKPOINT_FORMAT} checkpoint")
    model = build_model(ArchitectureConfig(**payload["architecture"]))
    model.load_state_dict(payload["state"])
    meta = {k: payload[k] for k in ("config_hash", "noise_variance")}
    return model, meta
