"""
Training objectives.

All bounds return the batch mean (``elbo``, ``iwae_bound``) or per-datum
values (``*_per_datum``, ``ss_bounds``) as differentiable float64 tensors.
Randomness comes exclusively from the ``NoiseSource`` passed in, so two calls
with equally seeded sources evaluate the same Monte Carlo estimate.

The semi-supervised bounds follow the standard M2 construction with an
encoder q(z | x, y): the labeled bound uses the observed y, the unlabeled
bound either draws a relaxed label ỹ from q(y | x) (training) or sums over
hard labels (``relaxed=False``, discrete y only).
"""

import math

import numpy as np
import torch
from loguru import logger

from . import autodiff as ad
from .config import ObjectiveConfig
from .errors import LabError, NonFiniteError, ShapeError
from .models import gumbel_softmax_sample, kl_diag_gaussian_to_std, log_px_given_z, reparam_sample


def _check_finite(values, what):
    finite = torch.isfinite(values)
    if not finite.all():
        bad = int(torch.nonzero(~finite.reshape(-1))[0])
        raise NonFiniteError(f"non-finite {what} at batch index {bad}")
    return values


def _std_normal_log_density(z):
    return ad.diag_gaussian_log_density(z, torch.zeros_like(z), torch.zeros_like(z)).sum(-1)


def _q_log_density(z, mu, var):
    return ad.diag_gaussian_log_density(z, mu, torch.log(var)).sum(-1)


def _draw_latents(model, mu, var, noise, samples):
    eps = noise.normal(samples, *mu.shape)
    return reparam_sample(mu, var, eps)


def _conditional_elbo(model, x, labels, noise, config, eps=None):
    """E_q(z|x,y)[log p(x|z,y)] - KL(q(z|x,y) || p(z)) per datum."""
    mu, var = model.encoder(x, labels)
    if eps is None:
        eps = noise.normal(config.mc_samples, *mu.shape)
    z = reparam_sample(mu, var, eps)
    loglik = log_px_given_z(model.decoder, x, z, labels)
    if config.analytic_kl:
        return loglik.mean(0) - kl_diag_gaussian_to_std(mu, var)
    return (loglik + _std_normal_log_density(z) - _q_log_density(z, mu, var)).mean(0)


def elbo_per_datum(model, x, noise, config=None, y=None):
    config = config or ObjectiveConfig()
    x = ad.as_value(x)
    if x.shape[0] == 0:
        raise ShapeError("elbo needs a nonempty batch")
    labels = model.labels(y) if y is not None else None
    return _check_finite(_conditional_elbo(model, x, labels, noise, config), "ELBO")


def elbo(model, x, noise, config=None, y=None):
    """
    Monte Carlo ELBO averaged over the batch
    Parameters:
        model: VaeModel
        x: (N, D) batch
        noise: NoiseSource
        config: ObjectiveConfig (mc_samples, analytic_kl)
        y: labels for a label-conditioned model
    """
    return elbo_per_datum(model, x, noise, config, y).mean()


def iwae_per_datum(model, x, noise, S, y=None):
    if S < 1:
        raise ValueError("IWAE needs S >= 1")
    x = ad.as_value(x)
    labels = model.labels(y) if y is not None else None
    mu, var = model.encoder(x, labels)
    z = _draw_latents(model, mu, var, noise, S)
    log_w = log_px_given_z(model.decoder, x, z, labels) + _std_normal_log_density(z) - _q_log_density(z, mu, var)
    _check_finite(log_w.reshape(-1), "importance weights")
    return ad.logsumexp(log_w, dim=0) - math.log(S)


def iwae_bound(model, x, noise, S, y=None):
    """Importance-weighted bound with S samples, averaged over the batch."""
    return iwae_per_datum(model, x, noise, S, y).mean()


# -- semi-supervised ----------------------------------------------------------

def _log_label_prior(model, y_values):
    if model.label_kind == "discrete":
        return torch.full(y_values.shape[:1] if y_values.dim() else (), -math.log(model.arch.n_classes),
                          dtype=ad.DTYPE)
    return ad.diag_gaussian_log_density(y_values, torch.zeros_like(y_values), torch.zeros_like(y_values))


def _categorical_kl_to_uniform(logits, n_classes):
    log_p = torch.log_softmax(logits, dim=-1)
    return (log_p.exp() * (log_p + math.log(n_classes))).sum(-1)


def _gaussian_kl_to_std(mu, var):
    return kl_diag_gaussian_to_std(mu, var)


def _labeled_bound(model, x, y, noise, config):
    labels = model.labels(y)
    log_py = _log_label_prior(model, torch.as_tensor(y, dtype=ad.DTYPE))
    if config.importance_samples > 1:
        mu, var = model.encoder(x, labels)
        z = _draw_latents(model, mu, var, noise, config.importance_samples)
        log_w = log_px_given_z(model.decoder, x, z, labels) + _std_normal_log_density(z) - _q_log_density(z, mu, var)
        return ad.logsumexp(log_w, dim=0) - math.log(config.importance_samples) + log_py
    return _conditional_elbo(model, x, labels, noise, config) + log_py


def _unlabeled_enumerated(model, x, noise, config):
    """Discrete labels summed out exactly: Σ_y q(y|x) L̃(x, y) + H-type KL term."""
    C = model.arch.n_classes
    logits = model.discriminator(x)
    q_y = torch.softmax(logits, dim=-1)
    S = config.importance_samples
    eps = noise.normal(S if S > 1 else config.mc_samples, x.shape[0], model.latent_dim)
    per_class = []
    for c in range(C):
        labels = model.labels(torch.full((x.shape[0],), c, dtype=torch.long))
        if S > 1:
            mu, var = model.encoder(x, labels)
            z = reparam_sample(mu, var, eps)
            log_w = log_px_given_z(model.decoder, x, z, labels) + _std_normal_log_density(z) \
                - _q_log_density(z, mu, var)
            per_class.append(ad.logsumexp(log_w, dim=0) - math.log(S))
        else:
            per_class.append(_conditional_elbo(model, x, labels, noise, config, eps=eps))
    per_class = torch.stack(per_class, dim=-1)
    if S > 1:
        return ad.logsumexp(per_class - math.log(C), dim=-1)
    return (q_y * per_class).sum(-1) - _categorical_kl_to_uniform(logits, C)


def _unlabeled_relaxed_discrete(model, x, noise, config):
    C = model.arch.n_classes
    logits = model.discriminator(x)
    S = config.importance_samples
    if S > 1:
        u = noise.uniform(S, x.shape[0], C)
        y_soft = gumbel_softmax_sample(logits, config.temperature, u)
        mu, var = model.encoder(x.expand(S, *x.shape), y_soft)
        eps = noise.normal(*mu.shape)
        z = reparam_sample(mu, var, eps)
        q_y = torch.distributions.RelaxedOneHotCategorical(torch.tensor(config.temperature, dtype=ad.DTYPE),
                                                           logits=logits)
        p_y = torch.distributions.RelaxedOneHotCategorical(torch.tensor(config.temperature, dtype=ad.DTYPE),
                                                           logits=torch.zeros_like(logits))
        safe = y_soft.clamp(min=1e-300)
        log_w = (log_px_given_z(model.decoder, x, z, y_soft) + _std_normal_log_density(z)
                 + p_y.log_prob(safe) - q_y.log_prob(safe) - _q_log_density(z, mu, var))
        return ad.logsumexp(log_w, dim=0) - math.log(S)
    u = noise.uniform(x.shape[0], C)
    y_soft = gumbel_softmax_sample(logits, config.temperature, u)
    return _conditional_elbo(model, x, y_soft, noise, config) - _categorical_kl_to_uniform(logits, C)


def _unlabeled_continuous(model, x, noise, config):
    y_mu, y_var = model.discriminator(x)
    S = config.importance_samples
    if S > 1:
        y = reparam_sample(y_mu, y_var, noise.normal(S, *y_mu.shape))
        mu, var = model.encoder(x.expand(S, *x.shape), y)
        z = reparam_sample(mu, var, noise.normal(*mu.shape))
        log_w = (log_px_given_z(model.decoder, x, z, y) + _std_normal_log_density(z) - _q_log_density(z, mu, var)
                 + _std_normal_log_density(y) - _q_log_density(y, y_mu, y_var))
        return ad.logsumexp(log_w, dim=0) - math.log(S)
    y = reparam_sample(y_mu, y_var, noise.normal(*y_mu.shape))
    return _conditional_elbo(model, x, y, noise, config) - _gaussian_kl_to_std(y_mu, y_var)


def ss_bounds(model, x, y, noise, config=None):
    """
    Per-datum semi-supervised bound
    Parameters:
        model: label-conditioned VaeModel with a discriminator
        x: (N, D) batch
        y: observed labels for the labeled bound L(x, y), or None for U(x)
        config: ObjectiveConfig; importance_samples > 1 selects the IWAE forms
    Returns:
        (N,) tensor of L(x, y) or U(x)
    """
    config = config or ObjectiveConfig()
    if model.discriminator is None or not model.is_labeled:
        raise LabError("semi-supervised bounds need a label-conditioned model with a discriminator")
    x = ad.as_value(x)
    if y is not None:
        y = torch.as_tensor(np.asarray(y) if not isinstance(y, torch.Tensor) else y)
        if model.label_kind == "discrete":
            values = y.to(ad.DTYPE)
            if (values != values.round()).any() or ((values < 0) | (values >= model.arch.n_classes)).any():
                raise ValueError(f"discrete labels must be integers in 0..{model.arch.n_classes - 1}")
            y = values.long()
        else:
            y = y.to(ad.DTYPE)
        out = _labeled_bound(model, x, y, noise, config)
    elif model.label_kind == "continuous":
        out = _unlabeled_continuous(model, x, noise, config)
    elif config.relaxed:
        out = _unlabeled_relaxed_discrete(model, x, noise, config)
    else:
        out = _unlabeled_enumerated(model, x, noise, config)
    return _check_finite(out, "semi-supervised bound")


def ss_objective(model, labeled_x, labeled_y, unlabeled_x, noise, config=None):
    """
    J = Σ U(x_n) + γ Σ L(x_m, y_m) + α Σ log q(y_m | x_m); the trainer minimizes -J
    """
    config = config or ObjectiveConfig()
    has_labeled = labeled_x is not None and len(labeled_x) > 0
    has_unlabeled = unlabeled_x is not None and len(unlabeled_x) > 0
    if not (has_labeled or has_unlabeled):
        raise ShapeError("ss_objective needs a nonempty labeled or unlabeled batch")
    total = torch.zeros((), dtype=ad.DTYPE)
    if has_unlabeled:
        total = total + ss_bounds(model, unlabeled_x, None, noise, config).sum()
    if has_labeled:
        labeled_x = ad.as_value(labeled_x)
        total = total + config.gamma * ss_bounds(model, labeled_x, labeled_y, noise, config).sum()
        if config.alpha > 0:
            total = total + config.alpha * model.discriminator.log_prob(labeled_x, labeled_y).sum()
    return total


# -- noise variance -----------------------------------------------------------

def optimal_sigma_sq(model, x, mc_samples, noise, y=None):
    """
    Per-dimension σ² maximizing the ELBO with encoder and decoder fixed
    Returns:
        (D,) numpy array; a constant vector when the decoder shares one σ²
    """
    x = ad.as_value(getattr(x, "x", x))
    if x.shape[0] == 0:
        raise ShapeError("optimal_sigma_sq needs a nonempty dataset")
    with torch.no_grad():
        labels = model.labels(y) if y is not None else None
        mu, var = model.encoder(x, labels)
        z = reparam_sample(mu, var, noise.normal(mc_samples, *mu.shape))
        residual = (x - model.decoder(z, labels)) ** 2
        per_dim = residual.mean(dim=(0, 1))
        if getattr(model.decoder, "shared_noise", False):
            per_dim = per_dim.mean().expand_as(per_dim)
    return per_dim.numpy().copy()


# -- linear-Gaussian oracle ---------------------------------------------------

def _gaussian_kl(cov_p, cov_q):
    d = cov_p.shape[0]
    solved = torch.linalg.solve(cov_q, cov_p)
    return 0.5 * (torch.trace(solved) - d + torch.logdet(cov_q) - torch.logdet(cov_p))


def linear_gaussian_gap(C, psi, data_cov):
    """
    MLEO and PMO of a linear decoder x = Cz + ε, ε ~ N(0, diag ψ), with the
    best mean-field encoder
    Returns:
        (mleo, pmo) as 0-d tensors, differentiable in C
    """
    C = ad.as_value(C)
    psi = ad.as_value(psi).reshape(-1)
    data_cov = ad.as_value(data_cov)
    model_cov = C @ C.T + torch.diag(psi)
    precision = torch.eye(C.shape[1], dtype=ad.DTYPE) + C.T @ (C / psi[:, None])
    pmo = 0.5 * (torch.log(torch.diagonal(precision)).sum() - torch.logdet(precision))
    return _gaussian_kl(data_cov, model_cov), pmo


def optimize_linear_gap(a_init, b_diag, sigma_sq, data_cov, steps=5000, lr=0.01):
    """
    Minimize MLEO + PMO over A for the Cholesky-parameterized decoder
    Returns:
        (best A as numpy array, mleo, pmo)
    """
    a = torch.tensor(np.asarray(a_init, dtype=np.float64), requires_grad=True)
    b = torch.diag(ad.as_value(b_diag))
    psi = sigma_sq - torch.diagonal(b)
    optimizer = torch.optim.Adam([a], lr=lr)
    for _ in range(steps):
        mleo, pmo = linear_gaussian_gap(torch.linalg.cholesky(a @ a.T + b), psi, data_cov)
        loss = mleo + pmo
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    lbfgs = torch.optim.LBFGS([a], lr=0.5, max_iter=200, line_search_fn="strong_wolfe")

    def closure():
        lbfgs.zero_grad()
        m, p = linear_gaussian_gap(torch.linalg.cholesky(a @ a.T + b), psi, data_cov)
        total = m + p
        total.backward()
        return total

    lbfgs.step(closure)
    with torch.no_grad():
        mleo, pmo = linear_gaussian_gap(torch.linalg.cholesky(a @ a.T + b), psi, data_cov)
    logger.debug(f"linear gap optimum: MLEO {float(mleo):.4f}, PMO {float(pmo):.4f}")
    return a.detach().numpy(), float(mleo), float(pmo)
