"""
Training protocol: Adam, ground-truth initialization, plain and lagging
(LIN) schedules, and restart selection on a validation split.

Objective values recorded in a ``RunHistory`` are per-datum bound values
(higher is better); the optimizer minimizes their negation.
"""

import math
import time
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
import pandas as pd
import torch
from loguru import logger
from tqdm import tqdm

from . import autodiff as ad
from .config import ArchitectureConfig, TrainConfig
from .datasets import fit_surrogate
from .errors import ConfigError, DivergenceError, LabError, NonFiniteError, ShapeError, SurrogateFitError
from .models import A_GT, NoiseSource, build_model
from .objectives import elbo, iwae_bound, optimal_sigma_sq, ss_objective
from .utils import derive_seed, ensure_parent, normal_cdf, parallel_map


# -- history ------------------------------------------------------------------

@dataclass
class RunHistory:
    """Per-epoch objective trace of one training run."""

    train_obj: List[float] = field(default_factory=list)
    val_obj: List[float] = field(default_factory=list)
    wall_clock: float = 0.0
    checkpoint: Optional[str] = None
    restart: int = 0
    init: str = "random"
    objective: str = "elbo"
    diverged: bool = False
    selection_value: float = float("nan")
    noise_variance: Optional[list] = None
    step_log: List[str] = field(default_factory=list)

    @property
    def epochs(self):
        return len(self.train_obj)

    def to_frame(self):
        return pd.DataFrame(
            {
                "epoch": np.arange(1, self.epochs + 1),
                "train_obj": np.asarray(self.train_obj, dtype=np.float64),
                "val_obj": np.asarray(self.val_obj, dtype=np.float64),
            }
        )

    def to_csv(self, path):
        ensure_parent(path)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        logger.info(f"💾 history written to {path}")
        return path


# -- optimizer ----------------------------------------------------------------

class AdamState:
    """``torch.optim.Adam`` over a named parameter list."""

    def __init__(self, params, learning_rate=1e-3):
        if isinstance(params, ad.ParameterSet):
            named = list(params.items())
        elif isinstance(params, dict):
            named = list(params.items())
        else:
            named = [(f"param{i}", p) for i, p in enumerate(params)]
        self.names = [name for name, _ in named]
        self.params = [p for _, p in named]
        self.optimizer = torch.optim.Adam(self.params, lr=learning_rate, betas=(0.9, 0.999), eps=1e-8)

    @property
    def steps(self):
        states = [self.optimizer.state[p] for p in self.params if p in self.optimizer.state]
        return int(states[0]["step"]) if states else 0


def adam_step(params, grads, state, learning_rate=None):
    """
    One Adam update, in place
    Parameters:
        params: the tensors tracked by ``state`` (ParameterSet or list)
        grads: matching gradients, same order and shapes
        state: AdamState
        learning_rate: overrides the state's learning rate when given
    Returns:
        (params, state)
    """
    tensors = params.tensors() if isinstance(params, ad.ParameterSet) else list(params)
    grads = grads.tensors() if isinstance(grads, ad.ParameterSet) else list(grads)
    if len(tensors) != len(grads) or len(tensors) != len(state.params):
        raise ShapeError(f"adam_step: {len(tensors)} parameters, {len(grads)} gradients, "
                         f"{len(state.params)} tracked")
    for name, p, g in zip(state.names, tensors, grads):
        if g is None:
            g = torch.zeros_like(p)
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient for {name} has shape {tuple(g.shape)}, "
                             f"parameter has {tuple(p.shape)}")
        if not torch.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter {name}")
        p.grad = g.detach().clone()
    if learning_rate is not None:
        for group in state.optimizer.param_groups:
            group["lr"] = learning_rate
    state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=True)
    return params, state


# -- objective plumbing -------------------------------------------------------

@dataclass
class _Tensors:
    x: torch.Tensor
    y: Optional[torch.Tensor]
    observed: torch.Tensor

    @property
    def n(self):
        return self.x.shape[0]


def _tensors(dataset):
    y = None
    if dataset.y is not None:
        y = torch.as_tensor(np.asarray(dataset.y, dtype=np.float64))
    return _Tensors(dataset.tensor(), y, torch.as_tensor(dataset.observed_mask, dtype=torch.bool))


def _check_compatible(model, config):
    if config.semi_supervised and not model.is_labeled:
        raise LabError("semi-supervised training needs a label-conditioned model")
    if not config.semi_supervised and model.is_labeled:
        raise LabError("a label-conditioned model needs semi_supervised = true")


def batch_objective(model, data, index, config, noise, objective_config=None):
    """Per-datum objective of one minibatch (differentiable)."""
    objective_config = objective_config or config.objective_config(relaxed=True)
    x = data.x[index]
    if config.semi_supervised:
        observed = data.observed[index]
        labeled_y = data.y[index][observed] if data.y is not None else None
        total = ss_objective(model, x[observed], labeled_y, x[~observed], noise, objective_config)
        return total / x.shape[0]
    if config.method == "iwae":
        return iwae_bound(model, x, noise, objective_config.importance_samples)
    return elbo(model, x, noise, objective_config)


@torch.no_grad()
def evaluate_objective(model, dataset, config, noise, relaxed=False, chunk=1000):
    """
    Per-datum training objective on a whole dataset, without gradients
    Parameters:
        relaxed: keep Gumbel-softmax labels; the default enumerates discrete labels
    """
    data = _tensors(dataset)
    objective_config = config.objective_config(relaxed=relaxed)
    total = 0.0
    for start in range(0, data.n, chunk):
        index = torch.arange(start, min(data.n, start + chunk))
        total += float(batch_objective(model, data, index, config, noise, objective_config)) * len(index)
    return total / data.n


def _batches(order, batch_size):
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def _named(model, params):
    ids = {id(p) for p in params}
    return OrderedDict((name, p) for name, p in model.named_parameters() if id(p) in ids)


def _minimize_step(model, data, index, config, noise, state):
    loss = -batch_objective(model, data, index, config, noise)
    value = float(loss)
    if not math.isfinite(value):
        raise NonFiniteError(f"non-finite training objective on a batch starting at row {int(index[0])}")
    grads = torch.autograd.grad(loss, state.params, allow_unused=True)
    adam_step(state.params, grads, state)
    return value


def _configure_noise(model, config):
    model.decoder.set_noise_trainable(config.noise_mode == "joint")


def _completed_labels(model, dataset):
    """Observed labels where present, the discriminator's prediction elsewhere."""
    if not model.is_labeled:
        return None
    if model.discriminator is None:
        if dataset.n_observed < dataset.n:
            raise ShapeError("a label-conditioned model without a discriminator needs every label observed")
        return torch.as_tensor(dataset.y)
    labels = model.discriminator.predict(torch.as_tensor(dataset.x, dtype=ad.DTYPE))
    if dataset.n_observed:
        known = torch.as_tensor(dataset.y).to(labels.dtype)
        labels = torch.where(torch.as_tensor(dataset.observed_mask), known, labels)
    return labels


def _finish(model, history, dataset, config, noise, started):
    if config.noise_mode == "reestimate" and history.epochs > 0:
        labels = _completed_labels(model, dataset)
        sigma_sq = optimal_sigma_sq(model, dataset.x, config.reestimate_samples, noise, y=labels)
        model.decoder.set_noise_variance(sigma_sq)
        logger.debug(f"re-estimated noise variance {np.round(sigma_sq, 5).tolist()}")
    history.noise_variance = model.decoder.noise_variance.detach().tolist()
    history.wall_clock = time.perf_counter() - started
    return history


def _diverged(value, config, history, epoch):
    if value > config.divergence_threshold:
        history.diverged = True
        logger.warning(f"⚠️ restart {history.restart} diverged at epoch {epoch}: loss {value:.3g}")
        return True
    return False


def _record_epoch(model, history, losses, validation, config, noise):
    history.train_obj.append(-float(np.mean(losses)) if losses else float("nan"))
    if validation is not None:
        history.val_obj.append(evaluate_objective(model, validation, config, noise.spawn(history.epochs)))
    else:
        history.val_obj.append(float("nan"))


def train(model, dataset, config, noise, validation=None, params=None):
    """
    Minibatch Adam on the negated objective
    Parameters:
        model: VaeModel, updated in place
        dataset: training LabeledDataset
        config: TrainConfig
        noise: NoiseSource driving shuffles and Monte Carlo draws
        validation: optional LabeledDataset scored after every epoch
        params: restrict updates to these tensors (defaults to every trainable one)
    Returns:
        RunHistory
    """
    _check_compatible(model, config)
    _configure_noise(model, config)
    started = time.perf_counter()
    history = RunHistory(objective=config.objective)
    if config.epochs == 0:
        return _finish(model, history, dataset, config, noise, started)

    params = [p for p in model.parameters() if p.requires_grad] if params is None else list(params)
    state = AdamState(_named(model, params), config.learning_rate)
    data = _tensors(dataset)
    for epoch in tqdm(range(config.epochs), desc="epochs", disable=None, leave=False):
        losses = []
        for index in _batches(noise.permutation(data.n), config.batch_size):
            value = _minimize_step(model, data, index, config, noise, state)
            history.step_log.append("J")
            losses.append(value)
            if _diverged(value, config, history, epoch):
                break
        _record_epoch(model, history, losses, validation, config, noise)
        if history.diverged:
            break
    return _finish(model, history, dataset, config, noise, started)


def train_lin(model, dataset, config, noise, validation=None, callback=None):
    """
    Lagging-inference-network schedule
    Aggressive phases take encoder-only steps until the rolling mean of the
    loss over ``lin_window`` steps improves by less than ``lin_threshold``,
    then one decoder step follows. With ``lin_exit = "phase_start"`` the run
    falls back to joint updates once a phase stops inside its first window.
    Parameters:
        callback: optional ``callback(event, model)`` fired on phase_start / phase_end
    """
    _check_compatible(model, config)
    _configure_noise(model, config)
    started = time.perf_counter()
    history = RunHistory(objective=config.objective)
    if config.epochs == 0:
        return _finish(model, history, dataset, config, noise, started)

    encoder = AdamState(_named(model, model.encoder_parameters()), config.learning_rate)
    decoder = AdamState(_named(model, model.decoder_parameters()), config.learning_rate)
    joint = AdamState(_named(model, [p for p in model.parameters() if p.requires_grad]), config.learning_rate)
    data = _tensors(dataset)
    window, threshold = config.lin_window, config.lin_threshold
    aggressive = True

    for epoch in tqdm(range(config.epochs), desc="epochs", disable=None, leave=False):
        losses = []
        for index in _batches(noise.permutation(data.n), config.batch_size):
            if aggressive:
                if callback is not None:
                    callback("phase_start", model)
                trace = []
                reference = None
                while len(trace) < config.lin_max_inner_steps:
                    inner = noise.permutation(data.n)[: config.batch_size]
                    value = _minimize_step(model, data, inner, config, noise, encoder)
                    history.step_log.append("E")
                    reference = value if reference is None else reference
                    trace.append(value)
                    if len(trace) < window and not math.isinf(threshold):
                        continue
                    recent = np.mean(trace[-window:])
                    previous = np.mean(trace[-2 * window:-window]) if len(trace) >= 2 * window else reference
                    if previous - recent < threshold:
                        break
                if callback is not None:
                    callback("phase_end", model)
                if config.lin_exit == "phase_start" and len(trace) <= window:
                    aggressive = False
                    logger.debug(f"LIN leaves the aggressive regime at epoch {epoch}")
                value = _minimize_step(model, data, index, config, noise, decoder)
                history.step_log.append("D")
            else:
                value = _minimize_step(model, data, index, config, noise, joint)
                history.step_log.append("J")
            losses.append(value)
            if _diverged(value, config, history, epoch):
                break
        _record_epoch(model, history, losses, validation, config, noise)
        if history.diverged:
            break
    return _finish(model, history, dataset, config, noise, started)


def fit(model, dataset, config, noise, validation=None):
    if config.method == "lin":
        return train_lin(model, dataset, config, noise, validation)
    return train(model, dataset, config, noise, validation)


# -- initialization -----------------------------------------------------------

def architecture_for(gt, config, latent_dim=None, hidden=None):
    """Decoder/encoder layout for a ground truth under a training config."""
    hidden = hidden if hidden is not None else getattr(config, "hidden", (50, 50, 50))
    if gt.name == "linear_cholesky":
        return ArchitectureConfig(kind="linear_cholesky", latent_dim=2, data_dim=2, hidden=(), encoder_hidden=())
    return ArchitectureConfig(
        latent_dim=latent_dim or getattr(config, "latent_dim", gt.latent_dim),
        data_dim=gt.data_dim,
        hidden=hidden,
        label_kind=gt.label_kind if config.semi_supervised else None,
        n_classes=gt.n_classes,
        temperature=config.temperature,
        noise_variance=[float(v) for v in gt.noise_variance],
        learn_noise=config.noise_mode == "joint",
    )


def _initialization_target(gt, arch):
    """Ground truth re-expressed on a standard-normal prior with ``arch.latent_dim`` latents."""
    if arch.latent_dim < gt.latent_dim:
        raise ConfigError(f"cannot initialize a {arch.latent_dim}-D model from the {gt.latent_dim}-D {gt.name}",
                          key="latent_dim")
    if gt.prior == "normal" and arch.latent_dim == gt.latent_dim:
        return gt
    k, uniform, mean = gt.latent_dim, gt.prior == "uniform", gt.mean

    def mean_fn(z, y=None):
        z = np.asarray(z, dtype=np.float64)[:, :k]
        return mean(normal_cdf(z) if uniform else z, y)

    return replace(gt, latent_dim=arch.latent_dim, mean_fn=mean_fn, prior="normal", embedding=None)


def gt_initialize(gt, dataset, arch, config, seed=0):
    """
    Model at (θ_GT, φ_GT)
    The decoder is the ground-truth map (or a surrogate network fitted to it),
    the encoder is trained against the frozen decoder, and σ² is the ground
    truth's.
    """
    model = build_model(arch, seed)
    if gt.is_labeled and arch.label_kind is None:
        logger.warning(f"⚠️ {gt.name} decoder needs labels; an unlabeled model starts from random weights")
        model.decoder.set_noise_variance(gt.noise_variance)
        return model
    if arch.kind == "linear_cholesky":
        with torch.no_grad():
            model.decoder.A.copy_(torch.as_tensor(A_GT, dtype=ad.DTYPE))
    else:
        target = _initialization_target(gt, arch)
        surrogate = fit_surrogate(target, arch, config.surrogate_tolerance, seed=derive_seed(seed, "surrogate"))
        model.decoder.net.load_state_dict(surrogate.net.state_dict())
        model.decoder.set_noise_variance(gt.noise_variance)

    if config.encoder_init_epochs > 0:
        frozen = config.model_copy(update={"epochs": config.encoder_init_epochs, "noise_mode": "fixed"})
        if frozen.method != "vae" and not frozen.semi_supervised:
            frozen = frozen.model_copy(update={"method": "vae"})
        train(model, dataset, frozen, NoiseSource(derive_seed(seed, "encoder-init")),
              params=model.encoder_parameters())
    return model


# -- restarts -----------------------------------------------------------------

@dataclass
class RestartJob:
    index: int
    init: str
    seed: int
    gt: object
    arch: ArchitectureConfig
    config: TrainConfig
    train_set: object
    validation: object


def run_restart(job):
    """Train one restart; returns (model, history)."""
    logger.debug(f"🚀 restart {job.index} ({job.init}, seed {job.seed})")
    try:
        if job.init == "gt":
            model = gt_initialize(job.gt, job.train_set, job.arch, job.config, job.seed)
        else:
            model = build_model(job.arch, job.seed)
            model.decoder.set_noise_variance(job.gt.noise_variance)
        history = fit(model, job.train_set, job.config, NoiseSource(job.seed), job.validation)
        if not history.diverged:
            score_noise = NoiseSource(derive_seed(job.config.seed, "validation"))
            history.selection_value = evaluate_objective(model, job.validation, job.config, score_noise)
            if not math.isfinite(history.selection_value):
                raise NonFiniteError(f"validation objective is {history.selection_value}")
    except (NonFiniteError, SurrogateFitError) as exc:
        logger.warning(f"⚠️ restart {job.index} failed and is marked diverged: {exc}")
        model = build_model(job.arch, job.seed)
        history = RunHistory(objective=job.config.objective, diverged=True)
    history.restart, history.init = job.index, job.init
    return model, history


def select_restart(histories):
    """Index of the restart with the highest validation objective; ties go to the lowest index."""
    best = None
    for i, history in enumerate(histories):
        if history.diverged or not math.isfinite(history.selection_value):
            continue
        if best is None or history.selection_value > histories[best].selection_value:
            best = i
    if best is None:
        raise DivergenceError("every restart diverged", histories)
    return best


def restart_jobs(splits, gt, config, arch=None):
    arch = arch or architecture_for(gt, config)
    train_set, validation = splits["train"], splits["validation"]
    jobs = []
    for index in range(config.gt_restarts + config.random_restarts):
        init = "gt" if index < config.gt_restarts else "random"
        jobs.append(RestartJob(index, init, derive_seed(config.seed, "restart", index), gt, arch,
                               config.train_config(), train_set, validation))
    return jobs


def run_restarts(splits, gt, config, arch=None, workers=None):
    """
    ``gt_restarts`` ground-truth-initialized and ``random_restarts`` random runs,
    best kept by validation objective
    Parameters:
        splits: mapping with "train" and "validation" LabeledDatasets
    Returns:
        (best VaeModel, list of RunHistory in restart order)
    """
    if "validation" not in splits:
        raise LabError("restart selection needs a validation split")
    jobs = restart_jobs(splits, gt, config, arch)
    logger.info(f"🚀 {len(jobs)} restarts on {gt.name} ({config.objective}, {config.method})")
    results = parallel_map(run_restart, jobs, workers)
    histories = [history for _, history in results]
    best = select_restart(histories)
    logger.info(f"✅ restart {best} selected with validation objective {histories[best].selection_value:.4f}")
    return results[best][0], histories
