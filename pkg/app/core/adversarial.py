"""
Manifold-projection defense against small adversarial perturbations.

Labels come from a deterministic rule on the noiseless manifold point; a
classifier is trained on noisy data, attacked with iterated gradient-sign
steps, and the attacked points are projected back with M(x) = f_θ(μ_φ(x))
before classification.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
from loguru import logger
from scipy.spatial import cKDTree

from . import autodiff as ad
from .config import AttackConfig
from .errors import LabError, NonFiniteError
from .models import MLP, VaeModel


class Classifier(nn.Module):
    """x -> class logits."""

    def __init__(self, data_dim, n_classes=2, hidden=(50, 50)):
        super().__init__()
        self.net = MLP(data_dim, n_classes, hidden)
        self.n_classes = n_classes
        self.train_accuracy = float("nan")

    def forward(self, x):
        return self.net(x)

    @torch.no_grad()
    def predict(self, x):
        return self(ad.as_value(x)).argmax(dim=-1)


def train_classifier(x, y, n_classes=2, hidden=(50, 50), epochs=300, learning_rate=1e-2, seed=0):
    x = ad.as_value(x)
    y = torch.as_tensor(np.asarray(y), dtype=torch.long)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        classifier = Classifier(x.shape[1], n_classes, hidden)
    optimizer = torch.optim.Adam(classifier.parameters(), lr=learning_rate)
    for _ in range(epochs):
        loss = nn.functional.cross_entropy(classifier(x), y)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    classifier.train_accuracy = float((classifier.predict(x) == y).double().mean())
    logger.debug(f"classifier train accuracy {classifier.train_accuracy:.3f}")
    return classifier


def label_rule(x_means):
    """Class 1 where the first manifold coordinate is positive."""
    return (np.asarray(x_means, dtype=np.float64)[:, 0] > 0).astype(int)


def make_labels(gt, z_samples):
    if gt.is_labeled:
        raise LabError(f"{gt.name} already carries labels")
    return label_rule(gt.mean(z_samples))


@torch.no_grad()
def project_manifold(model, x):
    """x̂ = f_θ(μ_φ(x))."""
    x = ad.as_value(x)
    mu, _ = model.encoder(x)
    return model.decoder(mu)


def attack(classifier, x, y, config=None):
    """
    Iterated gradient-sign attack on the cross-entropy, sup-norm clipped to ε
    Rows stop moving at the first iterate whose predicted label differs from y.
    """
    config = config or AttackConfig()
    x = ad.as_value(x)
    if config.epsilon == 0:
        return x.clone()
    y = torch.as_tensor(np.asarray(y), dtype=torch.long)
    x_adv = x.clone()
    active = classifier.predict(x_adv) == y
    step = config.effective_step_size
    for _ in range(config.steps):
        if not active.any():
            break
        probe = x_adv.clone().requires_grad_(True)
        loss = nn.functional.cross_entropy(classifier(probe), y, reduction="sum")
        (grad,) = torch.autograd.grad(loss, probe)
        if not torch.isfinite(grad).all():
            raise NonFiniteError("non-finite attack gradient")
        with torch.no_grad():
            moved = torch.clamp(x_adv + step * grad.sign(), x - config.epsilon, x + config.epsilon)
            x_adv = torch.where(active[:, None], moved, x_adv)
            active = active & (classifier.predict(x_adv) == y)
    return x_adv.detach()


@dataclass(frozen=True)
class DefenseResult:
    clean_acc: float
    clean_acc_projected: float
    attack_succ_raw: float
    attack_succ_projected: float
    n: int


def defense_eval(classifier, projector, x, y_true, config=None):
    """
    Attack success with and without projecting the attacked points
    Parameters:
        classifier: trained Classifier
        projector: VaeModel (projected with ``project_manifold``) or a callable x -> x̂
        y_true: labels of the ground-truth rule
    Returns:
        DefenseResult, every rate a fraction of all n points
    """
    project = (lambda v: project_manifold(projector, v)) if isinstance(projector, VaeModel) else projector
    config = config or AttackConfig()
    x = ad.as_value(x)
    y = torch.as_tensor(np.asarray(y_true), dtype=torch.long)
    x_adv = attack(classifier, x, y, config)

    def rate(points, hit):
        pred = classifier.predict(points)
        return float(((pred == y) if hit else (pred != y)).double().mean())

    return DefenseResult(
        clean_acc=rate(x, True),
        clean_acc_projected=rate(project(x), True),
        attack_succ_raw=rate(x_adv, False),
        attack_succ_projected=rate(project(x_adv), False),
        n=int(x.shape[0]),
    )


def distance_to_manifold(gt, x, z_grid=None):
    """Euclidean distance from each x to a dense sampling of the noiseless manifold."""
    z = np.linspace(-5.0, 5.0, 20001) if z_grid is None else np.asarray(z_grid, dtype=np.float64)
    curve = gt.mean(z.reshape(-1, 1))
    return cKDTree(curve).query(np.asarray(x, dtype=np.float64))[0]


def projection_reduction(model, gt, x):
    """Median fractional reduction of the distance to the true manifold after projection."""
    before = distance_to_manifold(gt, x)
    after = distance_to_manifold(gt, project_manifold(model, x).numpy())
    return float(np.median(1.0 - after / np.maximum(before, 1e-12)))
