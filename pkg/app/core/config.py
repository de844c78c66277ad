"""
Validated configuration objects.

Every experiment knob lives on a pydantic model with ``extra="forbid"`` so a
typo in a config file fails loudly instead of silently falling back to a
default. ``ExperimentConfig`` is the flat ``key = value`` document read by
the CLI; it carries every ``TrainConfig`` field plus the grids and dataset
choices of a reproduction.
"""

import os
from typing import List, Literal, Optional, Tuple

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .utils import GENERATOR_NAMES, config_hash

LEAKY_SLOPE = 0.01
GUMBEL_TEMPERATURE = 2.2


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True, frozen=False)


def _split_list(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class ArchitectureConfig(_Strict):
    """Describes how to build a ``VaeModel``; stored verbatim in checkpoints."""

    kind: Literal["mlp", "linear_cholesky"] = "mlp"
    latent_dim: int = Field(1, ge=1)
    data_dim: int = Field(2, ge=1)
    hidden: Tuple[int, ...] = (50, 50, 50)
    encoder_hidden: Optional[Tuple[int, ...]] = None
    leaky_slope: float = Field(LEAKY_SLOPE, ge=0.0)
    label_kind: Optional[Literal["discrete", "continuous"]] = None
    n_classes: int = Field(2, ge=2)
    temperature: float = Field(GUMBEL_TEMPERATURE, gt=0.0)
    noise_variance: Optional[List[float]] = None
    shared_noise: bool = False
    learn_noise: bool = False

    @field_validator("hidden", "encoder_hidden", mode="before")
    @classmethod
    def _parse_widths(cls, value):
        value = _split_list(value)
        if value is None:
            return value
        return tuple(int(v) for v in value)

    @field_validator("noise_variance")
    @classmethod
    def _positive_noise(cls, value):
        if value is not None and any(v <= 0 for v in value):
            raise ValueError("noise variances must be positive")
        return value

    @property
    def label_dim(self):
        if self.label_kind == "discrete":
            return self.n_classes
        if self.label_kind == "continuous":
            return 1
        return 0


class ObjectiveConfig(_Strict):
    mc_samples: int = Field(1, ge=1)
    importance_samples: int = Field(1, ge=1)
    alpha: float = Field(0.0, ge=0.0)
    gamma: float = Field(1.0, gt=0.0)
    analytic_kl: bool = True
    relaxed: bool = True
    temperature: float = Field(GUMBEL_TEMPERATURE, gt=0.0)


class QuadratureSpec(_Strict):
    lower: float = -8.0
    upper: float = 8.0
    points: int = Field(4001, ge=3)
    points_2d: int = Field(1601, ge=3)

    def grid(self, prior="normal", points=None):
        import numpy as np

        points = points or self.points
        if prior == "uniform":
            return np.linspace(0.0, 1.0, points)
        return np.linspace(self.lower, self.upper, points)


class AttackConfig(_Strict):
    epsilon: float = Field(0.3, ge=0.0)
    steps: int = Field(20, ge=1)
    step_size: Optional[float] = Field(None, gt=0.0)

    @property
    def effective_step_size(self):
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.epsilon / self.steps


class TrainConfig(_Strict):
    """Optimizer, restart and objective settings of one training protocol."""

    method: Literal["vae", "iwae", "lin"] = "vae"
    semi_supervised: bool = False
    learning_rate: float = Field(1e-3, gt=0.0)
    batch_size: int = Field(100, ge=1)
    epochs: int = Field(100, ge=0)
    encoder_init_epochs: int = Field(100, ge=0)
    gt_restarts: int = Field(5, ge=0)
    random_restarts: int = Field(5, ge=0)
    mc_samples: int = Field(1, ge=1)
    importance_samples: int = Field(20, ge=1)
    alpha: float = Field(0.0, ge=0.0)
    gamma: float = Field(1.0, gt=0.0)
    analytic_kl: bool = True
    temperature: float = Field(GUMBEL_TEMPERATURE, gt=0.0)
    lin_threshold: float = Field(0.05, gt=0.0)
    lin_window: int = Field(5, ge=1)
    lin_exit: Literal["phase_start", "never"] = "phase_start"
    lin_max_inner_steps: int = Field(500, ge=1)
    noise_mode: Literal["fixed", "reestimate", "joint"] = "fixed"
    reestimate_samples: int = Field(10, ge=1)
    divergence_threshold: float = Field(1e6, gt=0.0)
    surrogate_tolerance: float = Field(1e-4, gt=0.0)
    seed: int = 0

    @model_validator(mode="after")
    def _restarts_present(self):
        if self.gt_restarts + self.random_restarts < 1:
            raise ValueError("at least one restart is required")
        return self

    @property
    def objective(self):
        if self.semi_supervised:
            return "ss"
        return "iwae" if self.method == "iwae" else "elbo"

    def objective_config(self, relaxed=True):
        return ObjectiveConfig(
            mc_samples=self.mc_samples,
            importance_samples=self.importance_samples if self.method == "iwae" else 1,
            alpha=self.alpha,
            gamma=self.gamma,
            analytic_kl=self.analytic_kl,
            relaxed=relaxed,
            temperature=self.temperature,
        )

    def train_config(self):
        fields = TrainConfig.model_fields.keys()
        return TrainConfig(**{name: getattr(self, name) for name in fields})


class ExperimentConfig(TrainConfig):
    """Flat experiment document: dataset, method, grids and output location."""

    dataset: str = "figure8"
    latent_dim: int = Field(1, ge=1)
    hidden: Tuple[int, ...] = (50, 50, 50)
    n_train: int = Field(5000, ge=1)
    n_validation: int = Field(2000, ge=1)
    n_test: int = Field(2000, ge=1)
    versions: List[int] = [0, 1, 2, 3, 4]
    k_sweep: List[int] = [1, 2, 3]
    s_grid: List[int] = [3, 10, 20]
    t_grid: List[float] = [0.05, 0.1]
    r_grid: List[int] = [5, 10]
    alpha_grid: List[float] = [0.0, 0.1, 1.0]
    gamma_grid: List[float] = [0.5, 1.0, 2.0, 5.0]
    embed_5d: bool = False
    knn_k: int = Field(5, ge=1)
    knn_permutations: int = Field(500, ge=1)
    output_dir: str = "results"

    @field_validator(
        "versions", "k_sweep", "s_grid", "t_grid", "r_grid", "alpha_grid", "gamma_grid", mode="before"
    )
    @classmethod
    def _parse_grid(cls, value):
        return _split_list(value)

    @field_validator("hidden", mode="before")
    @classmethod
    def _parse_hidden(cls, value):
        return tuple(int(v) for v in _split_list(value))

    @field_validator("versions", "k_sweep", "s_grid", "t_grid", "r_grid", "alpha_grid", "gamma_grid")
    @classmethod
    def _nonempty(cls, value):
        if not value:
            raise ValueError("grid must not be empty")
        return value

    @field_validator("dataset")
    @classmethod
    def _known_dataset(cls, value):
        if value not in GENERATOR_NAMES:
            raise ValueError(f"unknown dataset kind '{value}', expected one of {', '.join(GENERATOR_NAMES)}")
        return value

    @property
    def split_sizes(self):
        return (self.n_train, self.n_validation, self.n_test)

    def config_hash(self):
        return config_hash(self.model_dump())

    def with_overrides(self, **overrides):
        payload = self.model_dump()
        payload.update(overrides)
        return ExperimentConfig(**payload)


def _line_of(path, key):
    with open(path, "r", encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            stripped = line.strip()
            if stripped.startswith("export "):
                stripped = stripped[len("export "):]
            if stripped.split("=", 1)[0].strip() == key:
                return number
    return None


def load_experiment_config(path, **overrides):
    """
    Read a flat ``key = value`` experiment file
    Parameters:
        path: config file; blank lines and ``#`` comments are ignored
        overrides: values that win over the file
    Returns:
        ExperimentConfig
    Raises:
        ConfigError naming the offending key and its line
    """
    if not os.path.isfile(path):
        raise ConfigError(f"cannot read config file {path}")
    raw = dotenv_values(path)
    values = {}
    for key, value in raw.items():
        if value is None:
            raise ConfigError("missing '=' or value", key=key, line=_line_of(path, key))
        values[key] = value
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**values)
    except ValidationError as exc:
        error = exc.errors()[0]
        key = str(error["loc"][0]) if error.get("loc") else None
        if error.get("type") == "extra_forbidden":
            message = "unknown key"
        else:
            message = error.get("msg", "invalid value")
        raise ConfigError(message, key=key, line=_line_of(path, key) if key else None) from exc
