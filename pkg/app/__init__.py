"""VAE Pathology Lab - global-optima failure modes of mean-field Gaussian VAEs"""

__version__ = "0.1.0"
__author__ = "VAE Pathology Lab Team"

from app.core.config import ExperimentConfig
from app.core.interface import PathologyLab

__all__ = [
    "ExperimentConfig",
    "PathologyLab",
]
