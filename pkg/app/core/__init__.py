import torch

torch.set_default_dtype(torch.float64)

from .interface import PathologyLab  # noqa: E402
