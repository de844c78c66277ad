"""
Reverse-mode differentiation layer.

The engine is ``torch.autograd`` running in float64. This module fixes the
set of primitives every network and objective is written in, gives them
shape checking, and adds the parameter bookkeeping (``ParameterSet``) and
finite-difference harness (``check_gradients``) the rest of the package uses.

A ``Graph`` is a callable ``fn(params, *inputs)`` composed of the primitives
below. Calling ``Graph.trace`` records the ordered list of primitive
applications, which is handy when debugging shapes.
"""

import contextlib
import contextvars
import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch
from torch.nn.utils import parameters_to_vector, vector_to_parameters

from .config import LEAKY_SLOPE
from .errors import NonFiniteError, ShapeError

DTYPE = torch.float64
LOG_2PI = math.log(2.0 * math.pi)

Value = torch.Tensor

_TAPE = contextvars.ContextVar("vaelab_tape", default=None)


@dataclass(frozen=True)
class OpRecord:
    name: str
    input_shapes: tuple
    output_shape: tuple


def _record(name, inputs, output):
    tape = _TAPE.get()
    if tape is not None:
        tape.append(OpRecord(name, tuple(tuple(t.shape) for t in inputs), tuple(output.shape)))
    return output


def as_value(data):
    """Float64 tensor from anything array-like."""
    if isinstance(data, torch.Tensor):
        return data.to(DTYPE)
    return torch.as_tensor(np.asarray(data, dtype=np.float64))


# -- primitives ---------------------------------------------------------------

def affine(x, weight, bias=None):
    if x.shape[-1] != weight.shape[-1]:
        raise ShapeError(
            f"affine: input shape {tuple(x.shape)} incompatible with weight shape {tuple(weight.shape)}"
        )
    if bias is not None and bias.shape[-1] != weight.shape[0]:
        raise ShapeError(
            f"affine: bias shape {tuple(bias.shape)} incompatible with weight shape {tuple(weight.shape)}"
        )
    out = x @ weight.transpose(-1, -2)
    if bias is not None:
        out = out + bias
    return _record("affine", (x, weight), out)


def leaky_relu(x, slope=LEAKY_SLOPE):
    return _record("leaky_relu", (x,), torch.nn.functional.leaky_relu(x, negative_slope=slope))


def tanh(x):
    return _record("tanh", (x,), torch.tanh(x))


def exp(x):
    return _record("exp", (x,), torch.exp(x))


def log(x):
    return _record("log", (x,), torch.log(x))


def square(x):
    return _record("square", (x,), x * x)


def sum(x, dim=None):  # noqa: A001
    out = x.sum() if dim is None else x.sum(dim=dim)
    return _record("sum", (x,), out)


def mean(x, dim=None):
    out = x.mean() if dim is None else x.mean(dim=dim)
    return _record("mean", (x,), out)


def logsumexp(x, dim=-1):
    return _record("logsumexp", (x,), torch.logsumexp(x, dim=dim))


class _DiagGaussianLogDensity(torch.autograd.Function):
    """Elementwise log N(x; mean, exp(log_var)) with an analytic backward."""

    @staticmethod
    def forward(ctx, x, mu, log_var):
        inv_var = torch.exp(-log_var)
        diff = x - mu
        ctx.save_for_backward(diff, inv_var)
        return -0.5 * (LOG_2PI + log_var + diff * diff * inv_var)

    @staticmethod
    def backward(ctx, grad_out):
        diff, inv_var = ctx.saved_tensors
        scaled = diff * inv_var
        grad_x = -grad_out * scaled
        grad_mu = grad_out * scaled
        grad_log_var = grad_out * 0.5 * (diff * scaled - 1.0)
        return grad_x, grad_mu, grad_log_var


def diag_gaussian_log_density(x, mu, log_var):
    """
    Elementwise diagonal-Gaussian log-density, not summed over dimensions
    Parameters:
        x, mu, log_var: broadcast-compatible tensors
    Returns:
        tensor of the broadcast shape
    """
    try:
        x_b, mu_b, lv_b = torch.broadcast_tensors(x, mu, log_var)
    except RuntimeError as exc:
        raise ShapeError(
            f"diag_gaussian_log_density: shapes {tuple(x.shape)}, {tuple(mu.shape)}, "
            f"{tuple(log_var.shape)} do not broadcast"
        ) from exc
    out = _DiagGaussianLogDensity.apply(x_b, mu_b, lv_b)
    return _record("diag_gaussian_log_density", (x, mu, log_var), out)


# -- parameters ---------------------------------------------------------------

class ParameterSet:
    """Ordered name -> tensor mapping with a flat-vector view."""

    def __init__(self, tensors=None):
        self._tensors = OrderedDict()
        for name, tensor in (tensors or {}).items():
            if not isinstance(tensor, torch.Tensor):
                tensor = as_value(tensor)
            if tensor.dtype != DTYPE:
                tensor = tensor.to(DTYPE)
            if not tensor.requires_grad and tensor.is_leaf:
                tensor.requires_grad_(True)
            self._tensors[name] = tensor

    @classmethod
    def from_module(cls, module, trainable_only=True):
        return cls(
            OrderedDict(
                (name, p) for name, p in module.named_parameters() if p.requires_grad or not trainable_only
            )
        )

    def __getitem__(self, name):
        return self._tensors[name]

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def __contains__(self, name):
        return name in self._tensors

    def names(self):
        return list(self._tensors)

    def tensors(self):
        return list(self._tensors.values())

    def items(self):
        return self._tensors.items()

    @property
    def shapes(self):
        return OrderedDict((name, tuple(t.shape)) for name, t in self._tensors.items())

    @property
    def size(self):
        return int(np.sum([t.numel() for t in self._tensors.values()]))

    def flatten(self):
        if not self._tensors:
            return torch.zeros(0, dtype=DTYPE)
        return parameters_to_vector(self.tensors()).detach().clone()

    def unflatten(self, vector):
        """New detached ParameterSet with this set's names and shapes."""
        vector = as_value(vector)
        if vector.numel() != self.size:
            raise ShapeError(f"unflatten: vector of length {vector.numel()} for {self.size} parameters")
        out = OrderedDict()
        offset = 0
        for name, tensor in self._tensors.items():
            n = tensor.numel()
            out[name] = vector[offset:offset + n].reshape(tensor.shape).clone()
            offset += n
        return ParameterSet(out)

    @torch.no_grad()
    def assign_flat(self, vector):
        """Overwrite the tracked tensors in place from a flat vector."""
        vector = as_value(vector)
        if vector.numel() != self.size:
            raise ShapeError(f"assign_flat: vector of length {vector.numel()} for {self.size} parameters")
        vector_to_parameters(vector, self.tensors())

    def locate(self, index):
        """(name, multi-index) of a flat coordinate."""
        offset = 0
        for name, tensor in self._tensors.items():
            n = tensor.numel()
            if index < offset + n:
                return name, tuple(int(i) for i in np.unravel_index(index - offset, tuple(tensor.shape)))
            offset += n
        raise IndexError(index)


# -- graphs -------------------------------------------------------------------

@dataclass
class Graph:
    fn: Callable
    name: str = "graph"
    expected_input_dims: Optional[tuple] = None

    def __call__(self, params, *inputs):
        if self.expected_input_dims is not None:
            for i, (value, dim) in enumerate(zip(inputs, self.expected_input_dims)):
                if dim is not None and value.shape[-1] != dim:
                    raise ShapeError(
                        f"{self.name}: input {i} has shape {tuple(value.shape)}, expected last dimension {dim}"
                    )
        return self.fn(params, *inputs)

    def trace(self, params, *inputs):
        tape = []
        token = _TAPE.set(tape)
        try:
            with torch.no_grad():
                self(params, *(as_value(v) for v in inputs))
        finally:
            _TAPE.reset(token)
        return tape


def evaluate(graph, params, *inputs):
    with torch.no_grad():
        return graph(params, *(as_value(v) for v in inputs))


def gradient(graph, params, *inputs):
    """
    Reverse-mode gradient of a scalar graph output
    Returns:
        ParameterSet of gradients, zero for parameters the output ignores
    """
    out = graph(params, *(as_value(v) for v in inputs))
    if out.numel() != 1:
        raise ShapeError(f"{graph.name}: gradient needs a scalar output, got shape {tuple(out.shape)}")
    grads = torch.autograd.grad(out.reshape(()), params.tensors(), allow_unused=True)
    return ParameterSet(
        OrderedDict(
            (name, (torch.zeros_like(t) if g is None else g).detach())
            for (name, t), g in zip(params.items(), grads)
        )
    )


@contextlib.contextmanager
def _restored(params):
    original = params.flatten()
    try:
        yield original
    finally:
        params.assign_flat(original)


def check_gradients(fn, params, step=1e-5):
    """
    Compare reverse-mode gradients with central finite differences
    Parameters:
        fn: callable taking ``params`` and returning a scalar tensor
        params: ParameterSet whose tensors ``fn`` reads
        step: finite-difference step
    Returns:
        max over coordinates of |analytic - numeric| / max(1, |analytic|)
    """
    analytic = gradient(Graph(lambda p: fn(p), name=getattr(fn, "__name__", "fn")), params).flatten()
    if not torch.isfinite(analytic).all():
        bad = int(torch.nonzero(~torch.isfinite(analytic))[0])
        raise NonFiniteError(f"non-finite analytic gradient at {params.locate(bad)}")

    worst = 0.0
    with _restored(params) as base:
        for i in range(base.numel()):
            shifted = base.clone()
            shifted[i] += step
            params.assign_flat(shifted)
            with torch.no_grad():
                plus = float(fn(params))
            shifted[i] -= 2.0 * step
            params.assign_flat(shifted)
            with torch.no_grad():
                minus = float(fn(params))
            if not (math.isfinite(plus) and math.isfinite(minus)):
                raise NonFiniteError(f"non-finite function value while perturbing {params.locate(i)}")
            numeric = (plus - minus) / (2.0 * step)
            a = float(analytic[i])
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
