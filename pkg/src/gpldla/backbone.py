"""Feature extractors: identity, linear, or one-hidden-layer MLP.

Outputs are optionally projected to the unit sphere, which is what the
discriminant head expects (cosine-style geometry for its weights).
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError
from .rng import Rng

ARCH_KINDS = ("identity", "linear", "mlp")
ACTIVATIONS = ("relu", "tanh")


@dataclass
class ArchSpec:
    kind: str = "mlp"
    in_dim: int = 16
    out_dim: int = 32
    hidden: int = 64
    activation: str = "relu"
    normalize: bool = True

    def __post_init__(self):
        if self.kind not in ARCH_KINDS:
            raise ContractError(f"unknown backbone kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        if self.kind == "identity":
            self.out_dim = self.in_dim
        if self.in_dim < 1 or self.out_dim < 1 or (self.kind == "mlp" and self.hidden < 1):
            raise ContractError("backbone dimensions must be positive")


def init_params(spec: ArchSpec, rng: Rng) -> dict:
    """Gaussian fan-in init for weights, zeros for biases."""
    params = {}

    def dense(name, fan_in, fan_out):
        params[f"w{name}"] = rng.normal((fan_in, fan_out)) / np.sqrt(fan_in)
        params[f"b{name}"] = np.zeros(fan_out)

    if spec.kind == "linear":
        dense(0, spec.in_dim, spec.out_dim)
    elif spec.kind == "mlp":
        dense(0, spec.in_dim, spec.hidden)
        dense(1, spec.hidden, spec.out_dim)
    return params


def wrap_params(arrays: dict) -> dict:
    """Lift a dict of ndarrays into differentiable leaf tensors."""
    return {name: T.parameter(value) for name, value in arrays.items()}


def _activate(spec, h):
    if spec.activation == "relu":
        return T.relu(h)
    return T.tanh(h)


def forward(spec: ArchSpec, params: dict, x, normalize=None):
    """Map raw inputs (n, in_dim) to embeddings (n, out_dim).

    `normalize=None` defers to `spec.normalize`; pass False to read
    the pre-projection activations.
    """
    x = T.as_tensor(x)
    if x.data.ndim != 2 or x.data.shape[1] != spec.in_dim:
        raise ContractError(
            f"backbone expects (n, {spec.in_dim}) inputs, got {x.data.shape}")
    if spec.kind == "identity":
        out = x
    elif spec.kind == "linear":
        out = T.linear(x, params["w0"], params["b0"])
    else:
        h = _activate(spec, T.linear(x, params["w0"], params["b0"]))
        out = T.linear(h, params["w1"], params["b1"])
    if normalize is None:
        normalize = spec.normalize
    if normalize:
        out = T.normalize_rows(out)
    return out
