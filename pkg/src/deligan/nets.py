"""Dense MLPs, weight initialization, optimizers and checkpoint records."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ACTIVATIONS = ("relu", "leaky_relu", "tanh", "sigmoid", "none")
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    """Invalid model, optimizer or experiment configuration."""


@dataclass
class Layer:
    weight: Tensor
    bias: Tensor
    activation: str = "none"
    slope: float = 0.2

    def __call__(self, x: Tensor) -> Tensor:
        h = ad.add_bias(ad.matmul(x, self.weight), self.bias)
        return _activate(h, self.activation, self.slope)


def _activate(h: Tensor, activation: str, slope: float) -> Tensor:
    if activation == "relu":
        return ad.relu(h)
    if activation == "leaky_relu":
        return ad.leaky_relu(h, slope)
    if activation == "tanh":
        return ad.tanh(h)
    if activation == "sigmoid":
        return ad.sigmoid(h)
    return h


@dataclass
class Mlp:
    layers: list[Layer]

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].weight.shape[0]] + [l.weight.shape[1] for l in self.layers]

    @property
    def activations(self) -> list[str]:
        return [l.activation for l in self.layers]

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    def parameters(self) -> list[Tensor]:
        out = []
        for l in self.layers:
            out.extend((l.weight, l.bias))
        return out

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def __call__(self, x) -> Tensor:
        return mlp_forward(self, x)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Forward pass on raw arrays with no graph recording."""
        h = np.asarray(x, dtype=np.float64)
        for l in self.layers:
            h = _activate_np(h @ l.weight.values + l.bias.values, l.activation, l.slope)
        return h


def _activate_np(h: np.ndarray, activation: str, slope: float) -> np.ndarray:
    if activation == "relu":
        return np.maximum(h, 0.0)
    if activation == "leaky_relu":
        return np.where(h > 0, h, h * slope)
    if activation == "tanh":
        return np.tanh(h)
    if activation == "sigmoid":
        ez = np.exp(-np.abs(h))
        return np.where(h >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))
    return h


def mlp_new(
    layer_sizes: Sequence[int],
    activations: Sequence[str],
    rng: np.random.Generator,
    init: str = "xavier_uniform",
    std: float = 0.02,
    slope: float = 0.2,
    name: str = "mlp",
) -> Mlp:
    """Build an MLP with weights drawn per ``init`` and zero biases.

    ``init`` is ``"xavier_uniform"`` or ``"normal"`` (uses ``std``).
    """
    if len(layer_sizes) < 2:
        raise ConfigError(f"need at least input and output sizes, got {list(layer_sizes)}")
    if len(activations) != len(layer_sizes) - 1:
        raise ConfigError(
            f"{len(layer_sizes) - 1} layers need as many activations, got {len(activations)}")
    if any(int(s) < 1 for s in layer_sizes):
        raise ConfigError(f"layer sizes must be positive: {list(layer_sizes)}")
    layers = []
    for i, (fan_in, fan_out, act) in enumerate(zip(layer_sizes, layer_sizes[1:], activations)):
        if act not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {act!r}")
        if init == "xavier_uniform":
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        elif init == "normal":
            w = rng.normal(0.0, std, size=(fan_in, fan_out))
        else:
            raise ConfigError(f"unknown init {init!r}")
        layers.append(Layer(
            Tensor(w, requires_grad=True, name=f"{name}.{i}.weight"),
            Tensor(np.zeros(fan_out), requires_grad=True, name=f"{name}.{i}.bias"),
            act, slope,
        ))
    return Mlp(layers)


def mlp_forward(m: Mlp, x) -> Tensor:
    x = ad.as_tensor(x)
    if x.values.ndim != 2 or x.shape[1] != m.in_dim:
        raise ad.ShapeError(f"mlp_forward: input shape {x.shape}, network expects (*, {m.in_dim})")
    for layer in m.layers:
        x = layer(x)
    return x


# ---------------------------------------------------------------------------
# optimizers


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    names: Optional[Sequence[str]] = None,
) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    ``params`` may be views into larger buffers, which is how a subset of rows
    gets its own optimizer.
    """
    for i, g in enumerate(grads):
        if not np.isfinite(g).all():
            label = names[i] if names else f"#{i}"
            raise FloatingPointError(f"non-finite gradient for parameter {label}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float) -> None:
    for p, g in zip(params, grads):
        p -= lr * g


class Adam:
    """Adam over a fixed list of tensors."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.5,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr, beta1, beta2, eps)

    def zero_grad(self) -> None:
        ad.zero_grad(self.params)

    def step(self) -> None:
        adam_step([p.values for p in self.params],
                  [p.grad if p.grad is not None else np.zeros_like(p.values) for p in self.params],
                  self.state, [p.name or "?" for p in self.params])


# ---------------------------------------------------------------------------
# checkpoints
#
# JSON with floats written via repr, which round-trips float64 exactly.


def mlp_to_dict(m: Mlp) -> dict:
    return {
        "sizes": m.sizes,
        "activations": m.activations,
        "slopes": [l.slope for l in m.layers],
        "weights": [l.weight.values.tolist() for l in m.layers],
        "biases": [l.bias.values.tolist() for l in m.layers],
    }


def mlp_from_dict(d: dict, name: str = "mlp") -> Mlp:
    sizes = d["sizes"]
    layers = []
    for i, (act, slope, w, b) in enumerate(zip(d["activations"], d["slopes"], d["weights"], d["biases"])):
        wt = Tensor(np.array(w, dtype=np.float64).reshape(sizes[i], sizes[i + 1]),
                    requires_grad=True, name=f"{name}.{i}.weight")
        bt = Tensor(np.array(b, dtype=np.float64).reshape(sizes[i + 1]),
                    requires_grad=True, name=f"{name}.{i}.bias")
        layers.append(Layer(wt, bt, act, slope))
    return Mlp(layers)


def save_mlp(m: Mlp, path) -> None:
    with open(path, "w") as f:
        json.dump({"version": CHECKPOINT_VERSION, "kind": "mlp", "mlp": mlp_to_dict(m)}, f)


def load_mlp(path) -> Mlp:
    with open(path) as f:
        d = json.load(f)
    if d.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {d.get('version')!r}")
    return mlp_from_dict(d["mlp"])
