"""Dense-network substrate: layers, reverse-mode gradients, Adam.

Matrices are plain 2-D ``float64`` numpy arrays with one sample per row.
A :class:`Network` records what each layer saw on the forward pass so that
:meth:`Network.backward` can return both parameter gradients and the
gradient with respect to the network input.  The latter is what lets the
discriminator's gradient flow back into the generator and encoder.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError, StateError

PROB_EPS = 1e-7
_PROB_DOMAIN_TOL = 1e-9


class Activation(str, enum.Enum):
    LEAKY_RELU = "leaky_relu"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    IDENTITY = "identity"


def as_matrix(x, cols: int | None = None) -> np.ndarray:
    """Coerce ``x`` to a finite 2-D float64 array, promoting vectors to one row."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got {m.ndim} dims")
    if cols is not None and m.shape[1] != cols:
        raise ShapeError(f"expected {cols} columns, got {m.shape[1]}")
    if not np.all(np.isfinite(m)):
        raise DomainError("matrix contains NaN or Inf")
    return m


def _sigmoid(a: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


class DenseLayer:
    """Fully connected layer ``y = act(x @ W.T + b)`` with ``W`` of shape (out, in)."""

    def __init__(self, weights, bias, activation: Activation | str = Activation.IDENTITY,
                 slope: float = 0.2):
        self.weights = np.array(weights, dtype=np.float64, ndmin=2)
        self.bias = np.array(bias, dtype=np.float64).reshape(-1)
        self.activation = Activation(activation)
        self.slope = float(slope)
        if self.bias.shape[0] != self.weights.shape[0]:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} != weight rows {self.weights.shape[0]}")
        if self.activation is Activation.LEAKY_RELU and not 0.0 < self.slope < 1.0:
            raise DomainError(f"LeakyReLU slope must lie in (0, 1), got {self.slope}")
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)
        self._cache: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None

    @classmethod
    def init(cls, n_in: int, n_out: int, activation: Activation | str,
             rng: np.random.Generator, slope: float = 0.2) -> "DenseLayer":
        return cls(glorot_uniform(n_in, n_out, rng), np.zeros(n_out), activation, slope)

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def parameters(self) -> list[np.ndarray]:
        return [self.weights, self.bias]

    def gradients(self) -> list[np.ndarray]:
        return [self.grad_weights, self.grad_bias]

    def _activate(self, a: np.ndarray) -> np.ndarray:
        act = self.activation
        if act is Activation.LEAKY_RELU:
            return np.where(a > 0, a, self.slope * a)
        if act is Activation.SIGMOID:
            return _sigmoid(a)
        if act is Activation.TANH:
            return np.tanh(a)
        return a

    def _activation_grad(self, a: np.ndarray, y: np.ndarray) -> np.ndarray:
        act = self.activation
        if act is Activation.LEAKY_RELU:
            return np.where(a > 0, 1.0, self.slope)
        if act is Activation.SIGMOID:
            return y * (1.0 - y)
        if act is Activation.TANH:
            return 1.0 - y * y
        return np.ones_like(a)

    def forward(self, x: np.ndarray) -> np.ndarray:
        a = x @ self.weights.T + self.bias
        y = self._activate(a)
        self._cache = (x, a, y)
        return y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise StateError("backward called without a recorded forward pass")
        x, a, y = self._cache
        if grad_out.shape != y.shape:
            raise ShapeError(f"output gradient shape {grad_out.shape} != output shape {y.shape}")
        grad_a = grad_out * self._activation_grad(a, y)
        self.grad_weights = grad_a.T @ x
        self.grad_bias = grad_a.sum(axis=0)
        self._cache = None
        return grad_a @ self.weights

    def to_dict(self) -> dict:
        return {
            "n_in": self.n_in,
            "n_out": self.n_out,
            "activation": self.activation.value,
            "slope": self.slope,
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DenseLayer":
        layer = cls(d["weights"], d["bias"], d["activation"], d.get("slope", 0.2))
        if (layer.n_in, layer.n_out) != (d["n_in"], d["n_out"]):
            raise ShapeError("layer dims in checkpoint disagree with stored weights")
        return layer


class Network:
    """A stack of dense layers evaluated in order."""

    def __init__(self, layers: list[DenseLayer], name: str = "net"):
        if not layers:
            raise ShapeError("a network needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].n_in != layers[i - 1].n_out:
                raise ShapeError(
                    f"{name} layer {i} expects {layers[i].n_in} inputs but layer {i - 1} "
                    f"emits {layers[i - 1].n_out}")
        self.layers = layers
        self.name = name

    @classmethod
    def build(cls, sizes: list[int], hidden: Activation | str, final: Activation | str,
              rng: np.random.Generator, slope: float = 0.2, name: str = "net") -> "Network":
        """Glorot-initialised stack through ``sizes`` (input, hiddens..., output)."""
        layers = []
        for i in range(len(sizes) - 1):
            act = final if i == len(sizes) - 2 else hidden
            layers.append(DenseLayer.init(sizes[i], sizes[i + 1], act, rng, slope))
        return cls(layers, name)

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.parameters()]

    def gradients(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.gradients()]

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.grad_weights = np.zeros_like(layer.weights)
            layer.grad_bias = np.zeros_like(layer.bias)

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ShapeError(f"{self.name}: input must be 2-D, got {x.ndim} dims")
        for i, layer in enumerate(self.layers):
            if x.shape[1] != layer.n_in:
                raise ShapeError(
                    f"{self.name} layer {i}: expected {layer.n_in} input columns, "
                    f"got {x.shape[1]}")
            x = layer.forward(x)
        return x

    __call__ = forward

    def backward(self, grad_out) -> np.ndarray:
        """Fill every layer's gradient buffers and return d(loss)/d(input)."""
        g = np.asarray(grad_out, dtype=np.float64)
        if self.layers[-1]._cache is None:
            raise StateError(f"{self.name}: backward called without a recorded forward pass")
        self.zero_grad()
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def snapshot(self) -> list[np.ndarray]:
        return [p.copy() for p in self.parameters()]

    def to_dict(self) -> dict:
        return {"name": self.name, "layers": [layer.to_dict() for layer in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "Network":
        return cls([DenseLayer.from_dict(x) for x in d["layers"]], d.get("name", "net"))


@dataclass
class AdamState:
    """Moment accumulators and step count for one parameter list."""

    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[np.ndarray], **hyper) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params], **hyper)

    def to_dict(self) -> dict:
        return {
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "t": self.t,
            "m": [a.tolist() for a in self.m],
            "v": [a.tolist() for a in self.v],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdamState":
        return cls(lr=d["lr"], beta1=d["beta1"], beta2=d["beta2"], eps=d["eps"], t=d["t"],
                   m=[np.array(a, dtype=np.float64) for a in d["m"]],
                   v=[np.array(a, dtype=np.float64) for a in d["v"]])


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              lr: float | None = None) -> tuple[list[np.ndarray], AdamState]:
    """Apply one bias-corrected Adam update to ``params`` in place.

    ``lr`` overrides ``state.lr`` for this step only; the alignment phase uses
    this to run at its own rate while sharing moments with the adversarial
    phase of the same network.
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError("params, grads and optimizer state have different lengths")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.m[i].shape or p.shape != state.v[i].shape:
            raise ShapeError(f"parameter {i}: shape {p.shape} disagrees with grad/state")
    step_lr = state.lr if lr is None else lr
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= step_lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def bce_terms(p) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(log p, log(1 - p))`` with ``p`` clamped to ``[PROB_EPS, 1 - PROB_EPS]``."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(~np.isfinite(p)) or np.any(p < -_PROB_DOMAIN_TOL) or np.any(p > 1 + _PROB_DOMAIN_TOL):
        raise DomainError("probabilities must lie in [0, 1]")
    q = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return np.log(q), np.log1p(-q)


def bce_grads(p) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of the two :func:`bce_terms` outputs with respect to ``p``.

    Zero where the clamp is active, matching the clamped forward values.
    """
    p = np.asarray(p, dtype=np.float64)
    inside = (p > PROB_EPS) & (p < 1.0 - PROB_EPS)
    q = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return np.where(inside, 1.0 / q, 0.0), np.where(inside, -1.0 / (1.0 - q), 0.0)
