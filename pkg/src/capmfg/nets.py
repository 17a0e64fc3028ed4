"""Minimal feedforward approximator with exact reverse-mode gradients.

Only what the two solvers need: scalar-output MLPs with tanh hidden layers,
an affine output layer, exact backprop to parameters *and* inputs, and an
adaptive-moment (Adam) parameter update that degenerates to plain gradient
descent when both moment decay rates are zero.  Everything is numpy float64
and deterministic: initialisation uses the same counter-based generator as
the path sampler.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .noise import _uniforms

__all__ = [
    "Arch",
    "NetParams",
    "init",
    "forward",
    "backward",
    "backward_cached",
    "step",
    "save_net",
    "load_net",
]

_ACTIVATIONS = ("tanh",)


@dataclass(frozen=True)
class Arch:
    """Network shape: input width, hidden widths, smooth-saturating activation.

    ``output_scale`` multiplies the affine output; solvers use it to keep
    trainable parameters O(1) while targets live on physical scales.
    hidden_widths=() gives a bare affine map.
    """

    input_dim: int
    hidden_widths: tuple[int, ...] = (32, 32)
    activation: str = "tanh"
    output_dim: int = 1
    output_scale: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_widths", tuple(self.hidden_widths))
        if self.input_dim < 1 or self.output_dim != 1:
            raise ValueError(f"unsupported shape ({self.input_dim} -> {self.output_dim})")
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError(f"hidden widths must be >= 1, got {self.hidden_widths}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.isfinite(self.output_scale) and self.output_scale != 0.0):
            raise ValueError(f"output_scale must be finite and nonzero, got {self.output_scale}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_widths, self.output_dim]
        return list(zip(dims[1:], dims[:-1]))  # (fan_out, fan_in) per layer


@dataclass
class NetParams:
    """Weights/biases per layer plus Adam moment accumulators and step count."""

    arch: Arch
    weights: list[np.ndarray]  # W_k of shape (fan_out, fan_in)
    biases: list[np.ndarray]  # b_k of shape (fan_out,)
    m: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    v: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    t: int = 0

    def __post_init__(self) -> None:
        expected = self.arch.layer_dims
        shapes = [(w.shape, b.shape) for w, b in zip(self.weights, self.biases)]
        if len(self.weights) != len(expected) or any(
            w != (fo, fi) or b != (fo,) for (w, b), (fo, fi) in zip(shapes, expected)
        ):
            raise ValueError(f"parameter shapes {shapes} inconsistent with arch {self.arch}")
        if not all(np.isfinite(w).all() and np.isfinite(b).all() for w, b in zip(self.weights, self.biases)):
            raise ValueError("non-finite parameter entries")
        if not self.m:
            self.m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(self.weights, self.biases)]
            self.v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(self.weights, self.biases)]


def init(arch: Arch, seed: int) -> NetParams:
    """Glorot-uniform weights, zero biases; fully determined by (arch, seed)."""
    weights, biases = [], []
    for k, (fan_out, fan_in) in enumerate(arch.layer_dims):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        u = _uniforms(
            seed,
            k,
            np.arange(fan_out * fan_in, dtype=np.uint64),
            np.uint64(0),
        )
        weights.append(((2.0 * u - 1.0) * limit).reshape(fan_out, fan_in))
        biases.append(np.zeros(fan_out))
    return NetParams(arch=arch, weights=weights, biases=biases)


def _tanh(a: np.ndarray) -> np.ndarray:
    """tanh via exp: markedly faster than np.tanh on this numpy build.

    1 - 2/(e^{2a} + 1); the overflow of e^{2a} for large a saturates to
    exactly +-1, which is the correct limit.
    """
    with np.errstate(over="ignore"):
        return 1.0 - 2.0 / (np.exp(2.0 * a) + 1.0)


def _forward_cached(params: NetParams, x: np.ndarray):
    """Forward pass keeping per-layer activations for reuse by backward."""
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = h @ w.T + b
        h = a if k == last else _tanh(a)
        acts.append(h)
    return acts[-1][:, 0] * params.arch.output_scale, acts


def forward(params: NetParams, x) -> np.ndarray | float:
    """Evaluate the network; (d,) input gives a scalar, (B, d) gives (B,)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.arch.input_dim:
        raise ValueError(f"input shape {x.shape} incompatible with input_dim={params.arch.input_dim}")
    if not np.isfinite(x).all():
        raise ValueError("non-finite network input")
    out, _ = _forward_cached(params, x)
    return float(out[0]) if single else out


def backward_cached(params: NetParams, acts, upstream: np.ndarray):
    """Reverse pass reusing activations from ``_forward_cached``.

    Returns ``(grads, input_grads)`` for the weighted sum
    ``sum_j upstream_j * forward(params, inputs_j)``.
    """
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params.weights)  # type: ignore[list-item]
    g = upstream[:, None] * params.arch.output_scale  # grad w.r.t. output pre-activation
    for k in range(len(params.weights) - 1, -1, -1):
        h_in = acts[k]
        grads[k] = (g.T @ h_in, g.sum(axis=0))
        g = g @ params.weights[k]
        if k > 0:  # undo the tanh of the previous hidden layer
            g = g * (1.0 - h_in * h_in)
    return grads, g


def backward(params: NetParams, inputs, upstream):
    """Exact gradients of sum_j upstream_j * forward(params, inputs_j).

    Returns ``(grads, input_grads)`` where ``grads`` is a list of (dW, db)
    matching the layer list and ``input_grads`` has the shape of ``inputs``.
    """
    x = np.asarray(inputs, dtype=np.float64)
    u = np.asarray(upstream, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.arch.input_dim:
        raise ValueError(f"inputs shape {x.shape} incompatible with input_dim={params.arch.input_dim}")
    if u.shape != (x.shape[0],):
        raise ValueError(f"upstream shape {u.shape} must be ({x.shape[0]},)")
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    _, acts = _forward_cached(params, x)
    return backward_cached(params, acts, u)


def step(
    params: NetParams,
    grads,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> NetParams:
    """Adaptive-moment update in place; returns the same NetParams.

    With ``beta1 == beta2 == 0`` the update is plain gradient descent
    ``theta - lr * g`` (no per-coordinate scaling).
    """
    for k, (dw, db) in enumerate(grads):
        if not (np.isfinite(dw).all() and np.isfinite(db).all()):
            raise ValueError(f"non-finite gradient in layer {k}")
    params.t += 1
    plain = beta1 == 0.0 and beta2 == 0.0
    for k, (dw, db) in enumerate(grads):
        if plain:
            params.weights[k] -= lr * dw
            params.biases[k] -= lr * db
            continue
        mw, mb = params.m[k]
        vw, vb = params.v[k]
        mw *= beta1
        mw += (1.0 - beta1) * dw
        mb *= beta1
        mb += (1.0 - beta1) * db
        vw *= beta2
        vw += (1.0 - beta2) * dw * dw
        vb *= beta2
        vb += (1.0 - beta2) * db * db
        c1 = 1.0 - beta1**params.t
        c2 = 1.0 - beta2**params.t
        params.weights[k] -= lr * (mw / c1) / (np.sqrt(vw / c2) + eps)
        params.biases[k] -= lr * (mb / c1) / (np.sqrt(vb / c2) + eps)
    return params


# ---------------------------------------------------------------------------
# checkpoints: JSON arch header, then one float per line in layer order
# (W row-major, then b, layer by layer); full-precision reprs round-trip.
# ---------------------------------------------------------------------------


def save_net(path, params: NetParams) -> None:
    header = {
        "input_dim": params.arch.input_dim,
        "hidden_widths": list(params.arch.hidden_widths),
        "activation": params.arch.activation,
        "output_dim": params.arch.output_dim,
        "output_scale": params.arch.output_scale,
    }
    with open(path, "w", encoding="ascii") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for w, b in zip(params.weights, params.biases):
            for value in w.ravel():
                fh.write(repr(float(value)) + "\n")
            for value in b:
                fh.write(repr(float(value)) + "\n")


def load_net(path) -> NetParams:
    with open(path, "r", encoding="ascii") as fh:
        header = json.loads(fh.readline())
        values = [float(line) for line in fh if line.strip()]
    arch = Arch(
        input_dim=header["input_dim"],
        hidden_widths=tuple(header["hidden_widths"]),
        activation=header["activation"],
        output_dim=header["output_dim"],
        output_scale=header["output_scale"],
    )
    weights, biases = [], []
    pos = 0
    for fan_out, fan_in in arch.layer_dims:
        n = fan_out * fan_in
        weights.append(np.array(values[pos : pos + n]).reshape(fan_out, fan_in))
        pos += n
        biases.append(np.array(values[pos : pos + fan_out]))
        pos += fan_out
    if pos != len(values):
        raise ValueError(f"checkpoint {path} holds {len(values)} values, expected {pos}")
    return NetParams(arch=arch, weights=weights, biases=biases)
