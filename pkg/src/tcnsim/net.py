"""Small fully-connected nets with hand-derived reverse-mode gradients.

One class covers the three roles in this package: the observation embedding
(sigmoid-weighted linear hidden units, optionally unit-normalized output), the
frame-order classifier head, and the joints decoder. The activation is smooth
everywhere so central-difference gradient checks hold to tight tolerances.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .numerics import SeededRng

CHECKPOINT_VERSION = 1
_NORM_FLOOR = 1e-30


class DivergenceError(RuntimeError):
    """A gradient or update produced non-finite values."""


@dataclass
class Mlp:
    """Feed-forward net: hidden layers use x*sigmoid(x), output layer is linear.

    With ``normalize`` set the output is projected to the unit sphere, which is
    what gives the triplet margin a fixed scale.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    normalize: bool = False

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def layer_widths(self) -> list[int]:
        return [self.input_dim] + [w.shape[1] for w in self.weights]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def parameter_names(self) -> list[str]:
        names = []
        for i in range(len(self.weights)):
            names.append(f"W{i}")
            names.append(f"b{i}")
        return names


def new_mlp(
    rng: SeededRng,
    input_dim: int,
    hidden: tuple[int, ...],
    output_dim: int,
    normalize: bool = False,
) -> Mlp:
    """He-style random init scaled for the smooth activation."""
    widths = [input_dim, *hidden, output_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        scale = np.sqrt(2.0 / fan_in)
        weights.append(rng.normal((fan_in, fan_out)) * scale)
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases, normalize=normalize)


def new_embedding_net(
    rng: SeededRng,
    input_dim: int,
    hidden: tuple[int, ...] = (128, 64),
    output_dim: int = 32,
    normalize: bool = True,
) -> Mlp:
    return new_mlp(rng, input_dim, hidden, output_dim, normalize=normalize)


def forward(net: Mlp, batch: np.ndarray, want_cache: bool = False):
    """Map a batch of observations (B, D) to embeddings (B, d).

    A single vector is accepted and returned as a vector.
    """
    x = np.asarray(batch, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != net.input_dim:
        raise ValueError(f"observation dim {x.shape[1]} != net input dim {net.input_dim}")

    pre_acts = []
    hiddens = [x]
    h = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = h @ w + b
        pre_acts.append(z)
        h = _kernels.silu(z)
        hiddens.append(h)
    z_out = h @ net.weights[-1] + net.biases[-1]

    if net.normalize:
        norms = np.maximum(np.linalg.norm(z_out, axis=1, keepdims=True), _NORM_FLOOR)
        out = z_out / norms
    else:
        norms = None
        out = z_out

    if want_cache:
        cache = (hiddens, pre_acts, z_out, norms)
        return (out[0] if single else out), cache
    return out[0] if single else out


def backward(net: Mlp, cache, upstream: np.ndarray):
    """Gradients of sum_i <upstream_i, f(x_i)> w.r.t. parameters and inputs.

    Returns (param_grads, input_grads) where param_grads is ordered like
    ``net.parameters()``. Includes the unit-norm Jacobian when normalization
    is on.
    """
    hiddens, pre_acts, z_out, norms = cache
    g = np.asarray(upstream, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != z_out.shape:
        raise ValueError(f"upstream shape {g.shape} != output shape {z_out.shape}")

    if net.normalize:
        y = z_out / norms
        g = (g - y * np.sum(g * y, axis=1, keepdims=True)) / norms

    weight_grads = [None] * len(net.weights)
    bias_grads = [None] * len(net.biases)
    delta = g
    for layer in range(len(net.weights) - 1, -1, -1):
        h_in = hiddens[layer]
        weight_grads[layer] = h_in.T @ delta
        bias_grads[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ net.weights[layer].T) * _kernels.silu_grad(pre_acts[layer - 1])
        else:
            delta = delta @ net.weights[layer].T

    param_grads = []
    for wg, bg in zip(weight_grads, bias_grads):
        param_grads.append(wg)
        param_grads.append(bg)
    return param_grads, delta


@dataclass
class AdamState:
    """First/second moment accumulators, one slot per parameter tensor."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def new_optimizer(net: Mlp, learning_rate: float = 1e-3) -> AdamState:
    params = net.parameters()
    return AdamState(
        learning_rate=learning_rate,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def train_step(net: Mlp, opt: AdamState, grads: list[np.ndarray]) -> None:
    """One adaptive-moment update, in place. Raises on non-finite gradients."""
    params = net.parameters()
    names = net.parameter_names()
    if len(grads) != len(params):
        raise ValueError(f"expected {len(params)} gradient tensors, got {len(grads)}")
    for name, p, g in zip(names, params, grads):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {name} shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in parameter {name}")

    opt.step_count += 1
    t = opt.step_count
    bias1 = 1.0 - opt.beta1**t
    bias2 = 1.0 - opt.beta2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g
        opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * g * g
        m_hat = opt.m[i] / bias1
        v_hat = opt.v[i] / bias2
        p -= opt.learning_rate * m_hat / (np.sqrt(v_hat) + opt.epsilon)


# ---------------------------------------------------------------------------
# flattened-parameter helpers (used by the finite-difference gradient checks)
# ---------------------------------------------------------------------------

def flatten_params(net: Mlp) -> np.ndarray:
    return np.concatenate([p.ravel() for p in net.parameters()])


def set_params_from_flat(net: Mlp, flat: np.ndarray) -> None:
    offset = 0
    for p in net.parameters():
        n = p.size
        p[...] = flat[offset : offset + n].reshape(p.shape)
        offset += n
    if offset != flat.size:
        raise ValueError(f"flat vector has {flat.size} entries, net needs {offset}")


def flatten_grads(grads: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([g.ravel() for g in grads])


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

def save_checkpoint(path, net: Mlp, optimizer: AdamState | None = None, meta: dict | None = None) -> None:
    """Versioned npz container: layer widths, flags, float64 tensors, optimizer
    state, and whatever metadata the caller stamps (e.g. the config hash)."""
    payload: dict[str, np.ndarray] = {}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        payload[f"W{i}"] = w
        payload[f"b{i}"] = b
    header = {
        "version": CHECKPOINT_VERSION,
        "n_layers": len(net.weights),
        "layer_widths": net.layer_widths,
        "normalize": bool(net.normalize),
        "activation": "silu",
        "meta": meta or {},
    }
    if optimizer is not None:
        header["optimizer"] = {
            "learning_rate": optimizer.learning_rate,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "epsilon": optimizer.epsilon,
            "step_count": optimizer.step_count,
        }
        for i, (m, v) in enumerate(zip(optimizer.m, optimizer.v)):
            payload[f"adam_m{i}"] = m
            payload[f"adam_v{i}"] = v
    payload["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path):
    """Returns (net, optimizer or None, meta dict)."""
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode("utf-8"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        n_layers = header["n_layers"]
        weights = [data[f"W{i}"].astype(np.float64) for i in range(n_layers)]
        biases = [data[f"b{i}"].astype(np.float64) for i in range(n_layers)]
        net = Mlp(weights, biases, normalize=header["normalize"])
        optimizer = None
        if "optimizer" in header:
            opt_h = header["optimizer"]
            optimizer = AdamState(
                learning_rate=opt_h["learning_rate"],
                beta1=opt_h["beta1"],
                beta2=opt_h["beta2"],
                epsilon=opt_h["epsilon"],
                step_count=opt_h["step_count"],
                m=[data[f"adam_m{i}"] for i in range(n_layers * 2)],
                v=[data[f"adam_v{i}"] for i in range(n_layers * 2)],
            )
    return net, optimizer, header["meta"]
