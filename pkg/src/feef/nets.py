"""Dense feedforward networks with hand-written backprop and Adam.

A :class:`DenseNet` may carry a leading *member* axis on every weight and
bias, in which case it represents a stack of independent networks that share
an architecture (an ensemble).  Inputs then carry the same leading axis and all
members are evaluated and trained in one vectorised pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("swish", "relu", "linear")
VARIANCE_FLOOR = 1e-6
LOG_2PI = math.log(2.0 * math.pi)


class ContractError(ValueError):
    """Raised when an input violates a shape or domain contract."""


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    # tanh form: overflow-free and much faster than scipy's expit here
    return 0.5 + 0.5 * np.tanh(0.5 * x)


def _activate(z, kind):
    if kind == "swish":
        return z * sigmoid(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


@dataclass
class DenseNet:
    """Fully connected network.

    ``weights[k]`` has shape ``(*lead, out, in)`` and ``biases[k]`` shape
    ``(*lead, out)``; ``lead`` is either empty or ``(n_members,)``.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]
    members: int | None = field(default=None)

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ContractError("weights, biases and activations must have equal length")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ContractError(f"unknown activation {act!r}")
        lead = 0 if self.members is None else 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 + lead or b.ndim != 1 + lead:
                raise ContractError(f"layer {k}: wrong rank for weight/bias")
            if w.shape[-2] != b.shape[-1]:
                raise ContractError(f"layer {k}: bias length {b.shape[-1]} != out {w.shape[-2]}")
            if k > 0 and self.weights[k - 1].shape[-2] != w.shape[-1]:
                raise ContractError(f"layer {k}: input {w.shape[-1]} does not chain")
            if lead and (w.shape[0] != self.members or b.shape[0] != self.members):
                raise ContractError(f"layer {k}: member axis mismatch")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[-1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[-2]

    def params(self) -> list[np.ndarray]:
        """Flat parameter list in the order ``[W0, b0, W1, b1, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def member(self, index: int) -> DenseNet:
        if self.members is None:
            raise ContractError("not a stacked network")
        if not 0 <= index < self.members:
            raise IndexError(f"member index {index} out of range for {self.members} members")
        return DenseNet(
            [w[index] for w in self.weights],
            [b[index] for b in self.biases],
            list(self.activations),
        )

    def copy(self) -> DenseNet:
        return DenseNet(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
            self.members,
        )

    def astype(self, dtype) -> DenseNet:
        return DenseNet(
            [w.astype(dtype) for w in self.weights],
            [b.astype(dtype) for b in self.biases],
            list(self.activations),
            self.members,
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())


def stack_nets(nets: list[DenseNet]) -> DenseNet:
    """Stack single networks with identical architecture into one ensemble net."""
    if not nets:
        raise ContractError("need at least one network")
    acts = nets[0].activations
    for n in nets:
        if n.members is not None or n.activations != acts:
            raise ContractError("networks must be unstacked and share an architecture")
    weights = [np.stack([n.weights[k] for n in nets]) for k in range(len(acts))]
    biases = [np.stack([n.biases[k] for n in nets]) for k in range(len(acts))]
    return DenseNet(weights, biases, list(acts), len(nets))


def init_net(sizes, activations, rng: np.random.Generator, members: int | None = None) -> DenseNet:
    """Fan-in scaled uniform initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    if len(activations) != len(sizes) - 1:
        raise ContractError("need one activation per layer")
    lead = () if members is None else (members,)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=lead + (fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=lead + (fan_out,)))
    return DenseNet(weights, biases, list(activations), members)


def mlp_sizes(input_dim, hidden, output_dim):
    return [input_dim, *hidden, output_dim]


def _check_input(net: DenseNet, x):
    x = np.asarray(x, dtype=net.weights[0].dtype)
    if x.shape[-1] != net.input_dim:
        raise ContractError(f"input dimension {x.shape[-1]} != net input_dim {net.input_dim}")
    if net.members is not None and (x.ndim != 3 or x.shape[0] != net.members):
        raise ContractError("stacked net expects input of shape (members, batch, in)")
    return x


def _linear(x, w, b):
    # x: (..., n, in) or (in,), w: (..., out, in)
    if x.ndim == 1:
        return w @ x + b
    return x @ np.swapaxes(w, -1, -2) + b[..., None, :]


def net_forward(net: DenseNet, x) -> np.ndarray:
    """Evaluate the network on one input vector or a batch of inputs."""
    h = _check_input(net, x)
    for w, b, act in zip(net.weights, net.biases, net.activations):
        h = _activate(_linear(h, w, b), act)
    return h


def _forward_cached(net, x):
    # keeps each layer's input and local activation derivative
    inputs, dacts = [], []
    h = x
    for w, b, act in zip(net.weights, net.biases, net.activations):
        inputs.append(h)
        z = _linear(h, w, b)
        if act == "swish":
            s = sigmoid(z)
            h = z * s
            dacts.append(s + h * (1.0 - s))
        elif act == "relu":
            mask = z > 0
            h = np.where(mask, z, 0.0)
            dacts.append(mask)
        else:
            h = z
            dacts.append(None)
    return inputs, dacts, h


def _backward(net, inputs, dacts, d_out):
    grads = [None] * (2 * len(net.weights))
    delta = d_out
    for k in range(len(net.weights) - 1, -1, -1):
        if dacts[k] is not None:
            delta = delta * dacts[k]
        grads[2 * k] = np.swapaxes(delta, -1, -2) @ inputs[k]
        grads[2 * k + 1] = delta.sum(axis=-2)
        if k > 0:
            delta = delta @ net.weights[k]
    return grads


def gaussian_head(raw, floor=VARIANCE_FLOOR):
    """Split raw output into mean and variance halves; variance via softplus + floor."""
    d = raw.shape[-1] // 2
    mean = raw[..., :d]
    var = np.maximum(softplus(raw[..., d:]), floor)
    return mean, var


def nll_loss_and_grads(net: DenseNet, inputs, targets, head="gaussian"):
    """Mean Gaussian negative log-likelihood and its exact parameter gradients.

    For a stacked network ``inputs`` is ``(members, n, in)`` and the returned
    loss is a per-member vector; each member's gradients only depend on its
    own loss.
    """
    x = _check_input(net, inputs)
    y = np.asarray(targets, dtype=float)
    if x.ndim == 1:
        x, y = x[None, :], y[None, :]
    n = x.shape[-2]
    if n == 0:
        raise ContractError("empty batch")
    inputs_, dacts, out = _forward_cached(net, x)
    if head == "gaussian":
        d = y.shape[-1]
        if out.shape[-1] != 2 * d:
            raise ContractError(f"gaussian head needs {2 * d} outputs, net has {out.shape[-1]}")
        mean = out[..., :d]
        raw_var = out[..., d:]
        sp = softplus(raw_var)
        var = np.maximum(sp, VARIANCE_FLOOR)
        err = mean - y
        per_sample = 0.5 * np.sum(LOG_2PI + np.log(var) + err**2 / var, axis=-1)
        d_mean = err / var
        d_var = 0.5 * (1.0 / var - err**2 / var**2)
        d_raw = np.where(sp > VARIANCE_FLOOR, d_var * sigmoid(raw_var), 0.0)
        d_out = np.concatenate([d_mean, d_raw], axis=-1) / n
    elif head == "fixed_unit_variance":
        if out.shape[-1] != y.shape[-1]:
            raise ContractError("fixed-variance head needs output dim == target dim")
        err = out - y
        per_sample = 0.5 * np.sum(LOG_2PI + err**2, axis=-1)
        d_out = err / n
    else:
        raise ContractError(f"unknown head {head!r}")
    bad = ~np.isfinite(per_sample)
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        raise FloatingPointError(f"non-finite loss at sample index {int(idx[-1])}")
    loss = per_sample.mean(axis=-1)
    return loss, _backward(net, inputs_, dacts, d_out)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 1e-3
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=1e-3):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], lr)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractError("params, grads and optimizer state disagree in length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ContractError(f"shape mismatch {p.shape} / {g.shape} / {m.shape}")
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
