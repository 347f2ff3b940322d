"""Shared oracles for the test suite."""

import numpy as np

from feef.nets import DenseNet, init_net, nll_loss_and_grads
from feef.stats import DiagonalGaussian
from feef.world_model import Normalizer, RewardModel, TransitionEnsemble, WorldModel

FD_STEP = 1e-5


def random_net_and_batch(rng, head="gaussian"):
    depth = int(rng.integers(1, 4))
    width = [int(rng.integers(1, 17)) for _ in range(depth - 1)]
    d_in = int(rng.integers(1, 5))
    d_y = int(rng.integers(1, 4))
    d_out = 2 * d_y if head == "gaussian" else d_y
    acts = [str(rng.choice(["swish", "relu", "linear"])) for _ in range(depth - 1)] + ["linear"]
    net = init_net([d_in, *width, d_out], acts, rng)
    n = int(rng.integers(1, 9))
    x = rng.normal(size=(n, d_in))
    y = rng.normal(size=(n, d_y))
    return net, x, y


def gradient_relative_error(net, x, y, head, step=FD_STEP, floor=1e-8):
    """Max over components of |analytic - FD| / max(|analytic|, |FD|, floor).

    ``floor`` keeps components whose true gradient is ~0 (dead ReLUs, exactly
    cancelling terms) from producing 0/0.
    """
    _, grads = nll_loss_and_grads(net, x, y, head)
    worst = 0.0
    for p, g in zip(net.params(), grads):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            up = float(nll_loss_and_grads(net, x, y, head)[0])
            flat[i] = old - step
            down = float(nll_loss_and_grads(net, x, y, head)[0])
            flat[i] = old
            fd = (up - down) / (2 * step)
            err = abs(gflat[i] - fd) / max(abs(gflat[i]), abs(fd), floor)
            worst = max(worst, err)
    return worst


def relu_kink_safe(net, x, margin=1e-4):
    """True if no ReLU pre-activation lies within ``margin`` of zero (FD is invalid at kinks)."""
    h = x
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = h @ w.T + b
        if act == "relu" and np.any(np.abs(z) < margin):
            return False
        h = z * (0.5 + 0.5 * np.tanh(0.5 * z)) if act == "swish" else (np.maximum(z, 0) if act == "relu" else z)
    return True


def const_model(deltas, raw_var, reward=0.0, action_dim=1):
    """Ensemble whose member b always predicts delta ``deltas[b]`` with variance softplus(raw_var[b])."""
    deltas = np.asarray(deltas, float)
    raw_var = np.broadcast_to(np.asarray(raw_var, float), deltas.shape)
    B, ds = deltas.shape
    trans = DenseNet([np.zeros((B, 2 * ds, ds + action_dim))],
                     [np.concatenate([deltas, raw_var], axis=1)], ["linear"], B)
    rew = DenseNet([np.zeros((1, ds))], [np.array([reward], float)], ["linear"])
    nz = Normalizer.identity(ds, action_dim)
    return WorldModel(TransitionEnsemble(trans, nz), RewardModel(rew, nz), nz)


def random_ensemble(rng):
    B = int(rng.integers(2, 8))
    d = int(rng.integers(1, 4))
    return [DiagonalGaussian(rng.normal(scale=rng.uniform(0, 3), size=d), rng.uniform(0.01, 3, d))
            for _ in range(B)]
