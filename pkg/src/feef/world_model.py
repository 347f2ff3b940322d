"""Learned generative model: replay buffer, normalizer, dynamics ensemble, reward model."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .nets import (
    VARIANCE_FLOOR,
    AdamState,
    ContractError,
    DenseNet,
    adam_step,
    gaussian_head,
    init_net,
    mlp_sizes,
    net_forward,
    nll_loss_and_grads,
)
from .stats import DiagonalGaussian

log = logging.getLogger(__name__)

STD_FLOOR = 1e-6


class Transition(NamedTuple):
    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    reward: float


class ReplayBuffer:
    """Append-only list of transitions; the dataset D grown across episodes."""

    def __init__(self, transitions=()):
        self._items: list[Transition] = []
        self.extend(transitions)

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def extend(self, transitions):
        for t in transitions:
            t = Transition(
                np.asarray(t[0], dtype=float),
                np.asarray(t[1], dtype=float),
                np.asarray(t[2], dtype=float),
                float(t[3]),
            )
            if self._items:
                ref = self._items[0]
                if t.state.shape != ref.state.shape or t.action.shape != ref.action.shape:
                    raise ContractError("transition dimensions differ from buffer contents")
            if t.next_state.shape != t.state.shape:
                raise ContractError("state and next_state dimensions differ")
            if not (np.all(np.isfinite(t.state)) and np.all(np.isfinite(t.next_state))
                    and np.all(np.isfinite(t.action)) and np.isfinite(t.reward)):
                raise ContractError("transition contains non-finite values")
            self._items.append(t)

    def arrays(self):
        """Return ``(states, actions, next_states, rewards)`` as stacked arrays."""
        if not self._items:
            raise ContractError("buffer is empty")
        s = np.stack([t.state for t in self._items])
        a = np.stack([t.action for t in self._items])
        s2 = np.stack([t.next_state for t in self._items])
        r = np.array([t.reward for t in self._items])
        return s, a, s2, r


def buffer_append(buffer: ReplayBuffer, transitions) -> ReplayBuffer:
    buffer.extend(transitions)
    return buffer


@dataclass
class Normalizer:
    """Per-dimension statistics used to whiten network inputs and scale deltas.

    Deltas are only rescaled (no shift) so that a zero network output is a
    zero state change.
    """

    state_mean: np.ndarray
    state_std: np.ndarray
    action_mean: np.ndarray
    action_std: np.ndarray
    delta_std: np.ndarray

    @classmethod
    def fit(cls, buffer: ReplayBuffer) -> Normalizer:
        s, a, s2, _ = buffer.arrays()
        return cls(
            s.mean(axis=0),
            np.maximum(s.std(axis=0), STD_FLOOR),
            a.mean(axis=0),
            np.maximum(a.std(axis=0), STD_FLOOR),
            np.maximum((s2 - s).std(axis=0), STD_FLOOR),
        )

    @classmethod
    def identity(cls, state_dim, action_dim) -> Normalizer:
        return cls(np.zeros(state_dim), np.ones(state_dim), np.zeros(action_dim),
                   np.ones(action_dim), np.ones(state_dim))

    def inputs(self, states, actions):
        return np.concatenate(
            [(states - self.state_mean) / self.state_std,
             (actions - self.action_mean) / self.action_std],
            axis=-1,
        )

    def states(self, states):
        return (states - self.state_mean) / self.state_std

    def astype(self, dtype) -> Normalizer:
        return Normalizer(*(np.asarray(v, dtype=dtype) for v in
                            (self.state_mean, self.state_std, self.action_mean,
                             self.action_std, self.delta_std)))


@dataclass
class TransitionEnsemble:
    """B dynamics networks stacked on a leading member axis.

    Each member maps a normalised (state, action) to a Gaussian over the
    normalised state delta.
    """

    net: DenseNet
    normalizer: Normalizer

    @property
    def size(self) -> int:
        return self.net.members

    @property
    def state_dim(self) -> int:
        return self.normalizer.state_mean.shape[0]

    def predict(self, states, actions):
        """Batched prediction.

        ``states``/``actions`` have shape ``(B, n, d)``.  Returns the
        next-state mean and variance in environment units, plus the variance
        in network (delta-normalised) units.
        """
        raw = net_forward(self.net, self.normalizer.inputs(states, actions))
        d_mean, var_norm = gaussian_head(raw)
        mean = states + d_mean * self.normalizer.delta_std
        var = var_norm * self.normalizer.delta_std**2
        return mean, var, var_norm


def predict_transition(ensemble: TransitionEnsemble, member_index: int, state, action) -> DiagonalGaussian:
    if not 0 <= member_index < ensemble.size:
        raise IndexError(f"member index {member_index} out of range for ensemble of {ensemble.size}")
    state = np.asarray(state, dtype=float)
    action = np.asarray(action, dtype=float)
    if state.shape != (ensemble.state_dim,):
        raise ContractError(f"state must have shape ({ensemble.state_dim},)")
    if action.shape != ensemble.normalizer.action_mean.shape:
        raise ContractError("action dimension mismatch")
    member = ensemble.net.member(member_index)
    raw = net_forward(member, ensemble.normalizer.inputs(state, action))
    d_mean, var_norm = gaussian_head(raw)
    nz = ensemble.normalizer
    return DiagonalGaussian(state + d_mean * nz.delta_std, var_norm * nz.delta_std**2)


@dataclass
class RewardModel:
    """Reward network with fixed unit output variance: r ~ N(f(s), 1)."""

    net: DenseNet
    normalizer: Normalizer

    def predict_mean(self, states):
        return net_forward(self.net, self.normalizer.states(states))[..., 0]


def predict_reward(model: RewardModel, state) -> DiagonalGaussian:
    state = np.asarray(state, dtype=float)
    if state.shape != model.normalizer.state_mean.shape:
        raise ContractError("state dimension mismatch")
    return DiagonalGaussian(np.atleast_1d(model.predict_mean(state)), np.ones(1))


@dataclass
class WorldModelConfig:
    ensemble_size: int = 5
    hidden: tuple = (64, 64)
    reward_hidden: tuple = (64, 64)
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 64

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.reward_hidden = tuple(int(h) for h in self.reward_hidden)
        if self.ensemble_size < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ContractError("ensemble_size and batch_size must be positive, epochs non-negative")
        if self.learning_rate <= 0:
            raise ContractError("learning rate must be positive")


@dataclass
class WorldModel:
    ensemble: TransitionEnsemble
    reward: RewardModel
    normalizer: Normalizer
    member_losses: np.ndarray = field(default_factory=lambda: np.zeros(0))
    reward_loss: float = float("nan")
    bootstrap_indices: np.ndarray | None = None

    def for_planning(self, dtype=np.float32) -> WorldModel:
        """Copy with networks and statistics cast to ``dtype`` for fast rollouts."""
        nz = self.normalizer.astype(dtype)
        return WorldModel(
            TransitionEnsemble(self.ensemble.net.astype(dtype), nz),
            RewardModel(self.reward.net.astype(dtype), nz),
            nz,
            self.member_losses,
            self.reward_loss,
            self.bootstrap_indices,
        )

    def __iter__(self):
        # allows ``ensemble, reward, normalizer = train_world_model(...)``
        return iter((self.ensemble, self.reward, self.normalizer))


def init_world_model(state_dim, action_dim, config: WorldModelConfig, rng, normalizer=None) -> WorldModel:
    nz = normalizer or Normalizer.identity(state_dim, action_dim)
    hidden_layers = len(config.hidden)
    trans = init_net(
        mlp_sizes(state_dim + action_dim, config.hidden, 2 * state_dim),
        ["swish"] * hidden_layers + ["linear"],
        rng,
        members=config.ensemble_size,
    )
    rew = init_net(
        mlp_sizes(state_dim, config.reward_hidden, 1),
        ["relu"] * len(config.reward_hidden) + ["linear"],
        rng,
    )
    return WorldModel(TransitionEnsemble(trans, nz), RewardModel(rew, nz), nz)


def _batches(n, batch_size):
    return [(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]


def train_world_model(buffer: ReplayBuffer, config: WorldModelConfig, rng: np.random.Generator) -> WorldModel:
    """Cold-start training on the whole buffer.

    Every call re-initialises all networks from ``rng``, refits the
    normalizer, and trains each ensemble member on its own bootstrap resample.
    """
    if len(buffer) == 0:
        raise ContractError("cannot train on an empty buffer")
    s, a, s2, r = buffer.arrays()
    n, ds = s.shape
    da = a.shape[1]
    nz = Normalizer.fit(buffer)
    model = init_world_model(ds, da, config, rng, nz)

    x = nz.inputs(s, a)
    y = (s2 - s) / nz.delta_std
    B = config.ensemble_size
    boot = rng.integers(0, n, size=(B, n))
    model.bootstrap_indices = boot

    net = model.ensemble.net
    params = net.params()
    opt = AdamState.for_params(params, config.learning_rate)
    spans = _batches(n, config.batch_size)
    losses = np.full(B, np.nan)
    for _ in range(config.epochs):
        order = np.take_along_axis(boot, rng.permuted(np.tile(np.arange(n), (B, 1)), axis=1), axis=1)
        total = np.zeros(B)
        for lo, hi in spans:
            idx = order[:, lo:hi]
            loss, grads = nll_loss_and_grads(net, x[idx], y[idx], head="gaussian")
            adam_step(params, grads, opt)
            total += loss * (hi - lo)
        losses = total / n
    model.member_losses = losses

    rnet = model.reward.net
    rparams = rnet.params()
    ropt = AdamState.for_params(rparams, config.learning_rate)
    xs = nz.states(s2)
    rt = r[:, None]
    rloss = float("nan")
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo, hi in spans:
            idx = order[lo:hi]
            loss, grads = nll_loss_and_grads(rnet, xs[idx], rt[idx], head="fixed_unit_variance")
            adam_step(rparams, grads, ropt)
            total += float(loss) * (hi - lo)
        rloss = total / n
    model.reward_loss = rloss
    if config.epochs and not (np.all(np.isfinite(losses)) and np.isfinite(rloss)):
        raise FloatingPointError("world model training diverged")
    log.debug("trained on %d transitions: member nll %s, reward nll %.4f", n, losses, rloss)
    return model


def variance_floor_env(ensemble: TransitionEnsemble) -> np.ndarray:
    """Smallest variance the ensemble can emit, in environment units."""
    return VARIANCE_FLOOR * ensemble.normalizer.delta_std**2
