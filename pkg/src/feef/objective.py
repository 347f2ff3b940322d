"""Scoring action sequences by the free energy of the expected future.

Beliefs about the future are rolled out with trajectory sampling: one state
particle per ensemble member, each propagated only through its own member.
At every step the score accumulates

* the extrinsic term, the member-averaged KL between the predicted reward
  distribution N(r_hat, 1) and the preferred reward prior N(r_max, 1), and
* the parameter information gain, the entropy of the member mixture of
  next-state Gaussians minus the mean member entropy.

The returned total is ``info_gain - extrinsic_kl`` and is to be maximised.
Everything is vectorised over a leading candidate axis so one call scores a
whole CEM population.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import ContractError
from .stats import DiagonalGaussian, entropy_diag, gaussian_entropy, gaussian_kl, knn_entropy, knn_entropy_batch
from .world_model import WorldModel

SCORE_KINDS = ("feef", "reward_only", "variance")


@dataclass(frozen=True)
class PreferredPrior:
    """Preferred reward distribution N(r_max, 1)."""

    mean: float
    var: float = 1.0

    def __post_init__(self):
        if self.var != 1.0:
            raise ContractError("preferred prior has unit variance by construction")


@dataclass(frozen=True)
class RolloutNoise:
    """Standard-normal draws consumed by a rollout.

    ``particle`` has shape ``(H, B, d_s)`` and ``mixture`` ``(H, B, M, d_s)``.
    The same draws are shared by every candidate scored together, so score
    differences between candidates are not swamped by sampling noise.
    """

    particle: np.ndarray
    mixture: np.ndarray

    @classmethod
    def draw(cls, rng: np.random.Generator, horizon, members, samples_per_member, state_dim):
        return cls(
            rng.standard_normal((horizon, members, state_dim)),
            rng.standard_normal((horizon, members, samples_per_member, state_dim)),
        )

    def __getitem__(self, steps: slice) -> RolloutNoise:
        return RolloutNoise(self.particle[steps], self.mixture[steps])


@dataclass
class BeliefRollout:
    """Per-step, per-member predictions for a batch of candidates.

    Shapes use ``H`` steps, ``J`` candidates and ``B`` members.
    """

    particles: np.ndarray      # (H+1, J, B, d_s); particles[0] is the start
    next_mean: np.ndarray      # (H, J, B, d_s)
    next_var: np.ndarray       # (H, J, B, d_s), environment units
    next_var_norm: np.ndarray  # (H, J, B, d_s), network units
    reward_mean: np.ndarray    # (H, J, B)
    flagged: np.ndarray        # (J,) bool, non-finite prediction encountered
    delta_std: np.ndarray      # (d_s,) scale between the two variance units

    @property
    def horizon(self) -> int:
        return self.next_mean.shape[0]

    def next_state_gaussians(self, step: int, candidate: int = 0) -> list[DiagonalGaussian]:
        return [
            DiagonalGaussian(self.next_mean[step, candidate, b], self.next_var[step, candidate, b])
            for b in range(self.next_mean.shape[2])
        ]

    def reward_gaussians(self, step: int, candidate: int = 0) -> list[DiagonalGaussian]:
        return [
            DiagonalGaussian(self.reward_mean[step, candidate, b : b + 1], np.ones(1))
            for b in range(self.reward_mean.shape[2])
        ]


def rollout_batch(model: WorldModel, start_state, policies, noise: RolloutNoise | None,
                  propagation: str = "sample") -> BeliefRollout:
    """Roll a batch of action sequences ``(J, H, d_a)`` through the ensemble.

    ``start_state`` is ``(d_s,)`` (shared by all members) or ``(B, d_s)``
    (one particle per member, e.g. to continue an earlier rollout).
    ``propagation`` is ``"sample"`` (particle drawn from the member's
    Gaussian using ``noise``) or ``"mean"`` (particle set to the mean).
    """
    ens = model.ensemble
    B = ens.size
    policies = np.asarray(policies, dtype=float)
    if policies.ndim != 3:
        raise ContractError("policies must have shape (J, H, d_a)")
    J, H, _ = policies.shape
    start = np.asarray(start_state, dtype=float)
    ds = ens.state_dim
    if start.shape == (ds,):
        start = np.broadcast_to(start, (B, ds))
    elif start.shape != (B, ds):
        raise ContractError(f"start state must have shape ({ds},) or ({B}, {ds})")
    if not np.all(np.isfinite(start)):
        raise ContractError("start state must be finite")
    if propagation not in ("sample", "mean"):
        raise ContractError(f"unknown propagation mode {propagation!r}")
    if propagation == "sample" and (noise is None or noise.particle.shape[0] < H):
        raise ContractError("sampling propagation needs noise for every step")

    dtype = ens.net.weights[0].dtype
    particles = np.empty((H + 1, J, B, ds), dtype=dtype)
    particles[0] = start[None, :, :]
    next_mean = np.empty((H, J, B, ds), dtype=dtype)
    next_var = np.empty((H, J, B, ds), dtype=dtype)
    next_var_norm = np.empty((H, J, B, ds), dtype=dtype)
    reward_mean = np.empty((H, J, B), dtype=dtype)
    flagged = np.zeros(J, dtype=bool)

    # member-major layout for the stacked networks: (B, J, d)
    state = np.ascontiguousarray(np.swapaxes(particles[0], 0, 1))
    for t in range(H):
        action = np.broadcast_to(policies[None, :, t, :].astype(dtype), (B, J, policies.shape[2]))
        mean, var, var_norm = ens.predict(state, action)
        if propagation == "sample":
            state = mean + np.sqrt(var) * noise.particle[t][:, None, :].astype(dtype)
        else:
            state = mean
        bad = ~np.all(np.isfinite(state), axis=(0, 2)) | ~np.all(np.isfinite(var), axis=(0, 2))
        if np.any(bad):
            flagged |= bad
            state = np.where(bad[None, :, None], 0.0, state)
            mean = np.where(bad[None, :, None], 0.0, mean)
            var = np.where(bad[None, :, None], 1.0, var)
            var_norm = np.where(bad[None, :, None], 1.0, var_norm)
        r = model.reward.predict_mean(state)
        flagged |= ~np.all(np.isfinite(r), axis=0)
        next_mean[t] = np.swapaxes(mean, 0, 1)
        next_var[t] = np.swapaxes(var, 0, 1)
        next_var_norm[t] = np.swapaxes(var_norm, 0, 1)
        particles[t + 1] = np.swapaxes(state, 0, 1)
        reward_mean[t] = np.swapaxes(np.nan_to_num(r), 0, 1)
    return BeliefRollout(particles, next_mean, next_var, next_var_norm, reward_mean, flagged,
                         ens.normalizer.delta_std.copy())


def rollout(model: WorldModel, start_state, policy, rng: np.random.Generator | None = None,
            propagation: str = "sample", samples_per_member: int = 10) -> BeliefRollout:
    """Single-candidate rollout; ``policy`` has shape ``(H, d_a)``."""
    policy = np.asarray(policy, dtype=float)
    noise = None
    if propagation == "sample":
        if rng is None:
            raise ContractError("sampling propagation needs an rng")
        noise = RolloutNoise.draw(rng, policy.shape[0], model.ensemble.size, samples_per_member,
                                  model.ensemble.state_dim)
    return rollout_batch(model, start_state, policy[None], noise, propagation)


def extrinsic_step(reward_gaussians: list[DiagonalGaussian], prior: PreferredPrior) -> float:
    """Member-averaged KL(N(r_hat_b, 1) || N(r_max, 1))."""
    if not reward_gaussians:
        raise ContractError("need at least one member")
    target = DiagonalGaussian(np.array([prior.mean]), np.array([prior.var]))
    return float(np.mean([gaussian_kl(g, target) for g in reward_gaussians]))


def extrinsic_terms(reward_mean, prior: PreferredPrior) -> np.ndarray:
    """Vectorised extrinsic term over the member (last) axis; unit variances on both sides."""
    return 0.5 * np.mean((reward_mean - prior.mean) ** 2, axis=-1)


def info_gain_step(next_state_gaussians: list[DiagonalGaussian], rng: np.random.Generator,
                   samples_per_member: int = 10, k: int = 1) -> float:
    """Mixture entropy (k-NN estimate on pooled draws) minus mean member entropy."""
    if len(next_state_gaussians) < 2:
        raise ContractError("information gain needs at least two ensemble members")
    pooled = np.concatenate([g.sample(rng, samples_per_member) for g in next_state_gaussians])
    mean_entropy = np.mean([gaussian_entropy(g) for g in next_state_gaussians])
    # estimate in standardised coordinates; a linear map shifts both entropies by sum(log s)
    s = np.sqrt(np.mean([g.var for g in next_state_gaussians], axis=0))
    return knn_entropy(pooled / s, k) + float(np.log(s).sum()) - float(mean_entropy)


def info_gain_terms(mean, var, mixture_noise, k: int = 1) -> np.ndarray:
    """Vectorised information gain.

    ``mean``/``var`` are ``(..., B, d)``; ``mixture_noise`` is ``(B, M, d)``
    (or broadcastable).  Each set of draws is first divided per dimension by
    the root mean member variance.  The information gain is invariant to
    this, but the k-NN estimator is not: on a few dozen points it grossly
    overestimates the entropy of strongly anisotropic clouds.
    """
    if mean.shape[-2] < 2:
        raise ContractError("information gain needs at least two ensemble members")
    scale = np.sqrt(var.mean(axis=-2, keepdims=True))
    mean = mean / scale
    var = var / scale**2
    draws = mean[..., :, None, :] + np.sqrt(var)[..., :, None, :] * mixture_noise
    lead = draws.shape[:-3]
    pooled = draws.reshape(lead + (-1, draws.shape[-1]))
    return knn_entropy_batch(pooled, k) - entropy_diag(var).mean(axis=-1)


@dataclass(frozen=True)
class FeefScore:
    extrinsic_kl: float
    info_gain: float

    @property
    def total(self) -> float:
        return self.info_gain - self.extrinsic_kl


@dataclass
class ScoreBreakdown:
    """Per-candidate horizon sums, shape ``(J,)`` each."""

    extrinsic_kl: np.ndarray
    info_gain: np.ndarray
    variance: np.ndarray
    total: np.ndarray


def score_rollout(ro: BeliefRollout, prior: PreferredPrior, kind: str = "feef",
                  mixture_noise=None, k: int = 1) -> ScoreBreakdown:
    """Sum the per-step terms over the horizon for every candidate in ``ro``.

    ``kind`` selects the objective: ``feef`` (info gain minus extrinsic),
    ``reward_only`` (minus extrinsic) or ``variance`` (minus extrinsic plus
    summed predictive variance in network units).  Flagged candidates score
    ``-inf``.
    """
    if kind not in SCORE_KINDS:
        raise ContractError(f"unknown score kind {kind!r}")
    J = ro.next_mean.shape[1]
    extrinsic = extrinsic_terms(ro.reward_mean, prior).sum(axis=0)
    info = np.zeros(J)
    variance = np.zeros(J)
    if kind == "feef":
        if mixture_noise is None:
            raise ContractError("feef scoring needs mixture noise")
        steps = info_gain_terms(ro.next_mean, ro.next_var, mixture_noise[:, None], k)
        info = steps.sum(axis=0)
        total = info - extrinsic
    elif kind == "variance":
        variance = ro.next_var_norm.sum(axis=(0, 2, 3))
        total = variance - extrinsic
    else:
        total = -extrinsic
    total = np.where(ro.flagged, -np.inf, total)
    return ScoreBreakdown(extrinsic, info, variance, total)


def score_candidates(model: WorldModel, start_state, policies, prior: PreferredPrior,
                     rng: np.random.Generator, kind: str = "feef", samples_per_member: int = 10,
                     propagation: str = "sample") -> ScoreBreakdown:
    """Roll out and score a whole population ``(J, H, d_a)`` with shared noise."""
    policies = np.asarray(policies, dtype=float)
    noise = RolloutNoise.draw(rng, policies.shape[1], model.ensemble.size, samples_per_member,
                              model.ensemble.state_dim)
    ro = rollout_batch(model, start_state, policies, noise, propagation)
    return score_rollout(ro, prior, kind, noise.mixture)


def evaluate_candidate(model: WorldModel, start_state, policy, prior: PreferredPrior,
                       rng: np.random.Generator, samples_per_member: int = 10,
                       propagation: str = "sample") -> FeefScore:
    """FEEF breakdown for one action sequence ``(H, d_a)``; a blown-up rollout totals -inf."""
    out = score_candidates(model, start_state, np.asarray(policy, dtype=float)[None], prior, rng,
                           "feef", samples_per_member, propagation)
    if out.total[0] == -np.inf:
        return FeefScore(np.inf, 0.0)
    return FeefScore(float(out.extrinsic_kl[0]), float(out.info_gain[0]))
