"""Exact enumeration oracle on finite toy models.

A toy has finite states S, observations O, parameters T and policies P.
Beliefs factor as ``q(o, s, theta | pi) = q(theta) q(s | theta, pi) q(o | s, theta)``
and the biased generative model as ``p(o, s, theta) = p(s, theta | o) p_pref(o)``.
When ``p(s, theta | o)`` is not given it is the exact Bayes posterior of q,
which differs per policy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import ContractError
from .stats import softmax_stable

ROW_TOL = 1e-12


def _xlogy_ratio(p, q):
    # sum of p*log(p/q) over p > 0; q must be positive wherever p is
    mask = p > 0
    if np.any(q[mask] <= 0):
        return np.inf
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def kl_discrete(p, q) -> float:
    return _xlogy_ratio(np.asarray(p, dtype=float).ravel(), np.asarray(q, dtype=float).ravel())


@dataclass
class TabularToyModel:
    q_theta: np.ndarray        # (T,)
    q_s: np.ndarray            # (P, T, S): q(s | theta, pi)
    q_o: np.ndarray            # (T, S, O): q(o | s, theta)
    p_pref: np.ndarray         # (O,)
    p_post: np.ndarray | None = None   # (O, S, T): p(s, theta | o); None means exact

    def __post_init__(self):
        self.q_theta = np.asarray(self.q_theta, dtype=float)
        self.q_s = np.asarray(self.q_s, dtype=float)
        self.q_o = np.asarray(self.q_o, dtype=float)
        self.p_pref = np.asarray(self.p_pref, dtype=float)
        T = self.q_theta.shape[0]
        if self.q_s.ndim != 3 or self.q_s.shape[1] != T:
            raise ContractError("q_s must have shape (policies, thetas, states)")
        S = self.q_s.shape[2]
        if self.q_o.shape[:2] != (T, S):
            raise ContractError("q_o must have shape (thetas, states, observations)")
        if self.p_pref.shape != (self.q_o.shape[2],):
            raise ContractError("p_pref length must equal the number of observations")
        tables = [("q_theta", self.q_theta), ("q_s", self.q_s), ("q_o", self.q_o), ("p_pref", self.p_pref)]
        if self.p_post is not None:
            self.p_post = np.asarray(self.p_post, dtype=float)
            if self.p_post.shape != (self.q_o.shape[2], S, T):
                raise ContractError("p_post must have shape (observations, states, thetas)")
            tables.append(("p_post", self.p_post.reshape(self.p_post.shape[0], -1)))
        for name, t in tables:
            if np.any(t < 0) or np.any(np.abs(t.sum(axis=-1) - 1.0) > ROW_TOL):
                raise ContractError(f"{name} rows must be non-negative and sum to 1")

    @property
    def n_policies(self) -> int:
        return self.q_s.shape[0]

    def joint(self, policy: int) -> np.ndarray:
        """``q(o, s, theta | pi)`` with axes ``(O, S, T)``."""
        q_st = self.q_s[policy].T * self.q_theta          # (S, T)
        return np.einsum("st,tso->ost", q_st, self.q_o)

    def posterior(self, policy: int) -> np.ndarray:
        """Exact Bayes posterior ``q(s, theta | o, pi)``; zero-mass outcomes get zeros."""
        j = self.joint(policy)
        q_o = j.sum(axis=(1, 2))
        out = np.zeros_like(j)
        keep = q_o > 0
        out[keep] = j[keep] / q_o[keep, None, None]
        return out


@dataclass(frozen=True)
class TabularFeef:
    feef: float
    info_gain: float
    extrinsic: float
    bound_rhs: float

    @property
    def slack(self) -> float:
        return self.feef - self.bound_rhs


def tabular_feef(toy: TabularToyModel, policy: int) -> TabularFeef:
    """Exact F_pi, its two-term decomposition and the marginal KL lower bound.

    The decomposition terms always use the exact posterior of q; they add up
    to ``feef`` only when the toy's generative posterior is exact as well.
    """
    if not 0 <= policy < toy.n_policies:
        raise IndexError(f"policy {policy} out of range")
    j = toy.joint(policy)                              # (O, S, T)
    q_o = j.sum(axis=(1, 2))
    q_st = j.sum(axis=0)
    exact = toy.posterior(policy)
    p_post = exact if toy.p_post is None else toy.p_post
    p_joint = p_post * toy.p_pref[:, None, None]
    feef = kl_discrete(j, p_joint)

    info = 0.0
    for o in np.flatnonzero(q_o > 0):
        info += q_o[o] * kl_discrete(exact[o], q_st)
    extrinsic = 0.0
    for s, t in zip(*np.nonzero(q_st > 0)):
        extrinsic += q_st[s, t] * kl_discrete(toy.q_o[t, s], toy.p_pref)
    return TabularFeef(feef, info, extrinsic, kl_discrete(q_o, toy.p_pref))


def _simplex(rng, shape):
    x = rng.gamma(1.0, size=shape)
    return x / x.sum(axis=-1, keepdims=True)


def random_toy(rng: np.random.Generator, states=3, observations=3, thetas=2, policies=2,
               exact_posterior=False) -> TabularToyModel:
    """Dirichlet(1) tables; the generative posterior is random unless ``exact_posterior``."""
    p_post = None
    if not exact_posterior:
        p_post = _simplex(rng, (observations, states * thetas)).reshape(observations, states, thetas)
    return TabularToyModel(
        _simplex(rng, thetas),
        _simplex(rng, (policies, thetas, states)),
        _simplex(rng, (thetas, states, observations)),
        _simplex(rng, observations),
        p_post,
    )


def full_feef(toy: TabularToyModel, q_pi) -> float:
    """``E_q(pi)[F_pi] - H[q(pi)]``, the free energy over policies."""
    q_pi = np.asarray(q_pi, dtype=float)
    f = np.array([tabular_feef(toy, p).feef for p in range(toy.n_policies)])
    mask = q_pi > 0
    return float(np.sum(q_pi * f) + np.sum(q_pi[mask] * np.log(q_pi[mask])))


def optimal_policy(toy: TabularToyModel) -> np.ndarray:
    """``softmax(-F_pi)``, the minimiser of :func:`full_feef`."""
    return softmax_stable(-np.array([tabular_feef(toy, p).feef for p in range(toy.n_policies)]))


@dataclass(frozen=True)
class BoundCheck:
    toy: int
    policy: int
    feef: float
    bound_rhs: float
    decomposition_error: float

    def passed(self, bound_tol=1e-9, decomposition_tol=1e-9) -> bool:
        return self.feef - self.bound_rhs >= -bound_tol and self.decomposition_error <= decomposition_tol


def bound_check_suite(n_toys=20, seed=0) -> list[BoundCheck]:
    """Bound on random-posterior toys, decomposition on the same toys with exact posteriors."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_toys):
        toy = random_toy(rng)
        exact = TabularToyModel(toy.q_theta, toy.q_s, toy.q_o, toy.p_pref)
        for p in range(toy.n_policies):
            r = tabular_feef(toy, p)
            e = tabular_feef(exact, p)
            err = abs(-e.feef - (e.info_gain - e.extrinsic))
            out.append(BoundCheck(i, p, r.feef, r.bound_rhs, err))
    return out
