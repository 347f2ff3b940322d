"""Cross-entropy-method search over action sequences.

The policy distribution q(pi) is a diagonal Gaussian over an ``H x d_a``
action sequence.  Each planning call starts from N(0, I), samples candidates,
clamps them to the action bounds, scores them and refits to the elites.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .nets import ContractError
from .stats import softmax_stable

REFIT_VARIANCE_FLOOR = 1e-3


@dataclass(frozen=True)
class CemConfig:
    candidates: int = 700
    elites: int = 70
    iterations: int = 7
    horizon: int = 30

    def __post_init__(self):
        for name in ("candidates", "elites", "iterations", "horizon"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive")
        if self.elites > self.candidates:
            raise ContractError("elites must not exceed candidates")


@dataclass
class PolicyDist:
    mean: np.ndarray  # (H, d_a)
    var: np.ndarray   # (H, d_a)
    low: np.ndarray   # (d_a,)
    high: np.ndarray  # (d_a,)

    @classmethod
    def standard(cls, horizon, low, high) -> PolicyDist:
        low = np.asarray(low, dtype=float)
        high = np.asarray(high, dtype=float)
        shape = (horizon, low.shape[0])
        return cls(np.zeros(shape), np.ones(shape), low, high)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        draws = self.mean + np.sqrt(self.var) * rng.standard_normal((n,) + self.mean.shape)
        return np.clip(draws, self.low, self.high)


@dataclass
class PlanDiagnostics:
    best: list = field(default_factory=list)    # best candidate score per iteration
    mean: list = field(default_factory=list)    # mean finite score per iteration
    degraded: bool = False
    breakdown: object = None                    # score_fn output for the last population
    elite_index: np.ndarray | None = None


def refit(candidates, scores, elites: int, low, high) -> PolicyDist:
    """Elite moments: mean and population variance of the top-``elites`` candidates.

    Ties are broken towards the lower candidate index.  ``-inf`` scores are
    never selected.
    """
    candidates = np.asarray(candidates, dtype=float)
    scores = np.asarray(scores, dtype=float)
    if np.count_nonzero(np.isfinite(scores)) < elites:
        raise ContractError(f"fewer than {elites} finite scores")
    order = np.argsort(-scores, kind="stable")[:elites]
    top = candidates[order]
    return PolicyDist(
        top.mean(axis=0),
        np.maximum(top.var(axis=0), REFIT_VARIANCE_FLOOR),
        np.asarray(low, dtype=float),
        np.asarray(high, dtype=float),
    )


def plan(score_fn: Callable, low, high, config: CemConfig, rng: np.random.Generator):
    """Optimise q(pi) against ``score_fn`` (maximised).

    ``score_fn(candidates)`` takes ``(J, H, d_a)`` and returns either a score
    array ``(J,)`` or an object with a ``total`` attribute.  The best
    candidate of each iteration is carried into the next population (in the
    last slot), so for a deterministic ``score_fn`` the best elite score
    never decreases.
    """
    dist = PolicyDist.standard(config.horizon, low, high)
    diag = PlanDiagnostics()
    carried = None
    for _ in range(config.iterations):
        cands = dist.sample(rng, config.candidates)
        if carried is not None and config.candidates > 1:
            cands[-1] = carried
        out = score_fn(cands)
        scores = np.asarray(getattr(out, "total", out), dtype=float)
        finite = np.isfinite(scores)
        if np.count_nonzero(finite) < config.elites:
            diag.degraded = True
            break
        best = int(np.argmax(np.where(finite, scores, -np.inf)))
        carried = cands[best].copy()
        diag.best.append(float(scores[best]))
        diag.mean.append(float(scores[finite].mean()))
        diag.breakdown = out
        diag.elite_index = np.argsort(-scores, kind="stable")[: config.elites]
        dist = refit(cands, scores, config.elites, low, high)
    return dist, diag


def act(dist: PolicyDist) -> np.ndarray:
    """First action of the most likely sequence (the mean), clamped to bounds."""
    return np.clip(dist.mean[0], dist.low, dist.high)


def policy_weights(scores) -> np.ndarray:
    """Softmax over scores (scores are already negative free energies)."""
    return softmax_stable(scores)
