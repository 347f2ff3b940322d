"""Diagonal Gaussians, entropy estimation and a stable softmax. All values in nats."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma, gammaln

from .nets import ContractError

DISTANCE_FLOOR = 1e-12
LOG_2PIE = math.log(2.0 * math.pi * math.e)


@dataclass(frozen=True)
class DiagonalGaussian:
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.atleast_1d(np.asarray(self.var, dtype=float))
        if mean.shape != var.shape:
            raise ContractError(f"mean shape {mean.shape} != variance shape {var.shape}")
        if not (np.all(np.isfinite(var)) and np.all(var > 0)):
            raise ContractError("variances must be positive and finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mean + np.sqrt(self.var) * rng.standard_normal((n, self.dim))


def kl_diag(mean_p, var_p, mean_q, var_q):
    """Elementwise-batched KL(p || q) between diagonal Gaussians, summed over the last axis."""
    return 0.5 * np.sum(
        np.log(var_q / var_p) + (var_p + (mean_p - mean_q) ** 2) / var_q - 1.0, axis=-1
    )


def entropy_diag(var):
    return 0.5 * np.sum(LOG_2PIE + np.log(var), axis=-1)


def gaussian_kl(p: DiagonalGaussian, q: DiagonalGaussian) -> float:
    if p.dim != q.dim:
        raise ContractError(f"dimension mismatch: {p.dim} vs {q.dim}")
    return float(kl_diag(p.mean, p.var, q.mean, q.var))


def gaussian_entropy(p: DiagonalGaussian) -> float:
    return float(entropy_diag(p.var))


def _log_unit_ball_volume(d):
    return 0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1.0)


def knn_entropy(samples, k: int = 1) -> float:
    """Kozachenko-Leonenko entropy estimate with Euclidean k-NN distances.

    Coincident points would give log(0); their distances are floored at
    ``DISTANCE_FLOOR`` so the estimate stays finite.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if k < 1:
        raise ContractError("k must be positive")
    if n < k + 1:
        raise ContractError(f"need at least k+1={k + 1} samples, got {n}")
    if not np.all(np.isfinite(x)):
        raise ContractError("samples must be finite")
    dist, _ = cKDTree(x).query(x, k=k + 1)
    eps = np.maximum(dist[:, k], DISTANCE_FLOOR)
    return float(digamma(n) - digamma(k) + _log_unit_ball_volume(d) + d * np.mean(np.log(eps)))


@numba.njit(cache=True, fastmath=True)
def _mean_log_nn_distance(x, floor_sq):
    # x is (groups, d, n): coordinate-major so the inner loop runs over points
    groups, d, n = x.shape
    out = np.empty(groups)
    row = np.empty(n)
    for g in range(groups):
        acc = 0.0
        for i in range(n):
            row[:] = 0.0
            for c in range(d):
                xi = x[g, c, i]
                for j in range(n):
                    t = x[g, c, j] - xi
                    row[j] += t * t
            row[i] = np.inf
            best = np.inf
            for j in range(n):
                if row[j] < best:
                    best = row[j]
            acc += 0.5 * np.log(max(best, floor_sq))
        out[g] = acc / n
    return out


def knn_entropy_batch(samples, k: int = 1) -> np.ndarray:
    """Vectorised :func:`knn_entropy` over many small sample sets.

    ``samples`` has shape ``(..., n, d)``; one estimate is returned per
    leading index.  Brute-force distances, so keep ``n`` small (tens).
    """
    x = np.asarray(samples, dtype=float)
    n, d = x.shape[-2:]
    if n < k + 1:
        raise ContractError(f"need at least k+1={k + 1} samples, got {n}")
    lead = x.shape[:-2]
    if k == 1:
        flat = np.ascontiguousarray(np.swapaxes(x.reshape(-1, n, d), 1, 2))
        mean_log = _mean_log_nn_distance(flat, DISTANCE_FLOOR**2).reshape(lead)
    else:
        diff = x[..., :, None, :] - x[..., None, :, :]
        d2 = np.einsum("...ijc,...ijc->...ij", diff, diff)
        idx = np.arange(n)
        d2[..., idx, idx] = np.inf
        kth = np.partition(d2, k - 1, axis=-1)[..., k - 1]
        mean_log = 0.5 * np.log(np.maximum(kth, DISTANCE_FLOOR**2)).mean(axis=-1)
    return digamma(n) - digamma(k) + _log_unit_ball_volume(d) + d * mean_log


def softmax_stable(values) -> np.ndarray:
    """Softmax with max-subtraction; ``-inf`` entries get probability zero."""
    v = np.asarray(values, dtype=float)
    if np.any(np.isnan(v)) or np.any(v == np.inf):
        raise ContractError("softmax inputs must be finite or -inf")
    finite = np.isfinite(v)
    if not np.any(finite):
        return np.full(v.shape, 1.0 / v.size)
    z = np.where(finite, v - v[finite].max(), -np.inf)
    e = np.exp(z)
    return e / e.sum()
