"""Bandit instances, feature tables and the elementary quantities built on them.

Contexts and actions are dense 0-based integer ids. The feature table is stored
fully materialized as an array of shape (C, K, d).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInstanceError, InvalidPairError

RANK_TOL = 1e-10
TIE_TOL = 1e-12


def _rank(vectors: np.ndarray, tol: float = RANK_TOL) -> int:
    """Numerical rank of a stack of row vectors, relative cutoff on singular values."""
    if vectors.size == 0:
        return 0
    s = np.linalg.svd(vectors, compute_uv=False)
    if s[0] <= 0:
        return 0
    return int(np.sum(s > tol * s[0]))


@dataclass(frozen=True)
class FeatureMap:
    """Known feature table phi[x, a] in R^d."""

    phi: np.ndarray
    span_dims: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        if phi.ndim != 3:
            raise ValueError(f"feature table must have shape (C, K, d), got {phi.shape}")
        if not np.all(np.isfinite(phi)):
            raise ValueError("feature table has non-finite entries")
        C, K, d = phi.shape
        if min(C, K, d) < 1:
            raise ValueError("feature table needs at least one context, action and dimension")
        total = _rank(phi.reshape(-1, d))
        if total != d:
            raise DegenerateInstanceError(f"features span a {total}-dim space, expected {d}")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        dims = np.array([_rank(phi[x]) for x in range(C)], dtype=int)
        dims.setflags(write=False)
        object.__setattr__(self, "span_dims", dims)

    @property
    def n_contexts(self) -> int:
        return self.phi.shape[0]

    @property
    def n_actions(self) -> int:
        return self.phi.shape[1]

    @property
    def dim(self) -> int:
        return self.phi.shape[2]

    def __call__(self, x: int, a: int) -> np.ndarray:
        return self.phi[x, a]


@dataclass(frozen=True)
class ContextDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).ravel()
        if p.size == 0 or np.any(~np.isfinite(p)) or np.any(p <= 0):
            raise ValueError("context probabilities must be finite and strictly positive")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"context probabilities sum to {p.sum():.15g}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, n: int) -> "ContextDistribution":
        p = np.full(n, 1.0 / n)
        # make the sum exact so the 1e-12 check never trips on large n
        p[-1] = 1.0 - p[:-1].sum()
        return cls(p)

    @property
    def p_min(self) -> float:
        return float(self.probs.min())

    def __len__(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class Instance:
    """Ground-truth environment. ``noise_std`` is a test hook; the model fixes it at 1."""

    features: FeatureMap
    context_dist: ContextDistribution
    theta: np.ndarray
    noise_std: float = 1.0

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).ravel()
        if theta.size != self.features.dim:
            raise ValueError(f"theta has length {theta.size}, features have dim {self.features.dim}")
        if len(self.context_dist) != self.features.n_contexts:
            raise ValueError("context distribution and feature table disagree on the number of contexts")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def dim(self) -> int:
        return self.features.dim

    @property
    def n_contexts(self) -> int:
        return self.features.n_contexts

    @property
    def n_actions(self) -> int:
        return self.features.n_actions

    def mean_rewards(self) -> np.ndarray:
        """Matrix of expected rewards, shape (C, K)."""
        return self.features.phi @ self.theta

    def with_noise(self, noise_std: float) -> "Instance":
        return Instance(self.features, self.context_dist, self.theta, noise_std)


@dataclass(frozen=True)
class Allocation:
    """Per-context probability rows over actions, shape (C, K)."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        if rows.ndim != 2:
            raise ValueError("allocation must be a 2-d array (contexts x actions)")
        if np.any(rows < 0) or np.any(rows > 1) or not np.all(np.isfinite(rows)):
            raise ValueError("allocation entries must lie in [0, 1]")
        if np.any(np.abs(rows.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("allocation rows must sum to 1")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @classmethod
    def uniform(cls, n_contexts: int, n_actions: int) -> "Allocation":
        return cls(np.full((n_contexts, n_actions), 1.0 / n_actions))

    @classmethod
    def normalized(cls, rows) -> "Allocation":
        """Build from nonnegative weights, clipping tiny negatives and renormalizing rows."""
        r = np.clip(np.asarray(rows, dtype=float), 0.0, None)
        r = r / r.sum(axis=1, keepdims=True)
        return cls(r)

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "Allocation":
        actions = np.asarray(actions, dtype=int)
        rows = np.zeros((actions.size, n_actions))
        rows[np.arange(actions.size), actions] = 1.0
        return cls(rows)

    @property
    def shape(self):
        return self.rows.shape

    def support(self) -> np.ndarray:
        return self.rows > 0


@dataclass(frozen=True)
class Observation:
    t: int
    x: int
    a: int
    r: float


# ---------------------------------------------------------------- operations


def best_action(theta, features: FeatureMap, x: int) -> int:
    """argmax_a theta' phi[x, a]; np.argmax already returns the lowest id on ties."""
    return int(np.argmax(features.phi[x] @ np.asarray(theta, dtype=float)))


def best_policy(theta, features: FeatureMap) -> np.ndarray:
    return np.argmax(features.phi @ np.asarray(theta, dtype=float), axis=1)


def gap_vector(features: FeatureMap, x: int, a: int, b: int) -> np.ndarray:
    """gamma^x_{a,b} = phi[x, b] - phi[x, a]."""
    if a == b:
        raise InvalidPairError(f"gap vector needs two distinct actions, got a=b={a}")
    return features.phi[x, b] - features.phi[x, a]


def _eps_mask(values: np.ndarray, eps: float) -> np.ndarray:
    """Boolean mask of eps-optimal entries along the last axis."""
    top = values.max(axis=-1, keepdims=True)
    if eps == 0:
        return values >= top - TIE_TOL
    return top - values < eps


def eps_optimal_set(theta, features: FeatureMap, x: int, eps: float) -> set[int]:
    if eps < 0:
        raise ValueError("eps must be non-negative")
    values = features.phi[x] @ np.asarray(theta, dtype=float)
    return set(np.flatnonzero(_eps_mask(values, eps)).tolist())


def eps_optimal_mask(theta, features: FeatureMap, eps: float) -> np.ndarray:
    """Vectorized eps-optimal sets for all contexts, shape (C, K)."""
    return _eps_mask(features.phi @ np.asarray(theta, dtype=float), eps)


def candidate_set(theta, features: FeatureMap, x: int, a: int, eps: float) -> set[int]:
    theta = np.asarray(theta, dtype=float)
    good = eps_optimal_set(theta, features, x, eps)
    if a in good:
        raise ValueError(f"action {a} is eps-optimal in context {x}; candidate set is undefined")
    values = features.phi[x] @ theta
    return {b for b in sorted(good) if values[b] - values[a] >= eps}


def min_gap(theta, features: FeatureMap) -> float:
    values = features.phi @ np.asarray(theta, dtype=float)
    if values.shape[1] < 2:
        raise DegenerateInstanceError("a gap needs at least two actions")
    top2 = np.sort(values, axis=1)[:, -2:]
    gaps = top2[:, 1] - top2[:, 0]
    if np.any(gaps <= TIE_TOL):
        x = int(np.argmin(gaps))
        raise DegenerateInstanceError(f"best action is not unique in context {x}")
    return float(gaps.min())


def design_matrix(alloc: Allocation, features: FeatureMap, context_dist: ContextDistribution) -> np.ndarray:
    """A(alpha) = sum_{x,a} p(x) alpha[x,a] phi phi'."""
    w = np.asarray(context_dist.probs)[:, None] * np.asarray(getattr(alloc, "rows", alloc))
    phi = features.phi
    A = np.einsum("xa,xai,xaj->ij", w, phi, phi)
    return 0.5 * (A + A.T)


def sample_context(context_dist: ContextDistribution, rng: np.random.Generator) -> int:
    return int(rng.choice(len(context_dist), p=context_dist.probs))


def sample_reward(instance: Instance, x: int, a: int, rng: np.random.Generator) -> float:
    mean = float(instance.features.phi[x, a] @ instance.theta)
    if instance.noise_std == 0:
        return mean
    return mean + instance.noise_std * float(rng.standard_normal())


def kl_bernoulli(a: float, b: float) -> float:
    for v in (a, b):
        if not 0.0 < v < 1.0:
            raise ValueError(f"Bernoulli parameters must lie in (0, 1), got {v}")
    return float(a * np.log(a / b) + (1 - a) * np.log((1 - a) / (1 - b)))


def context_count_deviation(trace, context_dist: ContextDistribution) -> float:
    """max_x |N_x(t)/t - p(x)| for a sequence of observed contexts."""
    trace = np.asarray(trace, dtype=int)
    if trace.size == 0:
        raise ValueError("trace must be nonempty")
    counts = np.bincount(trace, minlength=len(context_dist))
    return float(np.max(np.abs(counts / trace.size - context_dist.probs)))
