"""Running sufficient statistics and least-squares estimators."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError
from .model import Observation

PINV_TOL = 1e-10
SYM_TOL = 1e-9


def _check_symmetric(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.allclose(M, M.T, atol=SYM_TOL, rtol=0):
        raise ValueError("matrix is not symmetric")
    return 0.5 * (M + M.T)


def pseudo_inverse(M, tol: float = PINV_TOL) -> np.ndarray:
    """Moore-Penrose inverse of a symmetric PSD matrix via its eigendecomposition.

    Eigenvalues below ``tol * lambda_max`` are treated as zero.
    """
    M = _check_symmetric(M)
    w, V = np.linalg.eigh(M)
    top = w[-1] if w.size else 0.0
    if top <= 0:
        return np.zeros_like(M)
    keep = w > tol * top
    inv = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    return (V * inv) @ V.T


def min_eigenvalue(M) -> float:
    M = _check_symmetric(M)
    return float(np.linalg.eigvalsh(M)[0])


def weighted_norm_sq(v, G) -> float:
    """v' G v."""
    v = np.asarray(v, dtype=float)
    return float(v @ np.asarray(G, dtype=float) @ v)


@dataclass(frozen=True)
class SubspaceProjection:
    """Orthonormal basis (rows of P) of a subspace U of R^d."""

    P: np.ndarray

    def __post_init__(self):
        P = np.atleast_2d(np.array(self.P, dtype=float))
        if P.shape[0] > P.shape[1]:
            raise ValueError("projection must have at most d rows")
        if not np.allclose(P @ P.T, np.eye(P.shape[0]), atol=1e-10, rtol=0):
            raise ValueError("projection rows must be orthonormal")
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    @property
    def r(self) -> int:
        return self.P.shape[0]

    @property
    def d(self) -> int:
        return self.P.shape[1]

    @classmethod
    def identity(cls, d: int) -> "SubspaceProjection":
        return cls(np.eye(d))

    def contains(self, v, tol: float = 1e-9) -> bool:
        v = np.asarray(v, dtype=float)
        return bool(np.linalg.norm(v - self.P.T @ (self.P @ v)) <= tol * max(1.0, np.linalg.norm(v)))


@dataclass
class CovariatesState:
    """Sums over the observed rounds, updated in place.

    A = sum phi phi', b = sum phi r, A_ctx[x] = sum over rounds in context x,
    counts[x, a] = number of pulls of a in x.
    """

    n_contexts: int
    n_actions: int
    dim: int
    t: int = 0
    A: np.ndarray = field(default=None)
    b: np.ndarray = field(default=None)
    A_ctx: np.ndarray = field(default=None)
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        d, C, K = self.dim, self.n_contexts, self.n_actions
        if self.A is None:
            self.A = np.zeros((d, d))
        if self.b is None:
            self.b = np.zeros(d)
        if self.A_ctx is None:
            self.A_ctx = np.zeros((C, d, d))
        if self.counts is None:
            self.counts = np.zeros((C, K), dtype=np.int64)

    @classmethod
    def empty(cls, features) -> "CovariatesState":
        C, K, d = features.phi.shape
        return cls(C, K, d)

    @property
    def context_counts(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def add(self, phi: np.ndarray, x: int, a: int, r: float) -> None:
        outer = np.outer(phi, phi)
        self.A += outer
        self.A_ctx[x] += outer
        self.b += r * phi
        self.counts[x, a] += 1
        self.t += 1

    def copy(self) -> "CovariatesState":
        return CovariatesState(
            self.n_contexts, self.n_actions, self.dim, self.t,
            self.A.copy(), self.b.copy(), self.A_ctx.copy(), self.counts.copy(),
        )


def update(state: CovariatesState, obs: Observation, features) -> CovariatesState:
    """Fold one observation into the state (in place) and return it."""
    state.add(features.phi[obs.x, obs.a], obs.x, obs.a, obs.r)
    return state


def batch_state(observations, features) -> CovariatesState:
    """Build a state from scratch in one pass, mainly as a cross-check."""
    obs = list(observations)
    state = CovariatesState.empty(features)
    if not obs:
        return state
    xs = np.array([o.x for o in obs])
    acts = np.array([o.a for o in obs])
    rs = np.array([o.r for o in obs], dtype=float)
    F = features.phi[xs, acts]
    state.A = F.T @ F
    state.b = F.T @ rs
    for x in np.unique(xs):
        Fx = F[xs == x]
        state.A_ctx[x] = Fx.T @ Fx
    np.add.at(state.counts, (xs, acts), 1)
    state.t = len(obs)
    return state


def lse(state: CovariatesState, tol: float = PINV_TOL) -> np.ndarray:
    """Least-squares estimate A^+ b (minimum-norm when A is singular)."""
    if state.t == 0:
        raise InsufficientDataError("no observations yet")
    return pseudo_inverse(state.A, tol) @ state.b


def projected_gram(state: CovariatesState, proj: SubspaceProjection) -> np.ndarray:
    M = proj.P @ state.A @ proj.P.T
    return 0.5 * (M + M.T)


def projected_lse(state: CovariatesState, proj: SubspaceProjection, tol: float = PINV_TOL) -> np.ndarray:
    """(P A P')^{-1} P b, the estimate of P theta restricted to the subspace."""
    M = projected_gram(state, proj)
    w = np.linalg.eigvalsh(M)
    if state.t == 0 or w[0] <= tol * max(w[-1], 1.0):
        raise InsufficientDataError("projected covariates matrix is singular")
    return np.linalg.solve(M, proj.P @ state.b)


class TraceWriter:
    """Per-round CSV dump: round, context, action, reward, lambda_min(A_t)."""

    header = ("round", "context", "action", "reward", "lambda_min")

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(self.header)

    def write(self, t: int, x: int, a: int, r: float, lam_min: float) -> None:
        self._w.writerow((t, x, a, repr(float(r)), repr(float(lam_min))))

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
