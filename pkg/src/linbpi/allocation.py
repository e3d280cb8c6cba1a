"""Characteristic time, optimal allocations and learnable subspaces.

The characteristic time is

    T*(theta, eps) = inf_alpha  max_{(x, a, b)}  2 ||gamma^x_{a,b}||^2_{A(alpha)^{-1}} / (theta' gamma^x_{a,b} + eps)^2

where (x, a, b) ranges over contexts, arms a outside the eps-optimal set and
eps-optimal arms b beating a by at least eps. The inner max is a max of convex
functions of alpha, so the outer problem is a convex min-max over a product of
simplices. ``solve_tstar`` treats it as a saddle point over (alpha, lam), with
lam a distribution over triples, and runs entropic mirror-prox on both blocks.
Every iteration also yields a certified lower bound (from the linearization of
the Lagrangian in alpha), so the returned value comes with a duality gap.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotLearnableError, TriviallySolvedError
from .estimation import SubspaceProjection, pseudo_inverse
from .model import Allocation, ContextDistribution, FeatureMap, design_matrix, eps_optimal_mask, kl_bernoulli, min_gap

RANGE_TOL = 1e-8
DIMENSION_BOUND_SLACK = 1.05


@dataclass(frozen=True)
class Triples:
    """Flattened set of (x, a, b) comparisons with gap vectors and weights."""

    x: np.ndarray
    a: np.ndarray
    b: np.ndarray
    gamma: np.ndarray  # phi[x, b] - phi[x, a], shape (n, d)
    weight: np.ndarray  # 2 / (theta' gamma + eps)^2

    def __len__(self) -> int:
        return self.x.size


def enumerate_triples(theta, features: FeatureMap, eps: float) -> Triples:
    theta = np.asarray(theta, dtype=float)
    phi = features.phi
    values = phi @ theta
    good = eps_optimal_mask(theta, features, eps)
    diff = values[:, None, :] - values[:, :, None]  # diff[x, a, b] = v_b - v_a
    sel = (~good)[:, :, None] & good[:, None, :] & (diff >= eps)
    xs, as_, bs = np.nonzero(sel)
    gamma = phi[xs, bs] - phi[xs, as_]
    weight = 2.0 / (diff[xs, as_, bs] + eps) ** 2
    return Triples(xs, as_, bs, gamma, weight)


@dataclass(frozen=True)
class OptimizerOptions:
    max_iters: int = 5000
    ridge: float = 1e-9
    tol: float = 1e-3
    init: Allocation | None = None
    step: float = 1.0
    min_step: float = 0.02
    patience: int = 50

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")


@dataclass
class TStarResult:
    t_star: float
    alpha_star: Allocation
    objective_trace: list
    iterations: int
    converged: bool
    lower_certificate: float
    worst_triple: tuple
    within_dimension_bound: bool | None = None
    raw_trace: list = field(default_factory=list, repr=False)

    @property
    def gap(self) -> float:
        return (self.t_star - self.lower_certificate) / self.t_star


def _range_ok(A: np.ndarray, A_pinv: np.ndarray, G: np.ndarray) -> np.ndarray:
    proj = G @ (A @ A_pinv).T
    resid = np.linalg.norm(G - proj, axis=1)
    return resid <= RANGE_TOL * np.maximum(1.0, np.linalg.norm(G, axis=1))


def _objective(A: np.ndarray, tri: Triples):
    A_pinv = pseudo_inverse(A)
    q = np.einsum("ij,jk,ik->i", tri.gamma, A_pinv, tri.gamma) * tri.weight
    q = np.where(_range_ok(A, A_pinv, tri.gamma), q, np.inf)
    i = int(np.argmax(q))
    return float(q[i]), i


def tstar_objective(alloc: Allocation, theta, features: FeatureMap, context_dist: ContextDistribution,
                    eps: float):
    """h(alpha) and the maximizing (x, a, b). Infinite if some gap is outside range(A(alpha))."""
    tri = enumerate_triples(theta, features, eps)
    if len(tri) == 0:
        raise TriviallySolvedError("every action is eps-optimal in every context")
    A = design_matrix(alloc, features, context_dist)
    h, i = _objective(A, tri)
    return h, (int(tri.x[i]), int(tri.a[i]), int(tri.b[i]))


def dimension_bound(theta, features: FeatureMap, eps: float) -> float:
    """Instance-free upper bound d/eps^2 (or 4d/Delta_min^2 when eps = 0)."""
    d = features.dim
    if eps > 0:
        return d / eps**2
    return 4.0 * d / min_gap(theta, features) ** 2


class _Saddle:
    def __init__(self, phi, p, tri: Triples, ridge):
        C, K, d = phi.shape
        self.F = phi.reshape(C * K, d)
        self.p, self.tri, self.ridge = p, tri, ridge
        self.shape = (C, K)
        self.d = d

    def design(self, al):
        w = (self.p[:, None] * al).ravel()
        A = self.F.T @ (self.F * w[:, None])
        return 0.5 * (A + A.T)

    def grads(self, al, lam):
        A = self.design(al)
        A = A + self.ridge * np.trace(A) / self.d * np.eye(self.d)
        Ai = np.linalg.inv(A)
        G, w = self.tri.gamma, self.tri.weight
        GA = G @ Ai
        q = np.sum(GA * G, axis=1) * w
        # d/d alpha of sum_i lam_i q_i = -p(x) phi' (A^-1 M A^-1) phi with M = sum lam_i w_i g g'
        H = GA.T @ (GA * (lam * w)[:, None])
        g_al = -self.p[:, None] * np.sum((self.F @ H) * self.F, axis=1).reshape(self.shape)
        return q, g_al


def _entropic_step(al, g, eta):
    z = -eta * g
    z -= z.max(axis=1, keepdims=True)
    out = al * np.exp(z)
    return out / out.sum(axis=1, keepdims=True)


def solve_tstar(theta, features: FeatureMap, context_dist: ContextDistribution, eps: float,
                opts: OptimizerOptions | None = None) -> TStarResult:
    opts = opts or OptimizerOptions()
    tri = enumerate_triples(theta, features, eps)
    if len(tri) == 0:
        raise TriviallySolvedError("every action is eps-optimal in every context")
    phi = features.phi
    p = np.asarray(context_dist.probs)
    C, K, _ = phi.shape
    sad = _Saddle(phi, p, tri, opts.ridge)

    if opts.init is None:
        al = np.full((C, K), 1.0 / K)
    else:
        # keep every coordinate alive so the multiplicative updates can move it
        al = 0.999 * np.asarray(opts.init.rows) + 0.001 / K
    lam = np.full(len(tri), 1.0 / len(tri))
    scale = 1.0 / p[:, None]
    eta = opts.step
    best_h, best_al = np.inf, al.copy()
    lower = -np.inf
    since = 0
    trace, raw = [], []
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        q, g_al = sad.grads(al, lam)
        h = float(q.max())
        raw.append(h)
        if h < best_h * (1 - 1e-6):
            since = 0
        else:
            since += 1
        if h < best_h:
            best_h, best_al = h, al.copy()
        trace.append(best_h)
        if since >= opts.patience:
            eta = max(eta * 0.5, opts.min_step)
            since = 0
        # linearizing the Lagrangian in alpha gives a valid lower bound on the saddle value
        lower = max(lower, float(lam @ q + np.sum(g_al.min(axis=1) - (al * g_al).sum(axis=1))))
        if (best_h - lower) / best_h < opts.tol:
            converged = True
            break
        gs = g_al * scale
        nrm = np.abs(gs).max()
        if nrm == 0:
            converged = True
            break
        al_mid = _entropic_step(al, gs / nrm, eta)
        lam_mid = lam * np.exp(eta * (q - h) / h)
        lam_mid /= lam_mid.sum()
        q2, g2 = sad.grads(al_mid, lam_mid)
        al = _entropic_step(al, g2 * scale / nrm, eta)
        lam = lam * np.exp(eta * (q2 - q2.max()) / h)
        lam /= lam.sum()

    alpha = Allocation.normalized(best_al)
    # report the ridge-free value at the returned allocation
    t_star, i = _objective(design_matrix(alpha, features, context_dist), tri)
    try:
        bound = dimension_bound(theta, features, eps)
        within = bool(t_star <= DIMENSION_BOUND_SLACK * bound)
    except Exception:
        within = None
    return TStarResult(
        t_star=t_star,
        alpha_star=alpha,
        objective_trace=trace,
        iterations=it,
        converged=converged,
        lower_certificate=lower,
        worst_triple=(int(tri.x[i]), int(tri.a[i]), int(tri.b[i])),
        within_dimension_bound=within,
        raw_trace=raw,
    )


def learnable_subspace(alloc: Allocation, features: FeatureMap, tol: float = 1e-10) -> SubspaceProjection:
    """Orthonormal basis of span{phi[x, a] : alpha[x, a] > 0}."""
    supp = np.asarray(alloc.rows) > 0
    if not supp.any():
        raise ValueError("allocation has empty support")
    F = features.phi[supp]
    S = F.T @ F
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    keep = w > tol * w[-1]
    P = V[:, keep][:, ::-1].T
    # fix signs so the basis is reproducible: largest-magnitude entry positive
    idx = np.argmax(np.abs(P), axis=1)
    P = P * np.sign(P[np.arange(P.shape[0]), idx])[:, None]
    return SubspaceProjection(P)


def subspace_is_learnable(proj: SubspaceProjection, alloc: Allocation, features: FeatureMap) -> bool:
    span = learnable_subspace(alloc, features)
    resid = proj.P - proj.P @ span.P.T @ span.P
    return bool(np.abs(resid).max() <= 1e-9)


def tstar_passive(theta, features: FeatureMap, context_dist: ContextDistribution, alloc: Allocation,
                  proj: SubspaceProjection, eps: float) -> float:
    """Characteristic time of a fixed sampling rule, identification restricted to U."""
    theta = np.asarray(theta, dtype=float)
    if not proj.contains(theta):
        raise ValueError("theta does not lie in the subspace U")
    if not subspace_is_learnable(proj, alloc, features):
        raise NotLearnableError("U is not contained in the span of the sampled features")
    tri = enumerate_triples(theta, features, eps)
    if len(tri) == 0:
        raise TriviallySolvedError("every action is eps-optimal in every context")
    M = proj.P @ design_matrix(alloc, features, context_dist) @ proj.P.T
    M_pinv = pseudo_inverse(0.5 * (M + M.T))
    G = tri.gamma @ proj.P.T
    q = np.einsum("ij,jk,ik->i", G, M_pinv, G) * tri.weight
    return float(q.max())


def lower_bound_samples(t_star: float, delta: float) -> float:
    """T* kl(delta, 1 - delta); zero at delta = 1/2."""
    if t_star <= 0:
        raise ValueError("t_star must be positive")
    if delta == 0.5:
        return 0.0
    return t_star * kl_bernoulli(delta, 1.0 - delta)
