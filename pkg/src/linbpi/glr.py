"""GLR statistics, exploration thresholds and the stopping/decision rules.

The pairwise statistic for "a beats b by at least -eps" is

    Z_{a,b} = sgn(th' g + eps) * (th' g + eps)^2 / (2 g' A^{-1} g),   g = phi_a - phi_b,

and the per-context statistic is max over eps-optimal a (under th) of min over b != a.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GateNotMetError, InvalidPairError
from .estimation import CovariatesState, SubspaceProjection, projected_gram
from .model import TIE_TOL

GATE_TOL = 1e-10


@dataclass(frozen=True)
class StoppingConfig:
    eps: float
    delta: float
    u: float = 1.0
    c: float = 0.1

    def __post_init__(self):
        for name in ("eps", "delta", "u", "c"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie strictly inside (0, 1)")
        if self.u <= 0 or self.c <= 0:
            raise ValueError("u and c must be positive")


@dataclass
class StopDecision:
    stopped: bool
    z_values: np.ndarray
    threshold: float
    recommended: np.ndarray | None = None
    gate_ok: bool = True
    # contexts where no arm looked eps-optimal and the plain argmax was used instead
    fallback_contexts: list = field(default_factory=list)


def _inv_pd(A: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (A + A.T))
    if w[0] <= GATE_TOL * max(w[-1], 1.0):
        raise GateNotMetError(f"covariates matrix is not positive definite (lambda_min={w[0]:.3g})")
    return (V / w) @ V.T


def _signed_ratio(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.sign(num) * num**2 / (2.0 * den)
        # indistinguishable pairs: infinitely confident if the margin alone decides, else zero
        zero = den <= 0
        if np.any(zero):
            z = np.where(zero, np.sign(num) * np.inf, z)
            z = np.where(zero & (num == 0), 0.0, z)
    return z


def z_pair(theta_hat, A_t, gamma_ba, eps: float, A_inv=None) -> float:
    """Closed-form GLR statistic for one ordered pair. ``gamma_ba`` is phi_a - phi_b."""
    g = np.asarray(gamma_ba, dtype=float)
    if not np.any(g):
        raise InvalidPairError("zero gap vector")
    if A_inv is None:
        A_inv = _inv_pd(np.asarray(A_t, dtype=float))
    num = float(np.asarray(theta_hat) @ g) + eps
    if num == 0.0:
        return 0.0
    den = float(g @ A_inv @ g)
    return float(np.sign(num) * num * num / (2.0 * den))


def pairwise_statistics(theta_hat, A_inv, phi_x: np.ndarray, eps: float) -> np.ndarray:
    """Z[.., a, b] for every ordered pair of a context's (or batch of contexts') actions.

    ``phi_x`` has shape (..., K, d). Diagonal entries are +inf.
    """
    v = phi_x @ theta_hat
    M = phi_x @ A_inv @ np.swapaxes(phi_x, -1, -2)
    diag = np.diagonal(M, axis1=-2, axis2=-1)
    den = diag[..., :, None] + diag[..., None, :] - 2.0 * M
    den = np.maximum(den, 0.0)
    num = v[..., :, None] - v[..., None, :] + eps
    z = _signed_ratio(num, den)
    K = phi_x.shape[-2]
    z[..., np.arange(K), np.arange(K)] = np.inf
    return z


def context_statistics(theta_hat, A_inv, phi: np.ndarray, eps: float):
    """Per-context (Z, decision, fallback flag) for a feature block of shape (C, K, d)."""
    z = pairwise_statistics(theta_hat, A_inv, phi, eps)
    worst = z.min(axis=-1)  # min over b != a (diagonal is +inf)
    v = phi @ theta_hat
    top = v.max(axis=-1, keepdims=True)
    good = v >= top - TIE_TOL if eps == 0 else top - v < eps
    fallback = ~good.any(axis=-1)
    good = np.where(fallback[:, None], True, good)
    masked = np.where(good, worst, -np.inf)
    rec = np.argmax(masked, axis=-1)
    Z = masked[np.arange(len(rec)), rec]
    return Z, rec, fallback


def z_context(theta_hat, state: CovariatesState, features, x: int, eps: float):
    """(Z^x, recommended action) for context x."""
    A_inv = _inv_pd(state.A)
    Z, rec, _ = context_statistics(np.asarray(theta_hat, float), A_inv, features.phi[x:x + 1], eps)
    return float(Z[0]), int(rec[0])


def _beta_from_eigs(eigs: np.ndarray, cfg: StoppingConfig) -> float:
    eigs = np.clip(eigs, 0.0, None)
    logdet_half = 0.5 * float(np.sum(np.log1p(eigs / (cfg.u * cfg.c))))
    return (1.0 + cfg.u) * (logdet_half + np.log(1.0 / cfg.delta))


def beta_threshold(state_or_A, cfg: StoppingConfig) -> float:
    """(1+u) log( det(A/(uc) + I)^{1/2} / delta ) via log-eigenvalues."""
    A = state_or_A.A if isinstance(state_or_A, CovariatesState) else np.asarray(state_or_A, float)
    return _beta_from_eigs(np.linalg.eigvalsh(0.5 * (A + A.T)), cfg)


def _decide(theta_hat, gram: np.ndarray, phi: np.ndarray, cfg: StoppingConfig) -> StopDecision:
    w, V = np.linalg.eigh(0.5 * (gram + gram.T))
    beta = _beta_from_eigs(w, cfg)
    C = phi.shape[0]
    if w[0] < cfg.c - GATE_TOL:
        return StopDecision(False, np.full(C, np.nan), beta, gate_ok=False)
    A_inv = (V / w) @ V.T
    Z, rec, fallback = context_statistics(np.asarray(theta_hat, float), A_inv, phi, cfg.eps)
    stopped = bool(np.all(Z > beta))
    return StopDecision(
        stopped, Z, beta,
        recommended=rec if stopped else None,
        fallback_contexts=np.flatnonzero(fallback).tolist(),
    )


def stopping_check(theta_hat, state: CovariatesState, features, cfg: StoppingConfig) -> StopDecision:
    """Stop iff lambda_min(A_t) >= c and Z^x > beta for every context."""
    return _decide(theta_hat, state.A, features.phi, cfg)


# ---------------------------------------------------------------- subspace variants


def z_pair_subspace(theta_hat_U, P, PAPt, gamma_ba, eps: float) -> float:
    g = np.asarray(P) @ np.asarray(gamma_ba, dtype=float)
    if not np.any(np.abs(g) > 1e-15):
        raise InvalidPairError("gap vector projects to zero")
    return z_pair(theta_hat_U, PAPt, g, eps)


def beta_threshold_subspace(state: CovariatesState, proj: SubspaceProjection, cfg: StoppingConfig) -> float:
    M = projected_gram(state, proj)
    return _beta_from_eigs(np.linalg.eigvalsh(M), cfg)


def stopping_check_subspace(theta_hat_U, state: CovariatesState, features, proj: SubspaceProjection,
                            cfg: StoppingConfig) -> StopDecision:
    """Same rule as ``stopping_check`` on projected features and P A_t P'."""
    phi_U = features.phi @ proj.P.T
    return _decide(theta_hat_U, projected_gram(state, proj), phi_U, cfg)
