"""Sampling rules: forced exploration + tracking for the adaptive learner, and static baselines."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .allocation import OptimizerOptions, solve_tstar
from .errors import BPIError, DegenerateInstanceError
from .estimation import CovariatesState
from .model import Allocation, ContextDistribution, FeatureMap, RANK_TOL, _rank
from .ret import DOWN_TILT, NO_CHANGE, UP_TILT

GATE_TOL = 1e-10
RULE_MARGIN = 0.15

ADAPTIVE = "adaptive"
RANDOM = "random"
TABLE = "table"
RET_RULE = "ret-rule"


@dataclass(frozen=True)
class ExplorationBasis:
    """Per-context sets of linearly independent actions used for forced exploration."""

    actions: tuple  # tuple of int arrays, one per context
    gram: np.ndarray  # (C, d, d): sum over A_x of phi phi'
    c_explore: float

    @property
    def span_dims(self) -> np.ndarray:
        return np.array([len(a) for a in self.actions])


def build_exploration_basis(features: FeatureMap, tol: float = RANK_TOL) -> ExplorationBasis:
    """Greedy scan in action order, keeping each action that enlarges the span."""
    phi = features.phi
    C, K, d = phi.shape
    chosen, grams = [], np.zeros((C, d, d))
    for x in range(C):
        keep: list[int] = []
        for a in range(K):
            if _rank(phi[x, keep + [a]], tol) > len(keep):
                keep.append(a)
        chosen.append(np.array(keep, dtype=int))
        F = phi[x, keep]
        grams[x] = F.T @ F
    total = grams.sum(axis=0)
    c = float(np.linalg.eigvalsh(0.5 * (total + total.T))[0])
    if c <= tol * max(1.0, float(np.trace(total))):
        raise DegenerateInstanceError("exploration sets do not span the feature space")
    grams.setflags(write=False)
    return ExplorationBasis(tuple(chosen), grams, c)


def forced_gate(state: CovariatesState, basis: ExplorationBasis, x: int) -> bool:
    """True when context x must be force-explored this visit.

    Forces on the first d_x visits, then whenever A_t(x) - sqrt(N_x/d_x) * sum_{A_x} phi phi'
    has a negative eigenvalue.
    """
    n_x = int(state.counts[x].sum())
    d_x = len(basis.actions[x])
    if n_x < d_x:
        return True
    diff = state.A_ctx[x] - np.sqrt(n_x / d_x) * basis.gram[x]
    return bool(np.linalg.eigvalsh(0.5 * (diff + diff.T))[0] < -GATE_TOL)


@dataclass(frozen=True)
class SamplingPolicy:
    """Which sampling rule to run. Static variants carry a fixed allocation."""

    variant: str
    alloc: Allocation | None = None

    def __post_init__(self):
        if self.variant not in (ADAPTIVE, RANDOM, TABLE, RET_RULE):
            raise ValueError(f"unknown sampling variant {self.variant!r}")
        if self.variant != ADAPTIVE and self.alloc is None:
            raise ValueError(f"{self.variant} policy needs an allocation")

    @property
    def is_static(self) -> bool:
        return self.variant != ADAPTIVE

    @classmethod
    def adaptive(cls) -> "SamplingPolicy":
        return cls(ADAPTIVE)

    @classmethod
    def uniform(cls, n_contexts: int, n_actions: int) -> "SamplingPolicy":
        return cls(RANDOM, Allocation.uniform(n_contexts, n_actions))

    @classmethod
    def table(cls, actions, n_actions: int) -> "SamplingPolicy":
        return cls(TABLE, Allocation.deterministic(actions, n_actions))

    @classmethod
    def ret_rule(cls, kpis) -> "SamplingPolicy":
        """Rule-based policy from each context's KPI vector [1, r_bc, n_os]."""
        acts = [ret_rule_based(k) for k in np.asarray(kpis, dtype=float)]
        return cls(RET_RULE, Allocation.deterministic(acts, 3))

    @classmethod
    def from_allocation(cls, alloc: Allocation) -> "SamplingPolicy":
        return cls(TABLE if np.all(np.isin(alloc.rows, (0.0, 1.0))) else RANDOM, alloc)


@dataclass(frozen=True)
class ResolveSchedule:
    """Geometric doubling: re-solve at round t once t >= max(first, 2 * last re-solve)."""

    first: int = 1
    factor: float = 2.0
    opts: OptimizerOptions = field(default_factory=lambda: OptimizerOptions(max_iters=2000, tol=1e-2))

    def due(self, t: int, last: int) -> bool:
        return t >= self.first and t >= self.factor * last


@dataclass
class SamplerState:
    cursor: np.ndarray  # 0-based position in A_x, advanced on forced rounds only
    target: np.ndarray  # S[x, a] = sum of alpha_{x,a}(s) over rounds with x_s = x
    alpha: np.ndarray
    last_resolve: int = 0
    n_resolves: int = 0
    lag: int = 0  # ceil(sqrt(t)) at the last re-solve
    n_forced: int = 0
    theta_queries: int = 0
    flags: list = field(default_factory=list)

    @classmethod
    def initial(cls, n_contexts: int, n_actions: int) -> "SamplerState":
        return cls(
            cursor=np.zeros(n_contexts, dtype=int),
            target=np.zeros((n_contexts, n_actions)),
            alpha=np.full((n_contexts, n_actions), 1.0 / n_actions),
        )

    def accumulate(self, x: int) -> None:
        self.target[x] += self.alpha[x]


def static_draw(policy: SamplingPolicy, x: int, u: float) -> int:
    """Inverse-CDF draw from the policy's row for context x using a uniform u in [0, 1)."""
    row = policy.alloc.rows[x]
    a = int(np.searchsorted(np.cumsum(row), u, side="right"))
    return min(a, row.size - 1)


def next_action(sampler: SamplerState, cov: CovariatesState, basis: ExplorationBasis | None,
                policy: SamplingPolicy, x: int, u: float = 0.0) -> int:
    """Action for context x this round.

    Static policies draw from their allocation and never force. The adaptive rule
    forces from A_x when the gate fires and otherwise tracks the cumulative target.
    """
    if policy.is_static:
        return static_draw(policy, x, u)
    if forced_gate(cov, basis, x):
        return _forced(sampler, basis, x)
    supp = sampler.target[x] > 0
    if not supp.any():
        sampler.flags.append(("empty-tracking-support", int(cov.t), int(x)))
        return _forced(sampler, basis, x)
    deficit = np.where(supp, cov.counts[x] - sampler.target[x], np.inf)
    return int(np.argmin(deficit))


def _forced(sampler: SamplerState, basis: ExplorationBasis, x: int) -> int:
    acts = basis.actions[x]
    a = int(acts[sampler.cursor[x]])
    sampler.cursor[x] = (sampler.cursor[x] + 1) % len(acts)
    sampler.n_forced += 1
    return a


def update_allocation(sampler: SamplerState, theta_hat, features: FeatureMap, context_dist: ContextDistribution,
                      eps: float, t: int, schedule: ResolveSchedule | None = None) -> bool:
    """Re-solve alpha(t) at theta_hat when the schedule is due. Returns True if alpha changed."""
    schedule = schedule or ResolveSchedule()
    if not schedule.due(t, sampler.last_resolve):
        return False
    sampler.last_resolve = t
    sampler.lag = int(np.ceil(np.sqrt(t)))
    sampler.theta_queries += 1
    opts = schedule.opts
    warm = OptimizerOptions(opts.max_iters, opts.ridge, opts.tol, Allocation.normalized(sampler.alpha),
                            opts.step, opts.min_step, opts.patience)
    try:
        res = solve_tstar(theta_hat, features, context_dist, eps, warm)
    except BPIError as exc:
        sampler.flags.append(("resolve-failed", int(t), type(exc).__name__))
        return False
    sampler.alpha = np.array(res.alpha_star.rows)
    sampler.n_resolves += 1
    return True


def ret_rule_based(x) -> int:
    """Threshold surrogate of a rule-based tilt controller.

    Down-tilt when overshooting exceeds bad coverage by more than 0.15, up-tilt in the
    opposite case, no change inside the dead zone.
    """
    _, r_bc, n_os = (float(v) for v in x)
    if n_os - r_bc > RULE_MARGIN:
        return DOWN_TILT
    if r_bc - n_os > RULE_MARGIN:
        return UP_TILT
    return NO_CHANGE
