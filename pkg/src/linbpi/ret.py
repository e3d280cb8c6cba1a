"""Synthetic remote electrical tilt (RET) environment.

Contexts are KPI vectors x = [1, r_bc, n_os] (bad coverage and overshooting
indicators in [0, 1]); actions are up-tilt, down-tilt and no-change, encoded
one-hot. The feature of (x, a) is the row-major vectorization of the outer
product x a', so theta[3 * i + a] is the weight of KPI i for action a.

The ground-truth theta is fit by least squares to a hand-designed reward table:

    up-tilt    g * (w_bc * r_bc - w_os * n_os - k_up)
    down-tilt  g * (w_os * n_os - w_bc * r_bc - k_down)
    no-change  0

so up-tilt pays off when weighted bad coverage dominates, down-tilt when
weighted overshooting dominates, and leaving the antenna alone is best when
neither dominates by a margin (in particular when both KPIs are low). The gain
g = 40 puts every 20 x 20 mesh cell at least 0.2 away from a tie.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ContextDistribution, FeatureMap, Instance, best_policy, min_gap

UP_TILT, DOWN_TILT, NO_CHANGE = 0, 1, 2
ACTION_NAMES = ("up-tilt", "down-tilt", "no-change")
ACTION_VECTORS = np.eye(3)

DEFAULT_WEIGHTS = (0.6, 0.4)
REWARD_GAIN = 40.0
MARGIN_UP = 0.11
MARGIN_DOWN = 0.09
FIT_MESH = 20

# Output of construct_theta(DEFAULT_WEIGHTS), frozen.
DEFAULT_THETA = np.array([-4.4, -3.6, 0.0, 24.0, -24.0, 0.0, -16.0, 16.0, 0.0])


def mesh_centers(m: int) -> np.ndarray:
    """KPI vectors [1, r_bc, n_os] at the m x m cell centers, r_bc-major order."""
    if m < 1:
        raise ValueError("mesh size must be positive")
    c = (np.arange(m) + 0.5) / m
    r, n = np.meshgrid(c, c, indexing="ij")
    return np.column_stack([np.ones(m * m), r.ravel(), n.ravel()])


def _action_vector(a) -> np.ndarray:
    if np.isscalar(a):
        return ACTION_VECTORS[int(a)]
    v = np.asarray(a, dtype=float)
    if v.shape != (3,) or not np.array_equal(np.sort(v), [0.0, 0.0, 1.0]):
        raise ValueError(f"action must be an id in 0..2 or a one-hot vector, got {a!r}")
    return v


def ret_feature(x, a) -> np.ndarray:
    """vec(x a') in row-major order (x indexes rows)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (3,) or x[0] != 1.0:
        raise ValueError("context must be [1, r_bc, n_os]")
    if np.any(x[1:] < 0) or np.any(x[1:] > 1):
        raise ValueError(f"KPI values must lie in [0, 1], got {x[1:]}")
    return np.outer(x, _action_vector(a)).ravel()


def feature_table(kpis: np.ndarray) -> np.ndarray:
    """Features for every (context, action), shape (C, 3, 9)."""
    kpis = np.asarray(kpis, dtype=float)
    return np.einsum("ci,aj->caij", kpis, ACTION_VECTORS).reshape(len(kpis), 3, 9)


def target_rewards(kpis: np.ndarray, weights=DEFAULT_WEIGHTS, gain: float = REWARD_GAIN) -> np.ndarray:
    w_bc, w_os = weights
    r, n = kpis[:, 1], kpis[:, 2]
    up = w_bc * r - w_os * n - MARGIN_UP
    down = w_os * n - w_bc * r - MARGIN_DOWN
    return gain * np.column_stack([up, down, np.zeros_like(r)])


def construct_theta(weights=DEFAULT_WEIGHTS, gain: float = REWARD_GAIN, mesh: int = FIT_MESH) -> np.ndarray:
    """Least-squares fit of theta to the target reward table on an m x m mesh."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (2,) or np.any(w <= 0):
        raise ValueError("weights must be two positive numbers")
    kpis = mesh_centers(mesh)
    F = feature_table(kpis).reshape(-1, 9)
    y = target_rewards(kpis, w, gain).ravel()
    theta, *_ = np.linalg.lstsq(F, y, rcond=None)
    return theta


@dataclass(frozen=True)
class RetConfig:
    mesh: int = 20
    weights: tuple = DEFAULT_WEIGHTS
    theta: np.ndarray | None = None
    probs: np.ndarray | None = None

    def __post_init__(self):
        if self.mesh < 2:
            raise ValueError("mesh must be at least 2")
        w = tuple(float(v) for v in self.weights)
        if len(w) != 2 or min(w) <= 0:
            raise ValueError("weights must be two positive numbers")
        object.__setattr__(self, "weights", w)

    def resolved_theta(self) -> np.ndarray:
        if self.theta is not None:
            return np.asarray(self.theta, dtype=float)
        if np.allclose(self.weights, DEFAULT_WEIGHTS):
            return DEFAULT_THETA.copy()
        return construct_theta(self.weights)

    def kpis(self) -> np.ndarray:
        return mesh_centers(self.mesh)


def build_ret_instance(cfg: RetConfig | None = None) -> Instance:
    cfg = cfg or RetConfig()
    kpis = cfg.kpis()
    features = FeatureMap(feature_table(kpis))
    C = len(kpis)
    dist = ContextDistribution.uniform(C) if cfg.probs is None else ContextDistribution(cfg.probs)
    return Instance(features, dist, cfg.resolved_theta())


def check_unique_optimum(instance: Instance) -> float:
    """Minimum gap over the mesh; raises if any cell has a tied best action."""
    return min_gap(instance.theta, instance.features)


def decision_region_grid(theta, resolution: int = 20):
    """Best action at each point of a resolution x resolution grid of cell centers.

    Returns (r_bc, n_os, action) as flat arrays.
    """
    kpis = mesh_centers(resolution)
    acts = best_policy(theta, FeatureMap(feature_table(kpis)))
    return kpis[:, 1], kpis[:, 2], acts


def _predict(kpis: np.ndarray, acts: np.ndarray, theta: np.ndarray) -> np.ndarray:
    # one code path for generation and scoring, so a noiseless dataset scores exactly 0
    F = np.einsum("ni,nj->nij", kpis, ACTION_VECTORS[np.asarray(acts, dtype=int)]).reshape(len(kpis), 9)
    return F @ theta


def nrmse(theta, dataset) -> float:
    """RMSE of theta' phi against observed rewards, divided by the reward range.

    ``dataset`` is an iterable of (x, a, p): KPI vector, action id and observed reward.
    """
    rows = list(dataset)
    if not rows:
        raise ValueError("dataset is empty")
    theta = np.asarray(theta, dtype=float)
    for x, a, _ in rows:
        ret_feature(x, a)  # validates the record
    acts = np.array([int(np.argmax(_action_vector(a))) for _, a, _ in rows])
    pred = _predict(np.array([x for x, _, _ in rows], dtype=float), acts, theta)
    obs = np.array([p for *_, p in rows], dtype=float)
    spread = obs.max() - obs.min()
    if spread <= 0:
        raise ValueError("observed rewards are constant; NRMSE is undefined")
    return float(np.sqrt(np.mean((pred - obs) ** 2)) / spread)


def simulate_dataset(theta, n: int, rng: np.random.Generator, noise_std: float = 1.0):
    """Records (x, a, p) with contexts uniform on [0,1]^2, uniform actions and Gaussian noise."""
    theta = np.asarray(theta, dtype=float)
    kpis = np.column_stack([np.ones(n), rng.random((n, 2))])
    acts = rng.integers(0, 3, size=n)
    p = _predict(kpis, acts, theta)
    if noise_std:
        p = p + noise_std * rng.standard_normal(n)
    return [(kpis[i], int(acts[i]), float(p[i])) for i in range(n)]
