"""Single runs and Monte Carlo campaigns for active and passive identification.

Seeding: run ``i`` of a campaign with base seed ``s`` uses
``SeedSequence(s, spawn_key=(i,))`` and spawns three independent child streams,
one each for contexts, reward noise and the sampling policy. Every stream is
consumed one value per round, in blocks, so results do not depend on the block
size, on worker scheduling or on other runs.
"""
from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .allocation import learnable_subspace, lower_bound_samples, solve_tstar, subspace_is_learnable, tstar_passive
from .errors import BPIError, TriviallySolvedError
from .estimation import CovariatesState, SubspaceProjection, TraceWriter, lse, projected_lse, pseudo_inverse
from .glr import StoppingConfig, stopping_check, stopping_check_subspace
from .model import Allocation, Instance
from .sampling import (
    ResolveSchedule,
    SamplerState,
    SamplingPolicy,
    build_exploration_basis,
    next_action,
    update_allocation,
)

DEFAULT_MAX_ROUNDS = 10**6
BLOCK = 4096
SCHEMA_VERSION = 1


def run_seed_sequence(base_seed: int, run_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(base_seed), spawn_key=(int(run_index),))


class RoundStreams:
    """Pre-drawn per-round randomness: context ids, standard normal noise, policy uniforms."""

    def __init__(self, seed_seq: np.random.SeedSequence, context_probs: np.ndarray, block: int = BLOCK):
        ctx_ss, noise_ss, pol_ss = seed_seq.spawn(3)
        self._ctx = np.random.default_rng(ctx_ss)
        self._noise = np.random.default_rng(noise_ss)
        self._pol = np.random.default_rng(pol_ss)
        self._cdf = np.cumsum(context_probs)
        self._cdf[-1] = 1.0
        self.block = block

    def draw(self):
        u = self._ctx.random(self.block)
        ctx = np.minimum(np.searchsorted(self._cdf, u, side="right"), self._cdf.size - 1)
        return ctx.astype(np.int64), self._noise.standard_normal(self.block), self._pol.random(self.block)


@dataclass
class RunResult:
    tau: int
    stopped: bool
    recommended: list | None
    eps_error: bool
    seed: int
    run_index: int
    status: str = "stopped"  # stopped | truncated | not-learnable | failed
    truncated: bool = False
    n_forced: int = 0
    n_resolves: int = 0
    flags: list = field(default_factory=list)
    wall_time: float = 0.0
    trace_path: str | None = None
    message: str | None = None

    def record(self) -> dict:
        """Deterministic JSON-ready view (wall time left out on purpose)."""
        return {
            "run_index": self.run_index,
            "seed": self.seed,
            "status": self.status,
            "tau": self.tau,
            "stopped": self.stopped,
            "truncated": self.truncated,
            "eps_error": self.eps_error,
            "recommended": self.recommended,
            "n_forced": self.n_forced,
            "n_resolves": self.n_resolves,
            "flags": [list(f) for f in self.flags],
            "message": self.message,
        }


def policy_error(theta, features, recommended, eps: float) -> bool:
    """True if some recommended action is more than eps below the best under ``theta``."""
    values = features.phi @ np.asarray(theta, dtype=float)
    rec = np.asarray(recommended, dtype=int)
    gaps = values.max(axis=1) - values[np.arange(len(rec)), rec]
    return bool(np.any(gaps > eps))


def _orthonormal_spans(phi: np.ndarray, dims: np.ndarray):
    C, K, d = phi.shape
    dmax = int(dims.max())
    B = np.zeros((C, dmax, d))
    for x in range(C):
        _, _, Vt = np.linalg.svd(phi[x])
        B[x, : dims[x]] = Vt[: dims[x]]
    return B


def _simulate(instance: Instance, cfg: StoppingConfig, policy: SamplingPolicy, seed: int, run_index: int,
              max_rounds: int, proj: SubspaceProjection | None, schedule: ResolveSchedule | None,
              check_every: int, trace_path, oracle: bool) -> RunResult:
    start = time.perf_counter()
    feats = instance.features
    phi_full = feats.phi
    C, K, d = phi_full.shape
    phi = np.ascontiguousarray(phi_full if proj is None else phi_full @ proj.P.T)
    dd = phi.shape[2]
    means = instance.mean_rewards()
    adaptive = not policy.is_static
    streams = RoundStreams(run_seed_sequence(seed, run_index), instance.context_dist.probs)

    A = np.zeros((dd, dd))
    b = np.zeros(dd)
    counts = np.zeros((C, K), dtype=np.int64)
    ints = np.zeros(engine.N_SLOTS, dtype=np.int64)
    rec = np.zeros(C, dtype=np.int64)
    sampler = SamplerState.initial(C, K)
    schedule = schedule or ResolveSchedule(first=d)
    if adaptive:
        basis = build_exploration_basis(feats)
        dims = basis.span_dims
        Bx = _orthonormal_spans(phi_full, dims)
        Sx = np.einsum("xpi,xij,xqj->xpq", Bx, basis.gram, Bx)
        Gx = np.zeros_like(Sx)
        basis_tab = np.zeros((C, int(dims.max())), dtype=np.int64)
        for x, acts in enumerate(basis.actions):
            basis_tab[x, : len(acts)] = acts
        cdf = np.zeros((C, K))
    else:
        dims = np.ones(C, dtype=np.int64)
        Bx = np.zeros((C, 1, d))
        Sx = Gx = np.zeros((C, 1, 1))
        basis_tab = np.zeros((C, 1), dtype=np.int64)
        cdf = np.cumsum(policy.alloc.rows, axis=1)
        cdf[:, -1] = np.inf
    dims = np.asarray(dims, dtype=np.int64)

    writer = TraceWriter(trace_path) if trace_path else None
    lam_A = np.zeros((d, d)) if writer else None
    status = engine.BLOCK_DONE
    try:
        while True:
            ctx, noise, unif = streams.draw()
            acts = np.zeros(streams.block, dtype=np.int64)
            rews = np.zeros(streams.block)
            ints[engine.CONSUMED] = 0
            t0 = int(ints[engine.T])
            while True:
                status = engine.run_block(
                    phi, means, float(instance.noise_std), ctx, noise, unif, A, b, counts,
                    adaptive, Gx, Sx, Bx, dims, basis_tab, sampler.cursor, sampler.target, sampler.alpha, cdf,
                    float(cfg.eps), float(np.log(1.0 / cfg.delta)), float(cfg.u), float(cfg.c),
                    int(check_every), int(max_rounds), int(schedule.first), float(schedule.factor),
                    ints, rec, acts, rews,
                )
                if status != engine.RESOLVE_DUE:
                    break
                t = int(ints[engine.T])
                theta_hat = instance.theta if oracle else pseudo_inverse(A) @ b
                update_allocation(sampler, theta_hat, feats, instance.context_dist, cfg.eps, t, schedule)
                ints[engine.LAST_RESOLVE] = t
            if writer:
                used = int(ints[engine.CONSUMED])
                for j in range(used):
                    f = phi_full[ctx[j], acts[j]]
                    lam_A += np.outer(f, f)
                    writer.write(t0 + j + 1, int(ctx[j]), int(acts[j]), rews[j], np.linalg.eigvalsh(lam_A)[0])
            if status in (engine.STOPPED, engine.ROUND_CAP):
                break
    finally:
        if writer:
            writer.close()

    tau = int(ints[engine.T])
    stopped = status == engine.STOPPED
    flags = list(sampler.flags)
    if ints[engine.N_EMPTY_TRACK]:
        flags.append(("empty-tracking-support", int(ints[engine.N_EMPTY_TRACK])))
    if ints[engine.N_DECISION_FALLBACK]:
        flags.append(("decision-fallback", int(ints[engine.N_DECISION_FALLBACK])))
    recommended = rec.tolist() if stopped else None
    if stopped:
        theta_ref = instance.theta if proj is None else proj.P.T @ (proj.P @ instance.theta)
        err = policy_error(theta_ref, feats, recommended, cfg.eps)
    else:
        err = False
    return RunResult(
        tau=tau,
        stopped=stopped,
        recommended=recommended,
        eps_error=err,
        seed=int(seed),
        run_index=int(run_index),
        status="stopped" if stopped else "truncated",
        truncated=not stopped,
        n_forced=int(ints[engine.N_FORCED]),
        n_resolves=sampler.n_resolves,
        flags=flags,
        wall_time=time.perf_counter() - start,
        trace_path=str(trace_path) if trace_path else None,
    )


def _refused(seed, run_index, message) -> RunResult:
    return RunResult(0, False, None, False, int(seed), int(run_index), status="not-learnable", message=message)


def run_active(instance: Instance, cfg: StoppingConfig, policy: SamplingPolicy | None = None, seed: int = 0,
               max_rounds: int = DEFAULT_MAX_ROUNDS, run_index: int = 0, schedule: ResolveSchedule | None = None,
               check_every: int = 1, trace_path=None, oracle: bool = False) -> RunResult:
    """One run of the track-and-stop learner (or a static sampler with full-space stopping).

    ``check_every=0`` disables stopping, so the run lasts exactly ``max_rounds`` rounds.
    ``oracle=True`` re-solves the allocation at the true theta instead of the estimate.
    """
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    policy = policy or SamplingPolicy.adaptive()
    if policy.is_static and not subspace_is_learnable(SubspaceProjection.identity(instance.dim), policy.alloc,
                                                      instance.features):
        return _refused(seed, run_index, "sampled features do not span the full space")
    return _simulate(instance, cfg, policy, seed, run_index, max_rounds, None, schedule, check_every,
                     trace_path, oracle)


def resolve_subspace(subspace, passive_alloc: Allocation, instance: Instance) -> SubspaceProjection:
    if isinstance(subspace, str) or subspace is None:
        if subspace in (None, "auto"):
            return learnable_subspace(passive_alloc, instance.features)
        if subspace == "full":
            return SubspaceProjection.identity(instance.dim)
        raise ValueError(f"unknown subspace {subspace!r}")
    if isinstance(subspace, SubspaceProjection):
        return subspace
    return SubspaceProjection(np.asarray(subspace, dtype=float))


def run_passive(instance: Instance, cfg: StoppingConfig, passive_alloc: Allocation, subspace="auto", seed: int = 0,
                max_rounds: int = DEFAULT_MAX_ROUNDS, run_index: int = 0, check_every: int = 1,
                trace_path=None) -> RunResult:
    """Fixed sampling rule, projected estimator and subspace stopping rule.

    ``subspace`` is "auto" (the span of the sampled features), "full" or an explicit projection.
    A subspace outside the sampled span cannot be identified; the run is returned flagged
    ``not-learnable`` without simulating.
    """
    proj = resolve_subspace(subspace, passive_alloc, instance)
    if not subspace_is_learnable(proj, passive_alloc, instance.features):
        return _refused(seed, run_index, f"subspace of dim {proj.r} is not spanned by the sampled features")
    policy = SamplingPolicy.from_allocation(passive_alloc)
    return _simulate(instance, cfg, policy, seed, run_index, max_rounds, proj, None, check_every, trace_path, False)


def run_active_reference(instance: Instance, cfg: StoppingConfig, policy: SamplingPolicy | None = None,
                         seed: int = 0, max_rounds: int = 20000, run_index: int = 0,
                         schedule: ResolveSchedule | None = None, proj: SubspaceProjection | None = None) -> RunResult:
    """Readable round loop built from the public operations; slow, used to audit the compiled loop."""
    policy = policy or SamplingPolicy.adaptive()
    feats = instance.features
    C, K, d = feats.phi.shape
    streams = RoundStreams(run_seed_sequence(seed, run_index), instance.context_dist.probs)
    state = CovariatesState.empty(feats)
    sampler = SamplerState.initial(C, K)
    basis = None if policy.is_static else build_exploration_basis(feats)
    schedule = schedule or ResolveSchedule(first=d)
    means = instance.mean_rewards()
    decision = None
    j = streams.block
    while state.t < max_rounds:
        if j == streams.block:
            ctx, noise, unif = streams.draw()
            j = 0
        x = int(ctx[j])
        if not policy.is_static:
            sampler.accumulate(x)
        a = next_action(sampler, state, basis, policy, x, float(unif[j]))
        r = means[x, a] + instance.noise_std * noise[j]
        j += 1
        state.add(feats.phi[x, a], x, a, r)
        if proj is None:
            decision = stopping_check(lse(state), state, feats, cfg)
        else:
            try:
                th_u = projected_lse(state, proj)
            except BPIError:
                th_u = np.zeros(proj.r)
            decision = stopping_check_subspace(th_u, state, feats, proj, cfg)
        if decision.stopped:
            break
        if not policy.is_static:
            update_allocation(sampler, lse(state), feats, instance.context_dist, cfg.eps, state.t, schedule)
    stopped = bool(decision is not None and decision.stopped)
    rec = decision.recommended.tolist() if stopped else None
    theta_ref = instance.theta if proj is None else proj.P.T @ (proj.P @ instance.theta)
    return RunResult(
        tau=state.t, stopped=stopped, recommended=rec,
        eps_error=policy_error(theta_ref, feats, rec, cfg.eps) if stopped else False,
        seed=int(seed), run_index=int(run_index), status="stopped" if stopped else "truncated",
        truncated=not stopped, n_forced=sampler.n_forced, n_resolves=sampler.n_resolves,
    )


# ---------------------------------------------------------------- campaigns


@dataclass
class CellSpec:
    """One campaign cell: a sampler at a given (eps, delta)."""

    sampler: str  # adaptive | random | ret-rule | table:<name> | passive:<name>
    eps: float
    delta: float
    policy: SamplingPolicy | None = None  # static policy for non-adaptive samplers
    passive: bool = False  # projected estimator and subspace stopping
    subspace: object = "auto"


@dataclass
class CampaignConfig:
    instance: Instance
    cells: list
    n_sim: int
    base_seed: int = 0
    max_rounds: int = DEFAULT_MAX_ROUNDS
    workers: int = 1
    u: float = 1.0
    c: float = 0.1
    name: str = "campaign"
    trace_dir: str | None = None  # per-run round traces, one CSV per run


@dataclass
class CampaignSummary:
    sampler: str
    eps: float
    delta: float
    n_sim: int
    mean_tau: float
    std_tau: float
    error_rate: float
    t_star: float
    t_sampler: float
    lower_bound: float
    n_stopped: int
    n_truncated: int
    n_refused: int
    runs: list

    @property
    def incomplete(self) -> bool:
        return self.n_stopped < self.n_sim

    @property
    def ratio(self) -> float:
        """Mean stopping time over the lower bound T* kl(delta, 1 - delta)."""
        return self.mean_tau / self.lower_bound if self.lower_bound > 0 else float("nan")


@dataclass
class CampaignReport:
    name: str
    cells: list


def _job(args):
    instance, cell, cfg, seed, i, max_rounds, trace = args
    try:
        if cell.policy is None:
            return run_active(instance, cfg, None, seed, max_rounds, run_index=i, trace_path=trace)
        if cell.passive:
            return run_passive(instance, cfg, cell.policy.alloc, cell.subspace, seed, max_rounds, run_index=i,
                               trace_path=trace)
        return run_active(instance, cfg, cell.policy, seed, max_rounds, run_index=i, trace_path=trace)
    except Exception as exc:  # recorded, not fatal
        return RunResult(0, False, None, False, int(seed), int(i), status="failed",
                         message=f"{type(exc).__name__}: {exc}")


def _trace_path(config: CampaignConfig, cell_index: int, run_index: int):
    if not config.trace_dir:
        return None
    return os.path.join(config.trace_dir, f"cell{cell_index:02d}_run{run_index:04d}.csv")


def _characteristic_times(instance: Instance, cell: CellSpec, cache: dict):
    key = cell.eps
    if key not in cache:
        try:
            cache[key] = solve_tstar(instance.theta, instance.features, instance.context_dist, cell.eps).t_star
        except TriviallySolvedError:
            cache[key] = 0.0
    t_star = cache[key]
    if cell.policy is None or t_star == 0.0:
        return t_star, t_star
    try:
        alloc = cell.policy.alloc
        proj = resolve_subspace(cell.subspace, alloc, instance) if cell.passive else SubspaceProjection.identity(
            instance.dim)
        theta = proj.P.T @ (proj.P @ instance.theta)
        t_sampler = tstar_passive(theta, instance.features, instance.context_dist, alloc, proj, cell.eps)
    except (BPIError, ValueError):
        t_sampler = float("inf")
    return t_star, t_sampler


def summarize(cell: CellSpec, runs: list, t_star: float, t_sampler: float) -> CampaignSummary:
    done = [r for r in runs if r.stopped]
    taus = np.array([r.tau for r in done], dtype=float)
    mean = float(taus.mean()) if taus.size else float("nan")
    std = float(taus.std()) if taus.size else float("nan")  # population std
    err = float(np.mean([r.eps_error for r in done])) if done else float("nan")
    lb = lower_bound_samples(t_star, cell.delta) if t_star > 0 else 0.0
    return CampaignSummary(
        sampler=cell.sampler, eps=cell.eps, delta=cell.delta, n_sim=len(runs), mean_tau=mean, std_tau=std,
        error_rate=err, t_star=t_star, t_sampler=t_sampler, lower_bound=lb, n_stopped=len(done),
        n_truncated=sum(r.status == "truncated" for r in runs),
        n_refused=sum(r.status in ("not-learnable", "failed") for r in runs), runs=runs,
    )


def monte_carlo(config: CampaignConfig) -> CampaignReport:
    """Run ``n_sim`` seeded runs per cell and aggregate, in run-index order."""
    cache: dict = {}
    cells = []
    pool = ProcessPoolExecutor(config.workers) if config.workers > 1 else None
    if config.trace_dir:
        os.makedirs(config.trace_dir, exist_ok=True)
    try:
        for k, cell in enumerate(config.cells):
            cfg = StoppingConfig(cell.eps, cell.delta, config.u, config.c)
            jobs = [(config.instance, cell, cfg, config.base_seed, i, config.max_rounds, _trace_path(config, k, i))
                    for i in range(config.n_sim)]
            runs = list(pool.map(_job, jobs)) if pool else [_job(j) for j in jobs]
            t_star, t_sampler = _characteristic_times(config.instance, cell, cache)
            cells.append(summarize(cell, runs, t_star, t_sampler))
    finally:
        if pool:
            pool.shutdown()
    return CampaignReport(config.name, cells)


SUMMARY_COLUMNS = ("sampler", "eps", "delta", "n_sim", "n_stopped", "n_truncated", "n_refused", "mean_tau",
                   "std_tau", "error_rate", "t_star", "t_sampler", "lower_bound", "ratio", "incomplete")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def summary_csv(report: CampaignReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for s in report.cells:
        w.writerow([_fmt(getattr(s, col)) for col in SUMMARY_COLUMNS])
    return buf.getvalue()


def runs_json(report: CampaignReport) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "campaign": report.name,
        "cells": [
            {
                **{col: getattr(s, col) for col in SUMMARY_COLUMNS},
                "runs": [r.record() for r in s.runs],
            }
            for s in report.cells
        ],
    }
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=True) + "\n"


def write_outputs(report: CampaignReport, out_dir) -> tuple:
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "summary.csv")
    json_path = os.path.join(out_dir, "runs.json")
    with open(csv_path, "w", newline="") as fh:
        fh.write(summary_csv(report))
    with open(json_path, "w") as fh:
        fh.write(runs_json(report))
    return csv_path, json_path
