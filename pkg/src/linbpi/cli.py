"""Command-line entry point: ``linbpi <command> ...``."""
from __future__ import annotations

import argparse
import csv
import os
import sys

from .allocation import learnable_subspace, lower_bound_samples, solve_tstar, tstar_passive
from .config import (
    format_allocation,
    load_allocation,
    load_campaign,
    load_instance,
    make_policy,
    save_instance,
)
from .errors import BPIError, DegenerateInstanceError
from .estimation import SubspaceProjection
from .harness import CampaignConfig, CellSpec, DEFAULT_MAX_ROUNDS, monte_carlo, write_outputs
from .ret import ACTION_NAMES, RetConfig, build_ret_instance, check_unique_optimum, decision_region_grid
from .sampling import SamplingPolicy

DEFAULT_DELTAS = (0.01, 0.05, 0.1, 0.2)


def _floats(text: str):
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_solve_tstar(args) -> int:
    inst = load_instance(args.instance)
    I = inst.instance
    if args.alloc:
        alloc = load_allocation(args.alloc)
        proj = learnable_subspace(alloc, I.features) if args.subspace == "auto" else SubspaceProjection.identity(I.dim)
        theta = proj.P.T @ (proj.P @ I.theta)
        t_star = tstar_passive(theta, I.features, I.context_dist, alloc, proj, args.eps)
        print(f"subspace_dim,{proj.r}")
    else:
        res = solve_tstar(I.theta, I.features, I.context_dist, args.eps)
        t_star, alloc = res.t_star, res.alpha_star
        print(f"iterations,{res.iterations}")
        print(f"converged,{str(res.converged).lower()}")
        print(f"relative_gap,{res.gap:.3g}")
    print(f"t_star,{t_star!r}")
    for delta in _floats(args.deltas):
        print(f"lower_bound,{delta:g},{lower_bound_samples(t_star, delta)!r}")
    print()
    sys.stdout.write(format_allocation(alloc, inst.action_names))
    return 0


def cmd_ret_sim(args) -> int:
    cfg = RetConfig(mesh=args.mesh, weights=tuple(_floats(args.weights)))
    instance = build_ret_instance(cfg)
    try:
        gap = check_unique_optimum(instance)
    except DegenerateInstanceError as exc:
        print(f"warning: {exc}; identification with eps=0 is impossible on this mesh", file=sys.stderr)
        gap = 0.0
    print(f"contexts,{instance.n_contexts}")
    print(f"min_gap,{gap!r}")
    print("theta," + ",".join(repr(float(v)) for v in instance.theta))
    if args.emit_instance:
        save_instance(args.emit_instance, instance, ACTION_NAMES, cfg.kpis())
    if args.emit_regions:
        from .plotting import plot_decision_regions

        res = args.resolution or args.mesh
        r, n, acts = decision_region_grid(instance.theta, res)
        with open(args.emit_regions, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["r_bc", "n_os", "action_id", "action_name"])
            for ri, ni, a in zip(r, n, acts):
                w.writerow([repr(float(ri)), repr(float(ni)), int(a), ACTION_NAMES[a]])
        fig = os.path.splitext(args.emit_regions)[0] + ".png"
        plot_decision_regions(r, n, acts, ACTION_NAMES, fig, title=f"w = {cfg.weights[0]:g}, {cfg.weights[1]:g}")
    return 0


def _finish(report, out_dir, figure: bool) -> int:
    csv_path, json_path = write_outputs(report, out_dir)
    if figure:
        from .plotting import plot_campaign

        plot_campaign(report, os.path.join(out_dir, "summary.png"))
    with open(csv_path) as fh:
        sys.stdout.write(fh.read())
    return 0 if not any(c.incomplete for c in report.cells) else 1


def _single_cell_campaign(args, cell: CellSpec, instance) -> CampaignConfig:
    return CampaignConfig(
        instance=instance,
        cells=[cell],
        n_sim=args.nsim,
        base_seed=args.seed,
        max_rounds=args.max_rounds,
        workers=args.workers,
        u=args.u,
        c=args.c,
        # named after what was run, not where it was written, so re-runs compare byte for byte
        name=f"{os.path.splitext(os.path.basename(args.instance))[0]}-{cell.sampler}",
        trace_dir=os.path.join(args.out, "traces") if args.trace else None,
    )


def cmd_run_bpi(args) -> int:
    inst = load_instance(args.instance)
    policy = make_policy(args.sampler, inst)
    cell = CellSpec(args.sampler, args.eps, args.delta, policy)
    report = monte_carlo(_single_cell_campaign(args, cell, inst.instance))
    return _finish(report, args.out, not args.no_figure)


def cmd_run_passive(args) -> int:
    inst = load_instance(args.instance)
    policy = SamplingPolicy.from_allocation(load_allocation(args.alloc))
    cell = CellSpec(f"passive:{os.path.basename(args.alloc)}", args.eps, args.delta, policy, passive=True,
                    subspace=args.subspace)
    report = monte_carlo(_single_cell_campaign(args, cell, inst.instance))
    return _finish(report, args.out, not args.no_figure)


def cmd_benchmark(args) -> int:
    cfg, out = load_campaign(args.config)
    if args.out:
        out = args.out
    if args.workers:
        cfg.workers = args.workers
    return _finish(monte_carlo(cfg), out, not args.no_figure)


def _run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--instance", required=True, help="instance JSON file or a built-in: ret[:mesh], reference, passive-example[:gap]")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--nsim", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--max-rounds", type=int, default=DEFAULT_MAX_ROUNDS)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--u", type=float, default=1.0)
    p.add_argument("--c", type=float, default=0.1)
    p.add_argument("--trace", action="store_true", help="write one round-by-round CSV per run")
    p.add_argument("--no-figure", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="linbpi", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-tstar", help="characteristic time and optimal allocation")
    p.add_argument("--instance", required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--alloc", help="fixed allocation CSV: report its characteristic time instead")
    p.add_argument("--subspace", choices=("auto", "full"), default="full")
    p.add_argument("--deltas", default=",".join(str(d) for d in DEFAULT_DELTAS))
    p.set_defaults(func=cmd_solve_tstar)

    p = sub.add_parser("ret-sim", help="build the tilt environment, export regions and instance")
    p.add_argument("--mesh", type=int, default=20)
    p.add_argument("--weights", default="0.6,0.4")
    p.add_argument("--resolution", type=int, default=None, help="region grid size (defaults to --mesh)")
    p.add_argument("--emit-regions")
    p.add_argument("--emit-instance")
    p.set_defaults(func=cmd_ret_sim)

    p = sub.add_parser("run-bpi", help="Monte Carlo runs of one sampler")
    _run_options(p)
    p.add_argument("--sampler", default="adaptive", help="adaptive | random | table:<file> | ret-rule")
    p.set_defaults(func=cmd_run_bpi)

    p = sub.add_parser("run-passive", help="Monte Carlo runs of a fixed allocation with subspace stopping")
    _run_options(p)
    p.add_argument("--alloc", required=True)
    p.add_argument("--subspace", choices=("auto", "full"), default="auto")
    p.set_defaults(func=cmd_run_passive)

    p = sub.add_parser("benchmark", help="run a campaign config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--workers", type=int, default=0)
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (BPIError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
