"""Command-line interface: scenario runs, trajectory evaluation, ablations.

Config precedence is built-in defaults < scenario file < command-line flags.
All randomness flows from the single seed in effect; there are no hidden
entropy sources.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .evaluation import ate_rmse, associate, read_trajectory, write_trajectory
from .experiments import emit_plot_data, pipeline_config_for, run_ablation
from .frontend import ScenarioConfig, load_scenario
from .fusion import write_ply
from .graph import GraphConfig
from .optim import LMConfig
from .pipeline import VARIANTS, PipelineConfig, run_pipeline


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sim3slam",
        description="Sim(3) pose-graph SLAM backend on synthetic two-view measurements.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="simulate a scenario, run the backend, write artifacts")
    run_p.add_argument("--scenario", help="YAML scenario file (defaults apply when omitted)")
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument("--seed", type=int, help="override the scenario seed")
    run_p.add_argument("--N", type=int, dest="neighbor_radius", help="neighbor radius override")
    run_p.add_argument("--tau-p", type=float, dest="tau_p", help="loop confidence threshold override")
    run_p.add_argument("--variant", choices=VARIANTS, default="full", help="pipeline variant")
    run_p.add_argument("--no-loop-closure", action="store_true", help="skip loop candidates entirely")
    run_p.add_argument("--no-pgo", action="store_true", help="shortcut for --variant no_pgo")
    run_p.add_argument("--single-node", action="store_true", help="shortcut for --variant single_node")
    run_p.add_argument(
        "--reoptimize-per-loop",
        action="store_true",
        help="re-optimize after every accepted loop instead of once at the end",
    )
    run_p.add_argument("--align", choices=("sim3", "se3", "none"), default="sim3")
    run_p.add_argument("--dump-graph", action="store_true", help="also write graph.txt")
    run_p.add_argument("--binary-ply", action="store_true", help="write the cloud as binary PLY")

    eval_p = sub.add_parser("eval", help="ATE RMSE between two trajectory files")
    eval_p.add_argument("est", help="estimated trajectory file")
    eval_p.add_argument("ref", help="reference trajectory file")
    eval_p.add_argument("--align", choices=("sim3", "se3", "none"), default="sim3")
    eval_p.add_argument("--max-dt", type=float, default=0.02, help="association tolerance (s)")

    abl_p = sub.add_parser("ablate", help="run an ablation variant over seeds")
    abl_p.add_argument("--scenario", help="YAML scenario file")
    abl_p.add_argument("--variant", required=True, choices=VARIANTS)
    abl_p.add_argument("--seeds", default="0-19", help="comma list and/or ranges, e.g. 0-4,7,9")
    abl_p.add_argument("--out", required=True, help="output directory")

    return parser


def parse_seed_list(spec: str) -> list[int]:
    seeds: list[int] = []
    for chunk in spec.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "-" in chunk[1:]:
            pos = chunk.index("-", 1)
            seeds.extend(range(int(chunk[:pos]), int(chunk[pos + 1 :]) + 1))
        else:
            seeds.append(int(chunk))
    if not seeds:
        raise ValueError(f"empty seed list {spec!r}")
    return seeds


def _scenario_from_args(args) -> ScenarioConfig:
    scenario = load_scenario(args.scenario) if args.scenario else ScenarioConfig()
    if getattr(args, "seed", None) is not None:
        scenario = scenario.with_seed(args.seed)
    if getattr(args, "neighbor_radius", None) is not None:
        scenario = replace(scenario, neighbor_radius=args.neighbor_radius)
    if getattr(args, "tau_p", None) is not None:
        scenario = replace(scenario, tau_p=args.tau_p)
    return scenario


def cmd_run(args) -> int:
    scenario = _scenario_from_args(args)
    variant = args.variant
    if args.no_pgo:
        variant = "no_pgo"
    elif args.single_node:
        variant = "single_node"

    config = PipelineConfig(
        variant=variant,
        graph=GraphConfig(neighbor_radius=scenario.neighbor_radius, tau_p=scenario.tau_p),
        lm=LMConfig(),
        loop_closure=not args.no_loop_closure,
        optimize_per_loop=args.reoptimize_per_loop,
    )
    scene = scenario.build_scene()
    result = run_pipeline(scene, scenario.noise, config)

    os.makedirs(args.out, exist_ok=True)
    write_trajectory(os.path.join(args.out, "traj_est.txt"), result.trajectory_est)
    write_trajectory(os.path.join(args.out, "traj_gt.txt"), result.trajectory_gt)
    if result.fused is not None:
        write_ply(os.path.join(args.out, "cloud.ply"), result.fused, binary=args.binary_ply)
    if args.dump_graph and result.graph is not None:
        result.graph.dump(os.path.join(args.out, "graph.txt"))

    report_lines = [f"variant={variant}"]
    if result.report is not None:
        report_lines.extend(result.report.lines())
    else:
        report_lines.append("optimization=skipped")
    with open(os.path.join(args.out, "report.txt"), "w", encoding="ascii") as fh:
        fh.write("\n".join(report_lines) + "\n")

    ate = ate_rmse(result.trajectory_est, result.trajectory_gt, align=args.align)
    metrics = {
        "variant": variant,
        "ate_rmse": f"{ate:.9f}",
        "align": args.align,
        "views": len(result.trajectory_est),
        "passes": result.num_passes,
        "loop_candidates": len(result.loop_records),
        "accepted_loops": result.accepted_loops,
        "rejected_loops": result.rejected_loops,
    }
    if result.report is not None:
        metrics["final_residual"] = f"{result.report.final_residual:.6e}"
        metrics["lm_iterations"] = result.report.iterations
    if result.reconstruction is not None:
        metrics["recon_accuracy"] = f"{result.reconstruction.accuracy:.9f}"
        metrics["recon_completeness"] = f"{result.reconstruction.completeness:.9f}"
        metrics["recon_chamfer"] = f"{result.reconstruction.chamfer:.9f}"
    with open(os.path.join(args.out, "metrics.txt"), "w", encoding="ascii") as fh:
        for key, value in metrics.items():
            fh.write(f"{key}={value}\n")
    for key, value in metrics.items():
        print(f"{key}={value}")
    return 0


def cmd_eval(args) -> int:
    est = read_trajectory(args.est)
    ref = read_trajectory(args.ref)
    matches = associate(est, ref, max_dt=args.max_dt)
    ate = ate_rmse(est, ref, align=args.align, max_dt=args.max_dt)
    print(f"ate_rmse={ate:.9f}")
    print(f"associations={len(matches)}")
    print(f"align={args.align}")
    return 0


def cmd_ablate(args) -> int:
    scenario = _scenario_from_args(args)
    seeds = parse_seed_list(args.seeds)
    result = run_ablation(scenario, args.variant, seeds)
    written = emit_plot_data([result], args.out)
    print(result.summary())
    for path in written:
        print(f"wrote {path}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": cmd_run, "eval": cmd_eval, "ablate": cmd_ablate}
    try:
        return handlers[args.command](args)
    except Exception as exc:  # surface module-qualified diagnostics, exit nonzero
        print(f"error: {type(exc).__module__}.{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
