"""Scripted desk-scale ablations: variants over seeds, plus plot data export.

Each seed rebuilds the scene and noise realization deterministically, so a
fixed seed list makes every number in the summary reproducible to the bit.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace

import numpy as np

from .evaluation import write_trajectory
from .frontend import ScenarioConfig
from .graph import GraphConfig
from .optim import LMConfig
from .pipeline import (
    VARIANTS,
    PipelineConfig,
    PipelineResult,
    UnknownVariant,
    run_pipeline,
)

DEFAULT_SEEDS = list(range(20))


@dataclass
class AblationResult:
    variant: str
    scenario: ScenarioConfig
    seeds: list[int]
    ates: list[float]
    results: list[PipelineResult]

    @property
    def median_ate(self) -> float:
        return float(np.median(self.ates))

    @property
    def mean_ate(self) -> float:
        return float(np.mean(self.ates))

    def summary(self) -> str:
        return (
            f"{self.variant}: median ATE {self.median_ate:.6f}, "
            f"mean {self.mean_ate:.6f} over {len(self.seeds)} seeds"
        )


def pipeline_config_for(variant: str, scenario: ScenarioConfig, lm: LMConfig | None = None) -> PipelineConfig:
    if variant not in VARIANTS:
        raise UnknownVariant(f"variant {variant!r}; expected one of {VARIANTS}")
    graph_config = GraphConfig(neighbor_radius=scenario.neighbor_radius, tau_p=scenario.tau_p)
    return PipelineConfig(
        variant=variant,
        graph=graph_config,
        lm=lm or LMConfig(),
        compute_reconstruction=False,
    )


def run_ablation(
    scenario: ScenarioConfig,
    variant: str,
    seeds: list[int] | None = None,
    keep_results: bool = True,
) -> AblationResult:
    """Run one variant over the seed list; deterministic per (scenario, seed)."""
    seeds = list(DEFAULT_SEEDS if seeds is None else seeds)
    config = pipeline_config_for(variant, scenario)
    ates: list[float] = []
    results: list[PipelineResult] = []
    for seed in seeds:
        cfg = scenario.with_seed(seed)
        scene = cfg.build_scene()
        result = run_pipeline(scene, cfg.noise, config)
        ates.append(result.ate)
        if keep_results:
            results.append(result)
    return AblationResult(variant, scenario, seeds, ates, results)


def emit_plot_data(results: list[AblationResult], out_dir: str) -> list[str]:
    """Write per-variant trajectory projections and a summary CSV.

    For each (variant, seed): an xy-projection CSV with a per-pose error
    column, and the estimated trajectory in the standard line format (so it
    round-trips through the trajectory reader). Returns the written paths.
    """
    os.makedirs(out_dir, exist_ok=True)
    written: list[str] = []

    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "seed", "ate_rmse"])
        for res in results:
            for seed, ate in zip(res.seeds, res.ates):
                writer.writerow([res.variant, seed, f"{ate:.9f}"])
        for res in results:
            writer.writerow([res.variant, "median", f"{res.median_ate:.9f}"])
    written.append(summary_path)

    for res in results:
        for seed, pipeline_result in zip(res.seeds, res.results):
            est = pipeline_result.trajectory_est
            gt = pipeline_result.trajectory_gt
            from .evaluation import umeyama_align

            gauge = umeyama_align(est.positions(), gt.positions())
            aligned = gauge.act(est.positions())
            errors = np.linalg.norm(aligned - gt.positions(), axis=1)

            xy_path = os.path.join(out_dir, f"traj_xy_{res.variant}_{seed}.csv")
            with open(xy_path, "w", newline="", encoding="ascii") as fh:
                writer = csv.writer(fh)
                writer.writerow(["timestamp", "x", "y", "error"])
                for t, p, e in zip(est.timestamps, aligned, errors):
                    writer.writerow([f"{t:.6f}", f"{p[0]:.9f}", f"{p[1]:.9f}", f"{e:.9f}"])
            written.append(xy_path)

            traj_path = os.path.join(out_dir, f"traj_{res.variant}_{seed}.txt")
            write_trajectory(traj_path, est)
            written.append(traj_path)

    return written
