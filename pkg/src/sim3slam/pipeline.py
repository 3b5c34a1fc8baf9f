"""End-to-end backend runs over a synthetic scene, in several variants.

``full`` ingests neighbor passes and gated loop closures, optimizes, and
fuses. The ablation variants disable one mechanism each:

- ``no_pgo``: chains the first measurement of every consecutive pair into
  absolute poses; no graph, no optimization.
- ``no_loops``: graph without loop candidates.
- ``single_node``: classical pose graph, one node per view, every pass's
  relative pose attached to the view nodes directly (per-pass scale is left
  for the optimizer to average out).
- ``no_loop_filtering``: every proposed loop candidate is ingested, ignoring
  the confidence gate.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .evaluation import (
    ReconstructionMetrics,
    Trajectory,
    ate_rmse,
    reconstruction_metrics,
    umeyama_align,
)
from .frontend import (
    LoopCandidate,
    NoiseModel,
    PairMeasurement,
    Scene,
    propose_loops,
    simulate_loop_measurement,
    simulate_pair,
)
from .fusion import FusedCloud, fuse
from .graph import Edge, GraphConfig, LoopDecision, Node, NodeKey, PoseGraph
from .optim import LMConfig, OptimizeReport, optimize
from .sim3 import Sim3

VARIANTS = ("full", "no_pgo", "no_loops", "single_node", "no_loop_filtering")


class UnknownVariant(ValueError):
    """Requested pipeline variant does not exist."""


@dataclass(frozen=True)
class PipelineConfig:
    variant: str = "full"
    graph: GraphConfig = field(default_factory=GraphConfig)
    lm: LMConfig = field(default_factory=LMConfig)
    loop_closure: bool = True
    optimize_per_loop: bool = False
    fusion_reduction: str = "mean"
    compute_reconstruction: bool = True

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise UnknownVariant(f"variant {self.variant!r}; expected one of {VARIANTS}")


@dataclass
class LoopRecord:
    candidate: LoopCandidate
    confidence: float
    decision: LoopDecision


@dataclass
class PipelineResult:
    trajectory_est: Trajectory
    trajectory_gt: Trajectory
    ate: float
    graph: PoseGraph | None
    report: OptimizeReport | None
    fused: FusedCloud | None
    reconstruction: ReconstructionMetrics | None
    loop_records: list[LoopRecord]
    num_passes: int

    @property
    def accepted_loops(self) -> int:
        return sum(1 for r in self.loop_records if r.decision is LoopDecision.ACCEPTED)

    @property
    def rejected_loops(self) -> int:
        return sum(1 for r in self.loop_records if r.decision is LoopDecision.REJECTED)


def odometry_measurements(scene: Scene, noise: NoiseModel, radius: int) -> list[PairMeasurement]:
    """Neighbor passes in stream order: each arriving view pairs backwards."""
    out = []
    pass_id = 0
    for j in range(1, scene.num_views):
        for i in range(max(0, j - radius), j):
            out.append(simulate_pair(scene, i, j, noise, pass_id))
            pass_id += 1
    return out


def ground_truth_trajectory(scene: Scene) -> Trajectory:
    return Trajectory(scene.timestamps, scene.poses)


def _accumulated_trajectory(scene: Scene, measurements: list[PairMeasurement]) -> Trajectory:
    """Chain the first measurement per consecutive pair into absolute poses."""
    consecutive = {}
    for m in measurements:
        if m.view_j == m.view_i + 1 and m.view_i not in consecutive:
            consecutive[m.view_i] = m
    poses = [Sim3.identity()]
    for i in range(scene.num_views - 1):
        rel = consecutive[i].relative_pose.transform
        poses.append(poses[-1].compose(rel.inverse()))
    return Trajectory(scene.timestamps, tuple(poses))


def _single_node_graph(
    measurements: list[PairMeasurement], config: GraphConfig
) -> tuple[PoseGraph, "dict[int, NodeKey]"]:
    """Classical one-node-per-view graph over the same measurements."""
    graph = PoseGraph(config)
    keys: dict[int, NodeKey] = {}
    initialized: set[int] = set()

    def node_for(view: int) -> NodeKey:
        if view not in keys:
            key = NodeKey(view, -1)
            keys[view] = key
            graph.nodes[key] = Node(key, Sim3.identity(), True, 1.0)
            graph.first_processed[view] = key
            if graph.anchor is None:
                graph.anchor = key
                initialized.add(view)
        return keys[view]

    for m in measurements:
        ki = node_for(m.view_i)
        kj = node_for(m.view_j)
        graph.edges.append(
            Edge(
                "pose",
                ki,
                kj,
                m.relative_pose.transform,
                config.pose_omega(m.relative_pose.confidence),
            )
        )
        if m.view_j not in initialized and m.view_i in initialized:
            graph.nodes[kj].pose = graph.nodes[ki].pose.compose(
                m.relative_pose.transform.inverse()
            )
            initialized.add(m.view_j)
        elif m.view_i not in initialized and m.view_j in initialized:
            graph.nodes[ki].pose = graph.nodes[kj].pose.compose(m.relative_pose.transform)
            initialized.add(m.view_i)
    return graph, keys


def run_pipeline(scene: Scene, noise: NoiseModel, config: PipelineConfig) -> PipelineResult:
    """Simulate the frontend, run the chosen backend variant, evaluate."""
    radius = config.graph.neighbor_radius
    odometry = odometry_measurements(scene, noise, radius)
    trajectory_gt = ground_truth_trajectory(scene)

    candidates: list[LoopCandidate] = []
    loop_measurements: list[PairMeasurement] = []
    use_loops = config.loop_closure and config.variant not in ("no_loops", "no_pgo")
    if use_loops:
        candidates = propose_loops(scene, noise)
        next_pass = len(odometry)
        for cand in candidates:
            loop_measurements.append(
                simulate_loop_measurement(scene, cand.view_i, cand.view_j, noise, next_pass)
            )
            next_pass += 1

    loop_records: list[LoopRecord] = []
    graph: PoseGraph | None = None
    report: OptimizeReport | None = None
    fused: FusedCloud | None = None
    ingested = list(odometry)

    if config.variant == "no_pgo":
        trajectory_est = _accumulated_trajectory(scene, odometry)
    elif config.variant == "single_node":
        graph, keys = _single_node_graph(odometry, config.graph)
        for cand, m in zip(candidates, loop_measurements):
            accept = m.relative_pose.confidence > config.graph.tau_p
            decision = LoopDecision.ACCEPTED if accept else LoopDecision.REJECTED
            loop_records.append(LoopRecord(cand, m.relative_pose.confidence, decision))
            if accept:
                graph.edges.append(
                    Edge(
                        "pose",
                        keys[m.view_i],
                        keys[m.view_j],
                        m.relative_pose.transform,
                        config.graph.pose_omega(m.relative_pose.confidence),
                    )
                )
        graph, report = optimize(graph, config.lm)
        trajectory_est = Trajectory(
            scene.timestamps,
            tuple(
                Sim3(graph.view_pose(v).rotation, graph.view_pose(v).translation, 1.0)
                for v in range(scene.num_views)
            ),
        )
    else:
        graph = PoseGraph(config.graph)
        for m in odometry:
            graph.ingest_pair(m)
        for cand, m in zip(candidates, loop_measurements):
            if config.variant == "no_loop_filtering":
                graph.ingest_pair(m)
                decision = LoopDecision.ACCEPTED
            else:
                decision = graph.try_close_loop(m)
            loop_records.append(LoopRecord(cand, m.relative_pose.confidence, decision))
            if decision is LoopDecision.ACCEPTED:
                ingested.append(m)
                if config.optimize_per_loop:
                    graph, report = optimize(graph, config.lm)
        graph, report = optimize(graph, config.lm)
        trajectory_est = Trajectory(
            scene.timestamps,
            tuple(
                Sim3(graph.view_pose(v).rotation, graph.view_pose(v).translation, 1.0)
                for v in range(scene.num_views)
            ),
        )
        fused = fuse(graph, ingested, reduction=config.fusion_reduction)

    ate = ate_rmse(trajectory_est, trajectory_gt, align="sim3")

    reconstruction = None
    if fused is not None and len(fused) and config.compute_reconstruction:
        gauge = umeyama_align(trajectory_est.positions(), trajectory_gt.positions())
        aligned = gauge.act(fused.points)
        reconstruction = reconstruction_metrics(aligned, scene.landmarks)

    return PipelineResult(
        trajectory_est=trajectory_est,
        trajectory_gt=trajectory_gt,
        ate=ate,
        graph=graph,
        report=report,
        fused=fused,
        reconstruction=reconstruction,
        loop_records=loop_records,
        num_passes=len(odometry) + len(loop_measurements),
    )
