"""Levenberg-Marquardt optimization of the pose-graph objective.

Minimizes ``sum_e || log(e . v_from^-1 . v_to) ||^2_Omega`` over all node
poses in sim(3). Updates use the right-perturbation convention
``v <- v . exp(delta)`` everywhere; the Jacobian tests pin it.

Jacobians are analytic: with r the edge residual, ``J_to`` is the inverse of
the right Jacobian of the exponential at r (computed from its everywhere-
convergent power series in ad(r)) and ``J_from = -J_to . Adj(v_to^-1 v_from)``.

The first processed node of the lowest view is the gauge anchor and stays
fixed; without it the normal equations are singular under the global Sim(3)
symmetry of the objective.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .graph import Edge, NodeKey, PoseGraph
from .sim3 import (
    RotationNearPi,
    Sim3,
    Tangent7,
    _sim3_w,
    _solve3,
    adjoint,
    exp_sim3,
    little_adjoint,
    log_sim3,
    so3_log,
)


class SingularNormalEquations(RuntimeError):
    """Damped normal equations remained unsolvable up to the damping cap."""

    def __init__(self, message: str, damping_history: list[float]):
        super().__init__(f"{message}; damping history {damping_history}")
        self.damping_history = damping_history


class DisconnectedGraph(ValueError):
    """Some views are not reachable from the anchor through pose edges."""


@dataclass(frozen=True)
class LMConfig:
    max_iterations: int = 20
    initial_damping: float = 1e-4
    damping_up: float = 10.0
    damping_down: float = 0.1
    residual_tolerance: float = 1e-10
    step_tolerance: float = 1e-10
    max_damping: float = 1e12
    dense_threshold: int = 50  # below this many nodes, solve densely

    def __post_init__(self) -> None:
        for name in (
            "max_iterations",
            "initial_damping",
            "damping_up",
            "damping_down",
            "residual_tolerance",
            "step_tolerance",
            "max_damping",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class OptimizeReport:
    iterations: int = 0
    initial_residual: float = 0.0
    final_residual: float = 0.0
    termination: str = ""
    residual_trace: list[float] = field(default_factory=list)
    skipped_edges: list[int] = field(default_factory=list)
    wall_time: float = 0.0

    def lines(self) -> list[str]:
        out = [
            f"initial_residual={self.initial_residual:.6e}",
            f"final_residual={self.final_residual:.6e}",
            f"iterations={self.iterations}",
            f"termination={self.termination}",
            f"wall_time={self.wall_time:.3f}s",
        ]
        for k, value in enumerate(self.residual_trace):
            out.append(f"iter {k}: residual={value:.6e}")
        if self.skipped_edges:
            out.append(f"skipped_edges={sorted(set(self.skipped_edges))}")
        return out


def edge_residual(edge: Edge, v_from: Sim3, v_to: Sim3) -> Tangent7:
    """sim(3) logarithm of ``e . v_from^-1 . v_to``.

    Raises:
        RotationNearPi: the composed rotation is too close to pi; the caller
            should skip the edge for the current iteration.
    """
    return log_sim3(edge.measurement.compose(v_from.inverse()).compose(v_to))


def _right_jacobian(r: np.ndarray) -> np.ndarray:
    """Right Jacobian of exp at r: sum_k (-ad_r)^k / (k+1)!.

    The series is entire, so it converges for every r; terms are added until
    they vanish at double precision.
    """
    neg_ad = -little_adjoint(r)
    total = np.eye(7)
    term = np.eye(7)
    for k in range(1, 120):
        term = term @ neg_ad
        term /= k + 1.0
        total += term
        if abs(term).max() < 1e-18:
            break
    return total


def edge_jacobians(edge: Edge, v_from: Sim3, v_to: Sim3) -> tuple[np.ndarray, np.ndarray]:
    """Analytic 7x7 Jacobians of the residual wrt right perturbations."""
    r = edge_residual(edge, v_from, v_to).vector
    j_to = np.linalg.inv(_right_jacobian(r))
    j_from = -j_to @ adjoint(v_to.inverse().compose(v_from))
    return j_from, j_to


def _residual_vector(edge: Edge, v_from: Sim3, v_to: Sim3) -> np.ndarray:
    """Residual as a flat 7-vector; the inlined form of edge_residual."""
    m = edge.measurement
    rf_t = v_from.rotation.T
    # h = v_from^-1 . v_to
    rh = rf_t @ v_to.rotation
    th = (rf_t @ (v_to.translation - v_from.translation)) / v_from.scale
    sh = v_to.scale / v_from.scale
    # g = measurement . h
    rg = m.rotation @ rh
    tg = m.scale * (m.rotation @ th) + m.translation
    sg = m.scale * sh

    phi = so3_log(rg)
    sigma = math.log(sg)
    rho = _solve3(_sim3_w(phi, sigma), tg)
    out = np.empty(7)
    out[0:3] = rho
    out[3:6] = phi
    out[6] = sigma
    return out


def _objective(graph: PoseGraph, poses: dict[NodeKey, Sim3], active: list[int]) -> float:
    total = 0.0
    for idx in active:
        e = graph.edges[idx]
        r = _residual_vector(e, poses[e.from_key], poses[e.to_key])
        total += float(r @ e.omega @ r)
    return total


def optimize(graph: PoseGraph, config: LMConfig | None = None) -> tuple[PoseGraph, OptimizeReport]:
    """LM on all node poses; mutates the graph in place and reports.

    Raises:
        DisconnectedGraph: a view is unreachable from the anchor.
        SingularNormalEquations: factorization failed up to the damping cap.
    """
    config = config or LMConfig()
    t_start = time.perf_counter()
    report = OptimizeReport()

    unreachable = graph._unreachable_views()
    if unreachable:
        raise DisconnectedGraph(f"views {unreachable} unreachable from the anchor")
    if not graph.edges:
        report.termination = "empty_graph"
        return graph, report

    keys = sorted(k for k in graph.nodes if k != graph.anchor)
    index = {k: i for i, k in enumerate(keys)}
    n_vars = 7 * len(keys)
    poses = {k: n.pose for k, n in graph.nodes.items()}
    dense = len(graph.nodes) < config.dense_threshold

    def evaluate_full(p: dict[NodeKey, Sim3]):
        """Objective, cached residuals and skipped edges over all edges."""
        total = 0.0
        residuals: dict[int, np.ndarray] = {}
        skipped: list[int] = []
        for idx, e in enumerate(graph.edges):
            try:
                r = _residual_vector(e, p[e.from_key], p[e.to_key])
            except RotationNearPi:
                skipped.append(idx)
                continue
            residuals[idx] = r
            total += float(r @ e.omega @ r)
        return total, residuals, skipped

    objective, residuals, skipped = evaluate_full(poses)
    active = sorted(residuals)
    report.skipped_edges.extend(skipped)
    report.initial_residual = objective
    report.residual_trace.append(objective)

    damping = config.initial_damping
    damping_history = [damping]
    termination = "max_iterations"

    block = np.arange(7)
    identity = np.eye(n_vars) if dense else scipy.sparse.identity(n_vars, format="csc")

    def sparse_template(active_list: list[int]) -> tuple[np.ndarray, np.ndarray]:
        """COO indices for every edge block; value layout mirrors the fill loop."""
        rows_l, cols_l = [], []
        for idx in active_list:
            e = graph.edges[idx]
            i = index.get(e.from_key)
            j = index.get(e.to_key)
            for bi, bj in ((i, i), (i, j), (j, j), (j, i)):
                if bi is None or bj is None:
                    continue
                rows_l.append(np.repeat(7 * bi + block, 7))
                cols_l.append(np.tile(7 * bj + block, 7))
        return np.concatenate(rows_l), np.concatenate(cols_l)

    template_for: list[int] | None = None
    template: tuple[np.ndarray, np.ndarray] | None = None

    for iteration in range(config.max_iterations):
        if objective < config.residual_tolerance:
            termination = "residual_tolerance"
            break
        report.iterations = iteration + 1

        # ---- linearize
        b = np.zeros(n_vars)
        if dense:
            h = np.zeros((n_vars, n_vars))
        else:
            if template_for != active:
                template = sparse_template(active)
                template_for = list(active)
            vals = np.empty(template[0].size)
            pos = 0

        for idx in active:
            e = graph.edges[idx]
            r = residuals[idx]
            j_t = np.linalg.inv(_right_jacobian(r))
            j_f = -j_t @ adjoint(poses[e.to_key].inverse().compose(poses[e.from_key]))
            wi = e.omega
            i = index.get(e.from_key)
            j = index.get(e.to_key)
            jtw_f = j_f.T @ wi if i is not None else None
            jtw_t = j_t.T @ wi if j is not None else None
            if i is not None:
                b[7 * i : 7 * i + 7] -= jtw_f @ r
            if j is not None:
                b[7 * j : 7 * j + 7] -= jtw_t @ r
            if dense:
                if i is not None:
                    h[7 * i : 7 * i + 7, 7 * i : 7 * i + 7] += jtw_f @ j_f
                    if j is not None:
                        h[7 * i : 7 * i + 7, 7 * j : 7 * j + 7] += jtw_f @ j_t
                if j is not None:
                    h[7 * j : 7 * j + 7, 7 * j : 7 * j + 7] += jtw_t @ j_t
                    if i is not None:
                        h[7 * j : 7 * j + 7, 7 * i : 7 * i + 7] += jtw_t @ j_f
            else:
                # block order must match sparse_template: ff, ft, tt, tf
                if i is not None:
                    vals[pos : pos + 49] = (jtw_f @ j_f).ravel()
                    pos += 49
                    if j is not None:
                        vals[pos : pos + 49] = (jtw_f @ j_t).ravel()
                        pos += 49
                if j is not None:
                    vals[pos : pos + 49] = (jtw_t @ j_t).ravel()
                    pos += 49
                    if i is not None:
                        vals[pos : pos + 49] = (jtw_t @ j_f).ravel()
                        pos += 49

        if not dense:
            h = scipy.sparse.coo_matrix(
                (vals, template), shape=(n_vars, n_vars)
            ).tocsc()

        # Plain Levenberg damping: an absolute lambda on the identity leaves
        # the stiff scale-edge blocks effectively undamped (harmless) while
        # vanishing quickly on accepted steps, restoring the Gauss-Newton
        # quadratic tail.

        # ---- try steps with escalating damping until one decreases the objective
        improved = False
        while True:
            try:
                if dense:
                    delta = np.linalg.solve(h + damping * identity, b)
                else:
                    delta = scipy.sparse.linalg.spsolve(h + damping * identity, b)
                solvable = np.all(np.isfinite(delta))
            except (np.linalg.LinAlgError, RuntimeError):
                solvable = False

            if solvable:
                candidate = dict(poses)
                for k, i in index.items():
                    candidate[k] = poses[k].compose(exp_sim3(delta[7 * i : 7 * i + 7]))
                cand_obj, cand_res, cand_skip = math.inf, None, None
                try:
                    # comparable objective: previous active set, skips reject
                    cand_obj = 0.0
                    cand_res = {}
                    for idx in active:
                        e = graph.edges[idx]
                        r = _residual_vector(e, candidate[e.from_key], candidate[e.to_key])
                        cand_res[idx] = r
                        cand_obj += float(r @ e.omega @ r)
                except RotationNearPi:
                    cand_obj = math.inf
                if cand_obj < objective:
                    poses = candidate
                    objective = cand_obj
                    residuals = cand_res
                    damping = max(damping * config.damping_down, 1e-15)
                    damping_history.append(damping)
                    improved = True
                    step_norm = float(np.max(np.abs(delta)))
                    break

            damping *= config.damping_up
            damping_history.append(damping)
            if damping > config.max_damping:
                if not solvable:
                    raise SingularNormalEquations(
                        "normal equations singular", damping_history
                    )
                break  # solvable but no descent: stalled

        report.residual_trace.append(objective)
        if not improved:
            termination = "no_progress"
            break
        if objective < config.residual_tolerance:
            termination = "residual_tolerance"
            break
        if step_norm < config.step_tolerance:
            termination = "step_tolerance"
            break

        if report.skipped_edges:
            # previously skipped edges may have become valid again
            objective, residuals, skipped = evaluate_full(poses)
            active = sorted(residuals)
            report.skipped_edges.extend(skipped)

    else:
        termination = "max_iterations"

    for k, pose in poses.items():
        graph.nodes[k].pose = pose
    report.final_residual = objective
    report.termination = termination
    report.wall_time = time.perf_counter() - t_start
    return graph, report
