"""Sim(3) pose graph with pose edges, scale edges and gated loop closure.

Every forward pass over views (i, j) contributes two nodes, keyed by
``(view, paired_with)``, joined by a *pose edge* whose measurement is the
pass's relative pose with unit scale. Nodes of one view from different
passes are tied by *scale edges* (identity rigid part, WLS relative scale),
which all attach to the view's first processed node.

Edge residuals follow ``log(e . v_from^-1 . v_to)``; an edge is satisfied
when ``e`` equals ``(v_from^-1 v_to)^-1``. For a pose edge from v_i^j to
v_j^i that element is exactly the frame-i-to-frame-j relative pose in the
pass's own scale, which is what the frontend emits. For a scale edge from
the first processed node to a new node of the same view it is the pure
scale ``1 / s`` where ``s`` multiplies the new pass's pointmap to match the
first pass's (the node holding the larger pointmap scale carries the
smaller absolute scale).
"""

from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .frontend import PairMeasurement
from .scale import relative_scale
from .sim3 import Sim3
from .two_view import LocalPointmap

GRAPH_FORMAT_TAG = "sim3graph v1"


class DuplicatePass(ValueError):
    """A pass id (or its node pair) was ingested twice."""


class LoopDecision(enum.Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"


@dataclass(frozen=True, order=True)
class NodeKey:
    """Node identity: the view it localizes and the pass partner view."""

    view: int
    paired_with: int

    def __post_init__(self) -> None:
        if self.view == self.paired_with:
            raise ValueError("a pass never pairs a view with itself")


@dataclass
class Node:
    key: NodeKey
    pose: Sim3
    is_first_processed: bool
    best_confidence: float  # summary confidence of this node's pointmap


@dataclass
class Edge:
    kind: str  # "pose" | "scale"
    from_key: NodeKey
    to_key: NodeKey
    measurement: Sim3
    omega: np.ndarray  # 7x7 SPD information matrix


@dataclass(frozen=True)
class GraphConfig:
    """Neighbor radius, loop threshold and information-matrix constants."""

    neighbor_radius: int = 2
    tau_p: float = 0.75
    kappa_rho: float = 1.0
    kappa_phi: float = 1.0
    kappa_sigma: float = 1.0
    scale_edge_stiffness: float = 1e4
    scale_edge_kappa_sigma: float = 100.0
    confidence_reduction: str = "mean"  # for Node.best_confidence

    def __post_init__(self) -> None:
        if self.neighbor_radius < 1:
            raise ValueError("neighbor_radius must be >= 1")
        if not 0.0 < self.tau_p < 1.0:
            raise ValueError("tau_p must be in (0, 1)")

    def pose_omega(self, confidence: float) -> np.ndarray:
        k = [self.kappa_rho] * 3 + [self.kappa_phi] * 3 + [self.kappa_sigma]
        return max(confidence, 1e-6) * np.diag(k)

    def scale_omega(self, solver_weight: float) -> np.ndarray:
        # Stiff rigid block pins same-view nodes to a shared rotation and
        # translation; only the log-scale component carries the WLS weight.
        k = [self.scale_edge_stiffness] * 6 + [
            self.scale_edge_kappa_sigma * max(solver_weight, 1e-6)
        ]
        return np.diag(k)


def summarize_confidence(pm: LocalPointmap, reduction: str = "mean") -> float:
    vals = pm.confidence[pm.validity]
    if vals.size == 0:
        return 0.0
    if reduction == "mean":
        return float(vals.mean())
    if reduction == "sum":
        return float(vals.sum())
    if reduction == "max":
        return float(vals.max())
    raise ValueError(f"unknown confidence reduction {reduction!r}")


class PoseGraph:
    """Mutable two-edge-type pose graph. Single writer; reads are free."""

    def __init__(self, config: GraphConfig | None = None):
        self.config = config or GraphConfig()
        self.nodes: dict[NodeKey, Node] = {}
        self.edges: list[Edge] = []
        self.pointmaps: dict[NodeKey, LocalPointmap] = {}
        self.first_processed: dict[int, NodeKey] = {}
        self.anchor: NodeKey | None = None
        self._pass_ids: set[int] = set()

    # ------------------------------------------------------------- helpers

    @property
    def pose_edges(self) -> list[Edge]:
        return [e for e in self.edges if e.kind == "pose"]

    @property
    def scale_edges(self) -> list[Edge]:
        return [e for e in self.edges if e.kind == "scale"]

    def views(self) -> list[int]:
        return sorted({k.view for k in self.nodes})

    def nodes_of_view(self, view: int) -> list[Node]:
        return [n for k, n in sorted(self.nodes.items()) if k.view == view]

    def view_pose(self, view: int) -> Sim3:
        """Pose estimate for a view: its first processed node."""
        return self.nodes[self.first_processed[view]].pose

    # ------------------------------------------------------------ building

    def _add_node(self, key: NodeKey, pm: LocalPointmap) -> Node:
        if key in self.nodes:
            raise DuplicatePass(f"node {key} already exists")
        first = key.view not in self.first_processed
        node = Node(
            key=key,
            pose=Sim3.identity(),
            is_first_processed=first,
            best_confidence=summarize_confidence(pm, self.config.confidence_reduction),
        )
        self.nodes[key] = node
        self.pointmaps[key] = pm
        if first:
            self.first_processed[key.view] = key
        if self.anchor is None:
            self.anchor = key
        return node

    def _scale_edge(self, view: int, new_key: NodeKey) -> Edge:
        first_key = self.first_processed[view]
        pm_first = self.pointmaps[first_key]
        pm_new = self.pointmaps[new_key]
        s = relative_scale(pm_first, pm_new)
        weight = summarize_confidence(pm_first, "mean") * summarize_confidence(pm_new, "mean")
        edge = Edge(
            kind="scale",
            from_key=first_key,
            to_key=new_key,
            measurement=Sim3.from_scale(1.0 / s),
            omega=self.config.scale_omega(weight),
        )
        self.edges.append(edge)
        return edge

    def ingest_pair(self, m: PairMeasurement) -> None:
        """Add the pass's two nodes, its pose edge and any due scale edges.

        New node poses are initialized by propagating measurements from an
        already-initialized node; the very first node sits at the identity.

        Raises:
            DuplicatePass: pass id already ingested, or the node pair exists.
        """
        if m.pass_id in self._pass_ids:
            raise DuplicatePass(f"pass {m.pass_id} already ingested")
        key_i = NodeKey(m.view_i, m.view_j)
        key_j = NodeKey(m.view_j, m.view_i)
        if key_i in self.nodes or key_j in self.nodes:
            raise DuplicatePass(f"view pair ({m.view_i}, {m.view_j}) already processed")
        self._pass_ids.add(m.pass_id)

        had_i = m.view_i in self.first_processed
        had_j = m.view_j in self.first_processed
        self._add_node(key_i, m.pointmap_i)
        self._add_node(key_j, m.pointmap_j)

        pose_edge = Edge(
            kind="pose",
            from_key=key_i,
            to_key=key_j,
            measurement=m.relative_pose.transform,
            omega=self.config.pose_omega(m.relative_pose.confidence),
        )
        self.edges.append(pose_edge)

        scale_i = self._scale_edge(m.view_i, key_i) if had_i else None
        scale_j = self._scale_edge(m.view_j, key_j) if had_j else None

        # Initialization: satisfy the new edges exactly, starting from
        # whichever endpoint already has an initialized neighbor.
        if had_i:
            base = self.nodes[self.first_processed[m.view_i]].pose
            self.nodes[key_i].pose = base.compose(scale_i.measurement.inverse())
            self.nodes[key_j].pose = self.nodes[key_i].pose.compose(pose_edge.measurement.inverse())
        elif had_j:
            base = self.nodes[self.first_processed[m.view_j]].pose
            self.nodes[key_j].pose = base.compose(scale_j.measurement.inverse())
            self.nodes[key_i].pose = self.nodes[key_j].pose.compose(pose_edge.measurement)
        else:
            # first pair overall: anchor at identity
            self.nodes[key_j].pose = self.nodes[key_i].pose.compose(pose_edge.measurement.inverse())

    def try_close_loop(self, m: PairMeasurement, tau_p: float | None = None) -> LoopDecision:
        """Accept the loop pair iff its pose confidence strictly exceeds tau_p."""
        threshold = self.config.tau_p if tau_p is None else tau_p
        if m.relative_pose.confidence > threshold:
            self.ingest_pair(m)
            return LoopDecision.ACCEPTED
        return LoopDecision.REJECTED

    # ---------------------------------------------------------- validation

    def validate(self) -> list[str]:
        """Check edge/node invariants; returns human-readable violations."""
        problems: list[str] = []
        firsts = defaultdict(list)
        for key, node in self.nodes.items():
            if node.is_first_processed:
                firsts[key.view].append(key)
        for view in {k.view for k in self.nodes}:
            if len(firsts[view]) != 1:
                problems.append(f"view {view} has {len(firsts[view])} first-processed nodes")

        for idx, e in enumerate(self.edges):
            tag = f"{e.kind} edge {idx} ({e.from_key} -> {e.to_key})"
            if e.from_key not in self.nodes or e.to_key not in self.nodes:
                problems.append(f"{tag}: dangling endpoint")
                continue
            if e.kind == "pose":
                if e.measurement.scale != 1.0:
                    problems.append(f"{tag}: pose edge scale {e.measurement.scale} != 1")
                partner = NodeKey(e.from_key.paired_with, e.from_key.view)
                if e.to_key != partner:
                    problems.append(f"{tag}: endpoints not from one forward pass")
            elif e.kind == "scale":
                if np.linalg.norm(e.measurement.rotation - np.eye(3)) > 1e-12:
                    problems.append(f"{tag}: scale edge rotation not identity")
                if np.linalg.norm(e.measurement.translation) > 1e-12:
                    problems.append(f"{tag}: scale edge translation not zero")
                if e.from_key.view != e.to_key.view:
                    problems.append(f"{tag}: scale edge must stay within one view")
                elif not (
                    self.nodes[e.from_key].is_first_processed
                    or self.nodes[e.to_key].is_first_processed
                ):
                    problems.append(f"{tag}: neither endpoint is first-processed")
            else:
                problems.append(f"{tag}: unknown edge kind")
            omega = e.omega
            if omega.shape != (7, 7) or np.linalg.norm(omega - omega.T) > 1e-9:
                problems.append(f"{tag}: omega not symmetric")
            elif np.linalg.eigvalsh(omega)[0] <= 0.0:
                problems.append(f"{tag}: omega not positive definite")

        unreachable = self._unreachable_views()
        for view in unreachable:
            problems.append(f"view {view} not connected to the anchor by pose edges")
        return problems

    def _unreachable_views(self) -> list[int]:
        """Views not linked to the anchor's view in the view-level pose graph.

        Same-view nodes are contracted (scale edges tie them by design), so
        connectivity is judged between views through pose edges.
        """
        if not self.nodes:
            return []
        adjacency = defaultdict(set)
        for e in self.pose_edges:
            adjacency[e.from_key.view].add(e.to_key.view)
            adjacency[e.to_key.view].add(e.from_key.view)
        start = self.anchor.view
        seen = {start}
        stack = [start]
        while stack:
            v = stack.pop()
            for w in adjacency[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return sorted({k.view for k in self.nodes} - seen)

    # ------------------------------------------------------------- file io

    def dump(self, path: str) -> None:
        """Line-oriented text dump; load() restores it bit-exactly."""
        lines = [GRAPH_FORMAT_TAG]
        for key in sorted(self.nodes):
            n = self.nodes[key]
            vals = [*n.pose.rotation.flatten(), *n.pose.translation, n.pose.scale]
            lines.append(
                "node %d %d %d %.17g "
                % (key.view, key.paired_with, int(n.is_first_processed), n.best_confidence)
                + " ".join("%.17g" % v for v in vals)
            )
        for e in self.edges:
            vals = [*e.measurement.rotation.flatten(), *e.measurement.translation, e.measurement.scale]
            triu = e.omega[np.triu_indices(7)]
            lines.append(
                f"edge {e.kind} {e.from_key.view} {e.from_key.paired_with} "
                f"{e.to_key.view} {e.to_key.paired_with} "
                + " ".join("%.17g" % v for v in vals)
                + " | "
                + " ".join("%.17g" % v for v in triu)
            )
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    @staticmethod
    def load(path: str, config: GraphConfig | None = None) -> "PoseGraph":
        graph = PoseGraph(config)
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
        if not lines or lines[0] != GRAPH_FORMAT_TAG:
            raise ValueError(f"not a {GRAPH_FORMAT_TAG!r} file")
        for ln in lines[1:]:
            parts = ln.split()
            if parts[0] == "node":
                view, paired, first = int(parts[1]), int(parts[2]), bool(int(parts[3]))
                conf = float(parts[4])
                vals = [float(x) for x in parts[5:18]]
                key = NodeKey(view, paired)
                pose = Sim3(np.array(vals[:9]).reshape(3, 3), np.array(vals[9:12]), vals[12])
                graph.nodes[key] = Node(key, pose, first, conf)
                if first:
                    graph.first_processed[view] = key
                if graph.anchor is None:
                    graph.anchor = key
            elif parts[0] == "edge":
                kind = parts[1]
                fk = NodeKey(int(parts[2]), int(parts[3]))
                tk = NodeKey(int(parts[4]), int(parts[5]))
                bar = parts.index("|")
                vals = [float(x) for x in parts[6:bar]]
                triu = np.array([float(x) for x in parts[bar + 1 :]])
                omega = np.zeros((7, 7))
                omega[np.triu_indices(7)] = triu
                omega = omega + omega.T - np.diag(np.diag(omega))
                meas = Sim3(np.array(vals[:9]).reshape(3, 3), np.array(vals[9:12]), vals[12])
                graph.edges.append(Edge(kind, fk, tk, meas, omega))
            else:
                raise ValueError(f"unrecognized record {parts[0]!r}")
        return graph
