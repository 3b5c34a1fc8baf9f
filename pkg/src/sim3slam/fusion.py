"""Global pointcloud assembly from optimized node poses.

Each view contributes exactly one pass: the one whose pointmap has the
largest summary confidence. Its valid local points are mapped to world
coordinates with the owning node's similarity transform ``s R p + t`` and
concatenated in view order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .frontend import PairMeasurement
from .graph import NodeKey, PoseGraph, summarize_confidence


class MissingNode(KeyError):
    """A measurement references a node absent from the graph."""


@dataclass(frozen=True)
class FusedCloud:
    points: np.ndarray  # (N, 3)
    confidence: np.ndarray  # (N,)
    view_ids: np.ndarray  # (N,) int

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "confidence", np.asarray(self.confidence, dtype=float).reshape(-1))
        object.__setattr__(self, "view_ids", np.asarray(self.view_ids, dtype=int).reshape(-1))
        if not (len(self.points) == len(self.confidence) == len(self.view_ids)):
            raise ValueError("per-point arrays must have equal length")

    def __len__(self) -> int:
        return len(self.points)


def fuse(
    graph: PoseGraph,
    measurements: list[PairMeasurement],
    reduction: str = "mean",
) -> FusedCloud:
    """Assemble the global cloud from the best pass per view.

    Args:
        graph: optimized pose graph holding one node per (view, pass side).
        measurements: the ingested measurements (each contributes its two
            pointmaps under their node keys).
        reduction: confidence summary used for the per-view selection,
            one of "mean" (default), "sum", "max".

    Raises:
        MissingNode: a measurement references a node key not in the graph.
    """
    candidates: dict[int, tuple[float, NodeKey, object]] = {}
    for m in measurements:
        for view, partner, pm in (
            (m.view_i, m.view_j, m.pointmap_i),
            (m.view_j, m.view_i, m.pointmap_j),
        ):
            key = NodeKey(view, partner)
            if key not in graph.nodes:
                raise MissingNode(f"measurement pass {m.pass_id} references missing node {key}")
            score = summarize_confidence(pm, reduction)
            best = candidates.get(view)
            if best is None or score > best[0]:
                candidates[view] = (score, key, pm)

    points: list[np.ndarray] = []
    confs: list[np.ndarray] = []
    views: list[np.ndarray] = []
    for view in sorted(candidates):
        _, key, pm = candidates[view]
        pose = graph.nodes[key].pose
        local = pm.points[pm.validity]
        points.append(pose.act(local))
        confs.append(pm.confidence[pm.validity])
        views.append(np.full(len(local), view, dtype=int))

    if not points:
        return FusedCloud(np.empty((0, 3)), np.empty(0), np.empty(0, dtype=int))
    return FusedCloud(np.vstack(points), np.concatenate(confs), np.concatenate(views))


# --------------------------------------------------------------------------
# PLY io (x, y, z, confidence, view_id)
# --------------------------------------------------------------------------


def write_ply(path: str, cloud: FusedCloud, binary: bool = False) -> None:
    """Write the cloud as PLY, ASCII or binary little-endian."""
    fmt = "binary_little_endian" if binary else "ascii"
    header = "\n".join(
        [
            "ply",
            f"format {fmt} 1.0",
            f"element vertex {len(cloud)}",
            "property float x",
            "property float y",
            "property float z",
            "property float confidence",
            "property int view_id",
            "end_header",
        ]
    )
    if binary:
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii") + b"\n")
            for p, c, v in zip(cloud.points, cloud.confidence, cloud.view_ids):
                fh.write(struct.pack("<ffffi", p[0], p[1], p[2], c, int(v)))
    else:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(header + "\n")
            for p, c, v in zip(cloud.points, cloud.confidence, cloud.view_ids):
                fh.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {c:.9g} {int(v)}\n")


def read_ply(path: str) -> FusedCloud:
    """Read a PLY file written by :func:`write_ply`."""
    with open(path, "rb") as fh:
        header_lines = []
        while True:
            line = fh.readline().decode("ascii").strip()
            header_lines.append(line)
            if line == "end_header":
                break
        if header_lines[0] != "ply":
            raise ValueError("not a PLY file")
        fmt = header_lines[1].split()[1]
        count = next(int(ln.split()[2]) for ln in header_lines if ln.startswith("element vertex"))

        points = np.zeros((count, 3))
        conf = np.zeros(count)
        views = np.zeros(count, dtype=int)
        if fmt == "binary_little_endian":
            record = struct.Struct("<ffffi")
            for k in range(count):
                x, y, z, c, v = record.unpack(fh.read(record.size))
                points[k] = (x, y, z)
                conf[k] = c
                views[k] = v
        elif fmt == "ascii":
            for k in range(count):
                parts = fh.readline().decode("ascii").split()
                points[k] = [float(p) for p in parts[:3]]
                conf[k] = float(parts[3])
                views[k] = int(parts[4])
        else:
            raise ValueError(f"unsupported PLY format {fmt!r}")
    return FusedCloud(points, conf, views)
