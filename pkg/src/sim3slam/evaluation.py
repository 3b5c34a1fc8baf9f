"""Trajectory and reconstruction metrics, plus trajectory file io.

Alignment is the closed-form least-squares similarity transform (SVD of the
cross-covariance with reflection correction, scale from the variance ratio).
ATE RMSE is the root mean square of translational residuals after aligning
the estimate to the reference. Reconstruction metrics are nearest-neighbor
RMSE in both directions plus their mean as the Chamfer value.

Trajectory files use the plain-text line format
``timestamp tx ty tz qx qy qz qw`` (quaternion scalar-last, '#' comments),
the de-facto standard of RGB-D SLAM benchmarks. This module is the only
place where rotations become quaternions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .sim3 import Sim3

BRUTE_FORCE_LIMIT = 2000


class DegenerateConfiguration(ValueError):
    """Point sets too degenerate (coincident/collinear) to align."""


class NoAssociations(ValueError):
    """No trajectory timestamps matched within the association tolerance."""


class EmptyCloud(ValueError):
    """Reconstruction metrics need non-empty clouds."""


class TrajectoryParseError(ValueError):
    def __init__(self, path: str, line_number: int, message: str):
        super().__init__(f"{path}:{line_number}: {message}")
        self.line_number = line_number


@dataclass(frozen=True)
class Trajectory:
    """Timestamped world-from-camera SE(3) poses (unit-scale Sim3)."""

    timestamps: np.ndarray
    poses: tuple[Sim3, ...]

    def __post_init__(self) -> None:
        ts = np.asarray(self.timestamps, dtype=float)
        if len(ts) != len(self.poses):
            raise ValueError("timestamps and poses must have equal length")
        if np.any(np.diff(ts) <= 0.0):
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", ts)

    def __len__(self) -> int:
        return len(self.poses)

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    def transformed(self, g: Sim3) -> "Trajectory":
        """Apply a similarity transform to every pose (rotations stay rigid)."""
        moved = tuple(
            Sim3(g.rotation @ p.rotation, g.act(p.translation), 1.0) for p in self.poses
        )
        return Trajectory(self.timestamps, moved)


def umeyama_align(est: np.ndarray, ref: np.ndarray, with_scale: bool = True) -> Sim3:
    """Similarity (or rigid) transform g minimizing sum ||ref - g(est)||^2.

    Raises:
        DegenerateConfiguration: fewer than 3 points, or est is collinear.
    """
    est = np.asarray(est, dtype=float).reshape(-1, 3)
    ref = np.asarray(ref, dtype=float).reshape(-1, 3)
    if est.shape != ref.shape:
        raise ValueError("point sets must have matching shapes")
    n = est.shape[0]
    if n < 3:
        raise DegenerateConfiguration("need at least 3 correspondences")

    mu_est = est.mean(axis=0)
    mu_ref = ref.mean(axis=0)
    est_c = est - mu_est
    ref_c = ref - mu_ref

    cov = ref_c.T @ est_c / n
    u, d, vt = np.linalg.svd(cov)
    if d[1] < 1e-12 * max(d[0], 1.0):
        raise DegenerateConfiguration("points are collinear or coincident")
    s_fix = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0.0:
        s_fix[2, 2] = -1.0
    rotation = u @ s_fix @ vt

    if with_scale:
        var_est = float(np.sum(est_c**2)) / n
        scale = float(np.trace(np.diag(d) @ s_fix)) / var_est
        if scale <= 0.0:
            raise DegenerateConfiguration("non-positive scale from alignment")
    else:
        scale = 1.0
    translation = mu_ref - scale * (rotation @ mu_est)
    return Sim3(rotation, translation, scale)


def associate(
    est: Trajectory, ref: Trajectory, max_dt: float = 0.02
) -> list[tuple[int, int]]:
    """Greedy one-to-one nearest-timestamp matching within max_dt seconds."""
    pairs = [
        (abs(te - tr), i, j)
        for i, te in enumerate(est.timestamps)
        for j, tr in enumerate(ref.timestamps)
        if abs(te - tr) <= max_dt
    ]
    pairs.sort()
    used_e: set[int] = set()
    used_r: set[int] = set()
    matches = []
    for _, i, j in pairs:
        if i in used_e or j in used_r:
            continue
        used_e.add(i)
        used_r.add(j)
        matches.append((i, j))
    return sorted(matches)


def ate_rmse(
    est: Trajectory,
    ref: Trajectory,
    align: str = "sim3",
    max_dt: float = 0.02,
) -> float:
    """RMSE of translational residuals, optionally after alignment.

    ``align`` is "sim3" (similarity), "se3" (rigid) or "none".

    Raises:
        NoAssociations: no timestamp pairs within tolerance (or fewer than 3
            when alignment is requested).
    """
    matches = associate(est, ref, max_dt)
    if not matches:
        raise NoAssociations("no timestamp associations within tolerance")
    p_est = np.array([est.poses[i].translation for i, _ in matches])
    p_ref = np.array([ref.poses[j].translation for _, j in matches])

    if align in ("sim3", "se3"):
        if len(matches) < 3:
            raise NoAssociations("alignment needs at least 3 associations")
        g = umeyama_align(p_est, p_ref, with_scale=(align == "sim3"))
        p_est = g.act(p_est)
    elif align != "none":
        raise ValueError(f"unknown alignment mode {align!r}")

    residuals = np.linalg.norm(p_est - p_ref, axis=1)
    return float(np.sqrt(np.mean(residuals**2)))


def nearest_neighbor_distances(query: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Distance from each query point to its nearest target point.

    Brute force below BRUTE_FORCE_LIMIT points, kd-tree above.
    """
    query = np.asarray(query, dtype=float).reshape(-1, 3)
    target = np.asarray(target, dtype=float).reshape(-1, 3)
    if len(query) == 0 or len(target) == 0:
        raise EmptyCloud("nearest-neighbor query with empty cloud")
    if max(len(query), len(target)) < BRUTE_FORCE_LIMIT:
        diff = query[:, None, :] - target[None, :, :]
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff).min(axis=1))
    tree = cKDTree(target)
    dist, _ = tree.query(query, k=1)
    return dist


@dataclass(frozen=True)
class ReconstructionMetrics:
    accuracy: float
    completeness: float
    chamfer: float


def reconstruction_metrics(
    fused: np.ndarray, gt: np.ndarray, reduction: str = "rmse"
) -> ReconstructionMetrics:
    """Accuracy (fused->gt), completeness (gt->fused) and their mean.

    ``reduction`` is "rmse" (default) or "mean" over nearest-neighbor
    distances. Clouds must be pre-aligned.
    """
    fused = np.asarray(fused, dtype=float).reshape(-1, 3)
    gt = np.asarray(gt, dtype=float).reshape(-1, 3)
    if len(fused) == 0 or len(gt) == 0:
        raise EmptyCloud("reconstruction metrics need non-empty clouds")

    def reduce(d: np.ndarray) -> float:
        if reduction == "rmse":
            return float(np.sqrt(np.mean(d**2)))
        if reduction == "mean":
            return float(np.mean(d))
        raise ValueError(f"unknown reduction {reduction!r}")

    accuracy = reduce(nearest_neighbor_distances(fused, gt))
    completeness = reduce(nearest_neighbor_distances(gt, fused))
    return ReconstructionMetrics(accuracy, completeness, 0.5 * (accuracy + completeness))


# --------------------------------------------------------------------------
# trajectory file io (timestamp tx ty tz qx qy qz qw)
# --------------------------------------------------------------------------


def quaternion_from_rotation(r: np.ndarray) -> np.ndarray:
    """Unit quaternion (x, y, z, w) from a rotation matrix."""
    t = np.trace(r)
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (r[2, 1] - r[1, 2]) / s
        y = (r[0, 2] - r[2, 0]) / s
        z = (r[1, 0] - r[0, 1]) / s
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        w = (r[2, 1] - r[1, 2]) / s
        x = 0.25 * s
        y = (r[0, 1] + r[1, 0]) / s
        z = (r[0, 2] + r[2, 0]) / s
    elif r[1, 1] > r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        w = (r[0, 2] - r[2, 0]) / s
        x = (r[0, 1] + r[1, 0]) / s
        y = 0.25 * s
        z = (r[1, 2] + r[2, 1]) / s
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        w = (r[1, 0] - r[0, 1]) / s
        x = (r[0, 2] + r[2, 0]) / s
        y = (r[1, 2] + r[2, 1]) / s
        z = 0.25 * s
    q = np.array([x, y, z, w])
    return q / np.linalg.norm(q)


def rotation_from_quaternion(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from a quaternion (x, y, z, w); normalizes the input."""
    q = np.asarray(q, dtype=float).reshape(4)
    norm = np.linalg.norm(q)
    if norm < 1e-12:
        raise ValueError("zero-norm quaternion")
    x, y, z, w = q / norm
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def write_trajectory(path: str, traj: Trajectory) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# timestamp tx ty tz qx qy qz qw\n")
        for t, pose in zip(traj.timestamps, traj.poses):
            q = quaternion_from_rotation(pose.rotation)
            tx, ty, tz = pose.translation
            fh.write(
                f"{t:.6f} {tx:.9f} {ty:.9f} {tz:.9f} "
                f"{q[0]:.9f} {q[1]:.9f} {q[2]:.9f} {q[3]:.9f}\n"
            )


def read_trajectory(path: str) -> Trajectory:
    """Parse a trajectory file.

    Raises:
        TrajectoryParseError: malformed line, with its 1-based line number.
    """
    timestamps: list[float] = []
    poses: list[Sim3] = []
    with open(path, "r", encoding="ascii") as fh:
        for line_number, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise TrajectoryParseError(
                    path, line_number, f"expected 8 fields, got {len(parts)}"
                )
            try:
                values = [float(p) for p in parts]
            except ValueError as exc:
                raise TrajectoryParseError(path, line_number, str(exc)) from None
            try:
                rotation = rotation_from_quaternion(np.array(values[4:8]))
            except ValueError as exc:
                raise TrajectoryParseError(path, line_number, f"bad quaternion: {exc}") from None
            timestamps.append(values[0])
            poses.append(Sim3(rotation, np.array(values[1:4]), 1.0))
    return Trajectory(np.array(timestamps), tuple(poses))
