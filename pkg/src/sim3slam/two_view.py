"""Two-view model output post-processing and training-loss diagnostics.

The loss functions here are pure evaluation scalars over pointmap pairs and
relative poses. Pointmaps and the ground-truth translations of a pair are
normalized by their mean point distance to the origin, which makes every
term scale-free. Conventions match :mod:`sim3slam.sim3`: a relative pose
``T_ij`` maps points from frame i into frame j.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sim3 import Sim3

DEFAULT_ALPHA_POINT = 0.2
DEFAULT_ALPHA_POSE = 0.05
DEFAULT_LAMBDAS = (1.0, 1.0, 1.0)


class DegenerateMatrix(ValueError):
    """Two or more singular values vanish; nearest rotation is not unique."""


class EmptyPointmap(ValueError):
    """Pointmap has no valid pixels."""


class NonPositiveConfidence(ValueError):
    """Confidence-weighted log term requires strictly positive confidences."""


class NonPositiveNormalizer(ValueError):
    """Normalization factors must be positive."""


class ZeroConfidence(ValueError):
    """Pose confidence must be in (0, 1] for the log term."""


@dataclass(frozen=True)
class LocalPointmap:
    """Grid of 3D points in a camera's local frame with confidences.

    ``points`` has shape (H, W, 3), ``confidence`` and ``validity`` (H, W).
    Invalid pixels carry no ground truth and are excluded from losses and
    normalization factors.
    """

    points: np.ndarray
    confidence: np.ndarray
    validity: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        conf = np.asarray(self.confidence, dtype=float)
        valid = np.asarray(self.validity, dtype=bool)
        if pts.ndim != 3 or pts.shape[2] != 3:
            raise ValueError(f"points must be (H, W, 3), got {pts.shape}")
        if conf.shape != pts.shape[:2] or valid.shape != pts.shape[:2]:
            raise ValueError("confidence/validity grids must match point grid shape")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "confidence", conf)
        object.__setattr__(self, "validity", valid)

    @property
    def height(self) -> int:
        return self.points.shape[0]

    @property
    def width(self) -> int:
        return self.points.shape[1]

    def valid_points(self) -> np.ndarray:
        """(N, 3) array of points at valid pixels, row-major order."""
        return self.points[self.validity]

    @staticmethod
    def from_flat(points: np.ndarray, confidence: np.ndarray, validity: np.ndarray) -> "LocalPointmap":
        """Build a 1 x N grid from flat per-landmark arrays."""
        points = np.asarray(points, dtype=float)
        return LocalPointmap(
            points.reshape(1, -1, 3),
            np.asarray(confidence, dtype=float).reshape(1, -1),
            np.asarray(validity, dtype=bool).reshape(1, -1),
        )


@dataclass(frozen=True)
class RelativePose:
    """Rigid relative pose (scale fixed to 1) with a confidence in [0, 1]."""

    transform: Sim3
    confidence: float = 1.0

    def __post_init__(self) -> None:
        if self.transform.scale != 1.0:
            raise ValueError("relative pose must have unit scale")
        c = float(self.confidence)
        if not (0.0 <= c <= 1.0):
            raise ValueError(f"pose confidence must be in [0, 1], got {c}")
        object.__setattr__(self, "confidence", c)


@dataclass(frozen=True)
class Correspondence:
    """Pixel correspondences: source[k] in view i maps to target[k] in view j."""

    source: np.ndarray
    target: np.ndarray

    def __post_init__(self) -> None:
        src = np.asarray(self.source, dtype=int).reshape(-1, 2)
        dst = np.asarray(self.target, dtype=int).reshape(-1, 2)
        if src.shape != dst.shape:
            raise ValueError("source and target must have the same length")
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "target", dst)

    def __len__(self) -> int:
        return self.source.shape[0]


def svd_orthogonalize(m: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in Frobenius norm, via SVD.

    Returns U diag(1, 1, det(U V^T)) V^T, flipping the last singular
    direction when the plain product would be a reflection.

    Raises:
        DegenerateMatrix: if two or more singular values are below 1e-12,
            in which case the projection onto SO(3) is not unique.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        raise ValueError("input must be a finite 3x3 matrix")
    u, s, vt = np.linalg.svd(m)
    if np.sum(s < 1e-12) >= 2:
        raise DegenerateMatrix(f"singular values {s} leave the nearest rotation ambiguous")
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def pointmap_norm_factor(pm: LocalPointmap) -> float:
    """Mean Euclidean distance to the origin over valid pixels."""
    pts = pm.valid_points()
    if pts.shape[0] == 0:
        raise EmptyPointmap("pointmap has no valid pixels")
    return float(np.mean(np.linalg.norm(pts, axis=1)))


def _single_view_pointmap_loss(pred: LocalPointmap, gt: LocalPointmap, alpha: float) -> float:
    if pred.points.shape != gt.points.shape:
        raise ValueError("prediction and ground truth must share dimensions")
    mask = gt.validity & pred.validity
    if not mask.any():
        raise EmptyPointmap("no jointly valid pixels")
    w = pred.confidence[mask]
    if np.any(w <= 0.0):
        raise NonPositiveConfidence("confidence must be > 0 at valid pixels")
    n = float(np.mean(np.linalg.norm(pred.points[mask], axis=1)))
    n_gt = float(np.mean(np.linalg.norm(gt.points[mask], axis=1)))
    if n <= 0.0 or n_gt <= 0.0:
        raise NonPositiveNormalizer("pointmap normalization factor must be positive")
    diff = gt.points[mask] / n_gt - pred.points[mask] / n
    dist = np.linalg.norm(w[:, None] * diff, axis=1)
    return float(np.sum(dist - alpha * np.log(w)))


def pointmap_loss(
    pred_i: LocalPointmap,
    pred_j: LocalPointmap,
    gt_i: LocalPointmap,
    gt_j: LocalPointmap,
    alpha_point: float = DEFAULT_ALPHA_POINT,
) -> float:
    """Confidence-weighted normalized regression loss over both views."""
    return _single_view_pointmap_loss(pred_i, gt_i, alpha_point) + _single_view_pointmap_loss(
        pred_j, gt_j, alpha_point
    )


def rotation_loss(r: np.ndarray, r_gt: np.ndarray) -> float:
    """Geodesic angle between two rotations, arccos((tr(R^-1 R_gt) - 1) / 2).

    Evaluated as atan2(||skew part||, (tr - 1) / 2), which equals the arccos
    form exactly for angles in [0, pi] but does not amplify round-off near 0
    or pi; the cosine is additionally clamped to [-1, 1].
    """
    rel = np.asarray(r, dtype=float).T @ np.asarray(r_gt, dtype=float)
    c = (float(np.trace(rel)) - 1.0) / 2.0
    c = min(1.0, max(-1.0, c))
    w = 0.5 * np.array([rel[2, 1] - rel[1, 2], rel[0, 2] - rel[2, 0], rel[1, 0] - rel[0, 1]])
    return math.atan2(float(np.linalg.norm(w)), c)


def translation_loss(t: np.ndarray, t_gt: np.ndarray, n: float, n_gt: float) -> float:
    """Squared distance of the normalized translations."""
    if n <= 0.0 or n_gt <= 0.0:
        raise NonPositiveNormalizer(f"normalizers must be positive, got {n}, {n_gt}")
    d = np.asarray(t, dtype=float) / n - np.asarray(t_gt, dtype=float) / n_gt
    return float(d @ d)


def identity_loss(t_ij: RelativePose, t_ji: RelativePose) -> float:
    """Cycle-consistency: composed forward/backward pose vs the identity.

    The translation term uses unit normalizers.
    """
    r_ij = t_ij.transform.rotation
    composed_r = r_ij @ t_ji.transform.rotation
    composed_t = r_ij @ t_ji.transform.translation + t_ij.transform.translation
    return rotation_loss(composed_r, np.eye(3)) + translation_loss(composed_t, np.zeros(3), 1.0, 1.0)


def pose_loss(
    pred: RelativePose,
    gt_transform: Sim3,
    n: float,
    n_gt: float,
    reverse_pred: RelativePose,
    alpha_pose: float = DEFAULT_ALPHA_POSE,
) -> float:
    """Confidence-weighted relative pose loss with cycle-consistency term."""
    w = pred.confidence
    if w <= 0.0:
        raise ZeroConfidence("pose confidence must be strictly positive")
    l_r = rotation_loss(pred.transform.rotation, gt_transform.rotation)
    l_t = translation_loss(pred.transform.translation, gt_transform.translation, n, n_gt)
    l_id = identity_loss(pred, reverse_pred)
    return w * (l_r + l_t + l_id) - alpha_pose * math.log(w)


def geometric_consistency_loss(
    pm_i: LocalPointmap,
    pm_j: LocalPointmap,
    t_ij: RelativePose,
    corr: Correspondence,
    n: float,
) -> float:
    """Sum of ||T_ij P_i(x) - P_j(C(x))|| / n over the correspondences."""
    if n <= 0.0:
        raise NonPositiveNormalizer(f"normalizer must be positive, got {n}")
    if len(corr) == 0:
        return 0.0
    src, dst = corr.source, corr.target
    if np.any(dst[:, 0] >= pm_j.height) or np.any(dst[:, 1] >= pm_j.width) or np.any(dst < 0):
        raise ValueError("correspondence targets out of bounds")
    p_i = pm_i.points[src[:, 0], src[:, 1]]
    p_j = pm_j.points[dst[:, 0], dst[:, 1]]
    moved = t_ij.transform.act(p_i)
    return float(np.sum(np.linalg.norm(moved - p_j, axis=1)) / n)


def total_loss(
    parts: tuple[float, float, float],
    lambdas: tuple[float, float, float] = DEFAULT_LAMBDAS,
) -> float:
    """Weighted sum of (pointmap, pose, geometric-consistency) losses."""
    return float(sum(l * p for l, p in zip(lambdas, parts)))


def rotation_angle(r: np.ndarray) -> float:
    """Rotation angle in [0, pi]."""
    return rotation_loss(np.eye(3), r)
