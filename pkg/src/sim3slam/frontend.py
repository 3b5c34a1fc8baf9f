"""Deterministic synthetic frontend: scenes, noisy pair measurements, loops.

This module stands in for a learned two-view model. It generates ground-truth
scenes and emits measurements with controlled defects:

- each forward pass applies one random scale factor to both pointmaps *and*
  the relative translation (the model's outputs are up-to-scale per pass);
- relative poses are perturbed by rotation/translation noise;
- the pose confidence is ``exp(-err / beta)`` where ``err`` is the injected
  error magnitude, so bad measurements score low (the ordinal property the
  backend's loop gating relies on);
- loop candidates include optional false positives drawn from spatially
  remote view pairs, which receive gross pose errors and hence low scores.

Everything is reproducible: a measurement depends only on (scene, noise
model seed, pass id).

The relative pose convention is fixed package-wide: ``T_ij`` maps points
from frame i into frame j, i.e. ``p_j = R_ij p_i + t_ij``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .sim3 import Sim3, so3_exp
from .two_view import LocalPointmap, RelativePose

PRESETS = ("circle", "figure-eight", "corridor", "random-walk")

MIN_COVISIBLE = 8

# Distinct RNG stream tags so scene/pair/loop draws never collide.
_STREAM_LOOPS = 7_040_339


class InsufficientLandmarks(ValueError):
    """Fewer landmarks requested than a view needs to observe."""


class InsufficientOverlap(ValueError):
    """The two views share too few co-visible landmarks for a forward pass."""


@dataclass(frozen=True)
class Scene:
    """Ground-truth landmarks and camera trajectory.

    ``poses[v]`` is the world-from-camera pose of view v (unit scale);
    ``visibility[v, l]`` marks landmark l as observed by view v.
    """

    landmarks: np.ndarray
    poses: tuple[Sim3, ...]
    timestamps: np.ndarray
    visibility: np.ndarray

    def __post_init__(self) -> None:
        ts = np.asarray(self.timestamps, dtype=float)
        if np.any(np.diff(ts) <= 0.0):
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "landmarks", np.asarray(self.landmarks, dtype=float))
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "visibility", np.asarray(self.visibility, dtype=bool))

    @property
    def num_views(self) -> int:
        return len(self.poses)

    @property
    def num_landmarks(self) -> int:
        return self.landmarks.shape[0]

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses])

    def baseline(self) -> float:
        """Median distance between consecutive camera centers."""
        pos = self.positions()
        return float(np.median(np.linalg.norm(np.diff(pos, axis=0), axis=1)))

    def covisible(self, view_i: int, view_j: int) -> np.ndarray:
        return self.visibility[view_i] & self.visibility[view_j]


@dataclass(frozen=True)
class NoiseModel:
    """Noise magnitudes and the error-to-confidence mapping.

    ``sigma_rot`` is in radians, ``sigma_trans`` a fraction of the pair
    baseline, ``sigma_scale`` the log-std of the per-pass scale factor,
    ``sigma_point`` in scene units. The pose confidence of a measurement is
    ``exp(-err / confidence_beta)`` with err the injected rotation angle plus
    baseline-relative translation error.
    """

    sigma_rot: float = math.radians(1.0)
    sigma_trans: float = 0.01
    sigma_scale: float = 0.02
    sigma_point: float = 0.0
    loop_false_positive_rate: float = 0.0
    confidence_beta: float = 0.25
    aliased_beta: float = 4.0
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("sigma_rot", "sigma_trans", "sigma_scale", "sigma_point"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0.0 <= self.loop_false_positive_rate <= 1.0:
            raise ValueError("loop_false_positive_rate must be in [0, 1]")
        if self.confidence_beta <= 0.0 or self.aliased_beta <= 0.0:
            raise ValueError("confidence betas must be positive")

    def scaled(self, factor: float) -> "NoiseModel":
        """Copy with every sigma multiplied by factor."""
        return replace(
            self,
            sigma_rot=self.sigma_rot * factor,
            sigma_trans=self.sigma_trans * factor,
            sigma_scale=self.sigma_scale * factor,
            sigma_point=self.sigma_point * factor,
        )

    def confidence_from_error(self, err: float) -> float:
        return math.exp(-err / self.confidence_beta)

    def aliased_confidence_from_error(self, err: float) -> float:
        """Confidence for perceptually aliased pairs (lookalike places).

        A fooled model is overconfident: the slope is much shallower than
        for honest error, so grossly wrong poses still score moderately.
        With the gross-error magnitudes the simulator injects (>= 1.6) the
        score stays below exp(-1.6/4) ~ 0.67, under the default gate.
        """
        return math.exp(-err / self.aliased_beta)


@dataclass(frozen=True)
class PairMeasurement:
    """One simulated forward pass over views (i, j).

    Both pointmaps (and the relative translation) carry the same hidden
    per-pass scale factor. ``relative_pose`` maps frame-i points to frame j.
    """

    view_i: int
    view_j: int
    pointmap_i: LocalPointmap
    pointmap_j: LocalPointmap
    relative_pose: RelativePose
    pass_id: int


@dataclass(frozen=True)
class LoopCandidate:
    view_i: int
    view_j: int
    is_true_loop: bool


# --------------------------------------------------------------------------
# scene generation
# --------------------------------------------------------------------------


def _heading_frame(forward: np.ndarray) -> np.ndarray:
    """World-from-camera rotation with the camera z-axis along `forward`."""
    f = forward / np.linalg.norm(forward)
    up = np.array([0.0, 0.0, 1.0])
    if abs(f @ up) > 0.95:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(f, up)
    right /= np.linalg.norm(right)
    down = np.cross(f, right)
    return np.column_stack([right, down, f])


def _trajectory(preset: str, num_views: int, radius: float, rng: np.random.Generator):
    if preset == "circle":
        angles = 2.0 * math.pi * np.arange(num_views) / num_views
        centers = np.column_stack(
            [radius * np.cos(angles), radius * np.sin(angles), np.zeros(num_views)]
        )
        forwards = np.column_stack([-np.sin(angles), np.cos(angles), np.zeros(num_views)])
    elif preset == "figure-eight":
        u = 2.0 * math.pi * np.arange(num_views) / num_views
        centers = np.column_stack(
            [radius * np.sin(u), radius * np.sin(u) * np.cos(u), np.zeros(num_views)]
        )
        dx = radius * np.cos(u)
        dy = radius * (np.cos(u) ** 2 - np.sin(u) ** 2)
        forwards = np.column_stack([dx, dy, np.zeros(num_views)])
    elif preset == "corridor":
        step = 2.0 * math.pi * radius / num_views
        xs = step * np.arange(num_views)
        centers = np.column_stack([xs, np.zeros(num_views), np.zeros(num_views)])
        forwards = np.tile([1.0, 0.0, 0.0], (num_views, 1))
    elif preset == "random-walk":
        step = 2.0 * math.pi * radius / num_views
        heading = 0.0
        pos = np.zeros(3)
        centers = np.zeros((num_views, 3))
        forwards = np.zeros((num_views, 3))
        for k in range(num_views):
            centers[k] = pos
            forwards[k] = [math.cos(heading), math.sin(heading), 0.0]
            heading += rng.normal(scale=0.25)
            pos = pos + step * forwards[k] + [0.0, 0.0, rng.normal(scale=0.02 * step)]
    else:
        raise ValueError(f"unknown preset {preset!r}; expected one of {PRESETS}")
    rotations = [_heading_frame(f) for f in forwards]
    return centers, rotations


def generate_scene(
    preset: str,
    num_views: int,
    num_landmarks: int,
    seed: int,
    radius: float = 5.0,
    vis_range: float | None = None,
) -> Scene:
    """Build a deterministic scene with guaranteed landmark coverage.

    Landmarks are sampled near the camera path so that every landmark is
    observed by at least one view and every view observes at least
    ``MIN_COVISIBLE``; views within a few indices of each other share
    observations. Circle and figure-eight trajectories return to their start.
    """
    if num_views < 2:
        raise ValueError("need at least two views")
    if num_landmarks < MIN_COVISIBLE:
        raise InsufficientLandmarks(f"need at least {MIN_COVISIBLE} landmarks")
    rng = np.random.default_rng(seed)
    centers, rotations = _trajectory(preset, num_views, radius, rng)

    steps = np.linalg.norm(np.diff(centers, axis=0), axis=1)
    step = float(np.median(steps))
    if vis_range is None:
        vis_range = max(4.0 * step, 0.4 * radius)

    def sample_near(view: int, count: int) -> np.ndarray:
        offs = rng.normal(size=(count, 3))
        offs /= np.linalg.norm(offs, axis=1, keepdims=True)
        radii = 0.85 * vis_range * rng.uniform(0.1, 1.0, size=count) ** (1.0 / 3.0)
        return centers[view] + offs * radii[:, None]

    anchors = rng.integers(0, num_views, size=num_landmarks)
    landmarks = np.concatenate(
        [sample_near(v, int((anchors == v).sum())) for v in range(num_views) if (anchors == v).any()]
    )

    def vis_mask(lms: np.ndarray) -> np.ndarray:
        d = np.linalg.norm(centers[:, None, :] - lms[None, :, :], axis=2)
        return d <= vis_range

    visibility = vis_mask(landmarks)

    def sample_between(a: int, b: int, count: int) -> np.ndarray:
        mid = 0.5 * (centers[a] + centers[b])
        spread = max(0.8 * vis_range - 0.5 * np.linalg.norm(centers[a] - centers[b]), 0.05 * vis_range)
        offs = rng.normal(size=(count, 3))
        offs /= np.linalg.norm(offs, axis=1, keepdims=True)
        return mid + offs * (spread * rng.uniform(0.1, 1.0, size=count))[:, None]

    # Top up under-observed views and under-shared near-index pairs; both
    # are deterministic and usually no-ops at sane densities. Pairs up to an
    # index gap of 3 cover every neighbor radius used in practice.
    for v in range(num_views):
        guard = 0
        while visibility[v].sum() < MIN_COVISIBLE:
            landmarks = np.vstack([landmarks, sample_near(v, MIN_COVISIBLE)])
            visibility = vis_mask(landmarks)
            guard += 1
            if guard > 50:
                raise InsufficientLandmarks(f"could not cover view {v}")
    for gap in (1, 2, 3):
        for a in range(num_views - gap):
            b = a + gap
            guard = 0
            while (visibility[a] & visibility[b]).sum() < MIN_COVISIBLE:
                landmarks = np.vstack([landmarks, sample_between(a, b, MIN_COVISIBLE)])
                visibility = vis_mask(landmarks)
                guard += 1
                if guard > 50:
                    raise InsufficientLandmarks(f"could not cover pair ({a}, {b})")

    poses = tuple(Sim3(r, c, 1.0) for r, c in zip(rotations, centers))
    timestamps = 0.1 * np.arange(num_views)
    return Scene(landmarks, poses, timestamps, visibility)


# --------------------------------------------------------------------------
# pair simulation
# --------------------------------------------------------------------------


def _local_pointmap(
    scene: Scene, view: int, pass_scale: float, noise: NoiseModel, rng: np.random.Generator
) -> LocalPointmap:
    """View's landmarks in camera coordinates, pass-scaled and noised."""
    cam_from_world = scene.poses[view].inverse()
    pts = cam_from_world.act(scene.landmarks)
    valid = scene.visibility[view]
    eps = noise.sigma_point * rng.standard_normal(pts.shape)
    points = pass_scale * pts + eps
    points[~valid] = 0.0
    if noise.sigma_point > 0.0:
        conf = np.exp(-np.linalg.norm(eps, axis=1) / (3.0 * noise.sigma_point))
    else:
        conf = np.ones(pts.shape[0])
    return LocalPointmap.from_flat(points, conf, valid)


def _true_relative(scene: Scene, view_i: int, view_j: int) -> Sim3:
    """T_ij mapping frame-i points into frame j (unit scale)."""
    return scene.poses[view_j].inverse().compose(scene.poses[view_i])


def simulate_pair(
    scene: Scene,
    view_i: int,
    view_j: int,
    noise: NoiseModel,
    pass_id: int,
) -> PairMeasurement:
    """Simulate one forward pass over a co-visible view pair.

    Raises:
        InsufficientOverlap: fewer than 8 co-visible landmarks.
    """
    if not (0 <= view_i < scene.num_views and 0 <= view_j < scene.num_views):
        raise ValueError(f"views ({view_i}, {view_j}) outside scene")
    if scene.covisible(view_i, view_j).sum() < MIN_COVISIBLE:
        raise InsufficientOverlap(
            f"views {view_i} and {view_j} share fewer than {MIN_COVISIBLE} landmarks"
        )
    rng = np.random.default_rng((noise.seed, pass_id))
    pass_scale = math.exp(noise.sigma_scale * rng.standard_normal())

    true_rel = _true_relative(scene, view_i, view_j)
    baseline = float(np.linalg.norm(true_rel.translation))
    if baseline == 0.0:
        baseline = scene.baseline()

    rot_vec = noise.sigma_rot * rng.standard_normal(3)
    t_err = noise.sigma_trans * baseline * rng.standard_normal(3)
    rotation = so3_exp(rot_vec) @ true_rel.rotation
    translation = pass_scale * (true_rel.translation + t_err)

    err = float(np.linalg.norm(rot_vec)) + float(np.linalg.norm(t_err)) / baseline
    pose = RelativePose(Sim3(rotation, translation, 1.0), noise.confidence_from_error(err))

    pm_i = _local_pointmap(scene, view_i, pass_scale, noise, rng)
    pm_j = _local_pointmap(scene, view_j, pass_scale, noise, rng)
    return PairMeasurement(view_i, view_j, pm_i, pm_j, pose, pass_id)


def simulate_loop_measurement(
    scene: Scene,
    view_i: int,
    view_j: int,
    noise: NoiseModel,
    pass_id: int,
) -> PairMeasurement:
    """Forward pass for a loop candidate, tolerating non-overlapping views.

    Co-visible candidates behave like a normal pass. Remote pairs (the false
    positives a place-recognition stage can emit) get a grossly wrong
    relative pose, and the confidence model maps that large error to a score
    far below any sensible acceptance threshold.
    """
    if scene.covisible(view_i, view_j).sum() >= MIN_COVISIBLE:
        return simulate_pair(scene, view_i, view_j, noise, pass_id)

    rng = np.random.default_rng((noise.seed, pass_id))
    pass_scale = math.exp(noise.sigma_scale * rng.standard_normal())

    true_rel = _true_relative(scene, view_i, view_j)
    baseline = max(float(np.linalg.norm(true_rel.translation)), scene.baseline())

    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.6, math.pi - 0.3)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    t_err = direction * baseline * rng.uniform(1.0, 3.0)

    rotation = so3_exp(axis * angle) @ true_rel.rotation
    translation = pass_scale * (true_rel.translation + t_err)
    err = angle + float(np.linalg.norm(t_err)) / baseline
    pose = RelativePose(Sim3(rotation, translation, 1.0), noise.aliased_confidence_from_error(err))

    pm_i = _local_pointmap(scene, view_i, pass_scale, noise, rng)
    pm_j = _local_pointmap(scene, view_j, pass_scale, noise, rng)
    return PairMeasurement(view_i, view_j, pm_i, pm_j, pose, pass_id)


# --------------------------------------------------------------------------
# loop candidate proposal
# --------------------------------------------------------------------------


def propose_loops(
    scene: Scene,
    noise: NoiseModel,
    min_gap: int | None = None,
    prox_dist: float | None = None,
    max_angle: float = math.radians(75.0),
) -> list[LoopCandidate]:
    """Loop candidates: true revisits plus injected false positives.

    True loops are view pairs separated by at least ``min_gap`` indices whose
    camera centers lie within ``prox_dist`` and whose orientations differ by
    at most ``max_angle``. False candidates are drawn from remote pairs at
    ``loop_false_positive_rate`` per true loop. The ``is_true_loop`` labels
    exist for evaluation only and must never reach the backend.
    """
    pos = scene.positions()
    step = scene.baseline()
    if prox_dist is None:
        prox_dist = 4.0 * step
    if min_gap is None:
        min_gap = max(8, scene.num_views // 5)

    true_pairs: list[tuple[int, int]] = []
    for i in range(scene.num_views):
        for j in range(i + min_gap + 1, scene.num_views):
            if np.linalg.norm(pos[i] - pos[j]) > prox_dist:
                continue
            rel = scene.poses[i].rotation.T @ scene.poses[j].rotation
            cos_angle = (np.trace(rel) - 1.0) / 2.0
            if math.acos(min(1.0, max(-1.0, cos_angle))) <= max_angle:
                true_pairs.append((i, j))

    candidates = [LoopCandidate(i, j, True) for i, j in true_pairs]

    rng = np.random.default_rng((noise.seed, _STREAM_LOOPS))
    n_false = int(rng.binomial(len(true_pairs), noise.loop_false_positive_rate))
    if n_false > 0:
        d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)
        ii, jj = np.where(d > 4.0 * prox_dist)
        pool = [(int(a), int(b)) for a, b in zip(ii, jj) if b > a + min_gap]
        pool = [p for p in pool if p not in set(true_pairs)]
        if pool:
            idx = rng.choice(len(pool), size=min(n_false, len(pool)), replace=False)
            candidates.extend(LoopCandidate(pool[k][0], pool[k][1], False) for k in sorted(idx))
    return candidates


# --------------------------------------------------------------------------
# scenario files
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    """Parsed scenario file: scene shape, noise model and backend knobs."""

    preset: str = "circle"
    num_views: int = 40
    num_landmarks: int = 160
    radius: float = 5.0
    vis_range: float | None = None
    seed: int = 0
    noise: NoiseModel = field(default_factory=NoiseModel)
    neighbor_radius: int = 2
    tau_p: float = 0.75

    def build_scene(self) -> Scene:
        return generate_scene(
            self.preset,
            self.num_views,
            self.num_landmarks,
            self.seed,
            radius=self.radius,
            vis_range=self.vis_range,
        )

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=seed, noise=replace(self.noise, seed=seed))


def load_scenario(path: str) -> ScenarioConfig:
    """Read a YAML scenario file; missing keys fall back to defaults."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    scene = raw.get("scene", {})
    noise_raw = dict(raw.get("noise", {}))
    graph = raw.get("graph", {})
    seed = int(raw.get("seed", 0))
    noise_raw.setdefault("seed", seed)
    noise = NoiseModel(**noise_raw)
    return ScenarioConfig(
        preset=scene.get("preset", "circle"),
        num_views=int(scene.get("num_views", 40)),
        num_landmarks=int(scene.get("num_landmarks", 160)),
        radius=float(scene.get("radius", 5.0)),
        vis_range=scene.get("vis_range"),
        seed=seed,
        noise=noise,
        neighbor_radius=int(graph.get("neighbor_radius", 2)),
        tau_p=float(graph.get("tau_p", 0.75)),
    )


def save_scenario(path: str, cfg: ScenarioConfig) -> None:
    data = {
        "scene": {
            "preset": cfg.preset,
            "num_views": cfg.num_views,
            "num_landmarks": cfg.num_landmarks,
            "radius": cfg.radius,
        },
        "noise": {
            "sigma_rot": cfg.noise.sigma_rot,
            "sigma_trans": cfg.noise.sigma_trans,
            "sigma_scale": cfg.noise.sigma_scale,
            "sigma_point": cfg.noise.sigma_point,
            "loop_false_positive_rate": cfg.noise.loop_false_positive_rate,
            "confidence_beta": cfg.noise.confidence_beta,
        },
        "graph": {"neighbor_radius": cfg.neighbor_radius, "tau_p": cfg.tau_p},
        "seed": cfg.seed,
    }
    if cfg.vis_range is not None:
        data["scene"]["vis_range"] = cfg.vis_range
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(data, fh, sort_keys=False)
