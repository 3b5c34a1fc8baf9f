"""Sim(3) group operations and the sim(3) exponential/logarithm maps.

Conventions used throughout this package:

- A ``Sim3`` with rotation R, translation t and scale s acts on a point as
  ``x -> s * R @ x + t``.
- Tangent vectors are ordered ``(rho, phi, sigma)``: translational part,
  rotation vector, log-scale. Angles are radians everywhere.
- Composition ``a @ b`` acts as ``a(b(x))``.

Rotations are stored as full 3x3 matrices; quaternions appear only at the
trajectory-file boundary (see :mod:`sim3slam.evaluation`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RotationNearPi",
    "Sim3",
    "Tangent7",
    "adjoint",
    "exp_sim3",
    "is_rotation",
    "little_adjoint",
    "log_sim3",
    "random_rotation",
    "so3_exp",
    "so3_hat",
    "so3_log",
]

# Below these magnitudes the coefficient functions of exp/log switch to
# truncated Taylor series; chosen so both branches agree to ~1e-12 in their
# contribution to t (the naive quotients lose far more near the origin).
_SMALL_ANGLE = 1e-4
_SMALL_SIGMA = 1e-3

_PI_MARGIN = 1e-6


class RotationNearPi(ValueError):
    """Rotation angle too close to pi for a well-conditioned logarithm."""


def so3_hat(phi: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix such that ``so3_hat(a) @ b == cross(a, b)``."""
    x, y, z = float(phi[0]), float(phi[1]), float(phi[2])
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(phi: np.ndarray) -> np.ndarray:
    """Rodrigues rotation from a rotation vector (radians)."""
    x, y, z = float(phi[0]), float(phi[1]), float(phi[2])
    theta = math.sqrt(x * x + y * y + z * z)
    if theta == 0.0:
        return np.eye(3)
    # sin(t)/t is cancellation-free; (1-cos t)/t^2 via the half-angle identity.
    a = math.sin(theta) / theta
    half = math.sin(0.5 * theta) / theta
    b = 2.0 * half * half
    ax, ay, az = a * x, a * y, a * z
    bxy, bxz, byz = b * x * y, b * x * z, b * y * z
    bxx, byy, bzz = b * x * x, b * y * y, b * z * z
    return np.array(
        [
            [1.0 - byy - bzz, bxy - az, bxz + ay],
            [bxy + az, 1.0 - bxx - bzz, byz - ax],
            [bxz - ay, byz + ax, 1.0 - bxx - byy],
        ]
    )


def so3_log(rotation: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix.

    Raises:
        RotationNearPi: if the rotation angle exceeds ``pi - 1e-6``; the
            logarithm is ill-conditioned there and callers must reject
            such inputs instead.
    """
    r = np.asarray(rotation, dtype=float)
    # w = sin(theta) * axis
    wx = 0.5 * (float(r[2, 1]) - float(r[1, 2]))
    wy = 0.5 * (float(r[0, 2]) - float(r[2, 0]))
    wz = 0.5 * (float(r[1, 0]) - float(r[0, 1]))
    s = math.sqrt(wx * wx + wy * wy + wz * wz)
    c = 0.5 * (float(r[0, 0]) + float(r[1, 1]) + float(r[2, 2]) - 1.0)
    c = min(1.0, max(-1.0, c))
    theta = math.atan2(s, c)
    if theta > math.pi - _PI_MARGIN:
        raise RotationNearPi(f"rotation angle {theta:.9f} within 1e-6 of pi")
    if theta < 1e-10:
        f = 1.0 + theta * theta / 6.0
    else:
        f = theta / s
    return np.array([f * wx, f * wy, f * wz])


def is_rotation(m: np.ndarray, tol: float = 1e-9) -> bool:
    """True if m is orthogonal with det +1 within tol (Frobenius)."""
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    err = np.linalg.norm(m.T @ m - np.eye(3))
    return err <= tol and abs(np.linalg.det(m) - 1.0) <= tol


def random_rotation(rng: np.random.Generator, max_angle: float = math.pi - 0.1) -> np.ndarray:
    """Uniform-axis random rotation with angle uniform in [0, max_angle]."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0.0, max_angle))


@dataclass(frozen=True)
class Tangent7:
    """Element of the Lie algebra sim(3), split as (rho, phi, sigma)."""

    rho: np.ndarray
    phi: np.ndarray
    sigma: float

    def __post_init__(self) -> None:
        rho = np.asarray(self.rho, dtype=float).reshape(3)
        phi = np.asarray(self.phi, dtype=float).reshape(3)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def vector(self) -> np.ndarray:
        """The 7-vector [rho, phi, sigma]."""
        return np.concatenate([self.rho, self.phi, [self.sigma]])

    @staticmethod
    def from_vector(v: np.ndarray) -> "Tangent7":
        v = np.asarray(v, dtype=float).reshape(7)
        return Tangent7(v[0:3], v[3:6], v[6])

    @staticmethod
    def zero() -> "Tangent7":
        return Tangent7(np.zeros(3), np.zeros(3), 0.0)


@dataclass(frozen=True)
class Sim3:
    """Similarity transform: rotation, translation and positive scale."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def __post_init__(self) -> None:
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        s = float(self.scale)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t)) and math.isfinite(s)):
            raise ValueError("Sim3 components must be finite")
        if s <= 0.0:
            raise ValueError(f"Sim3 scale must be positive, got {s}")
        # Loose orthogonality guard; exact tolerances are asserted in tests.
        if abs(r[0] @ r[0] - 1.0) > 1e-6 or abs(r[0] @ r[1]) > 1e-6:
            if not is_rotation(r, tol=1e-6):
                raise ValueError("Sim3 rotation is not orthonormal")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "scale", s)

    @staticmethod
    def identity() -> "Sim3":
        return Sim3(np.eye(3), np.zeros(3), 1.0)

    @staticmethod
    def from_scale(s: float) -> "Sim3":
        """Pure-scale element (R = I, t = 0)."""
        return Sim3(np.eye(3), np.zeros(3), s)

    def compose(self, other: "Sim3") -> "Sim3":
        """Group product; the result acts as self(other(x))."""
        return _unchecked_sim3(
            self.rotation @ other.rotation,
            self.scale * (self.rotation @ other.translation) + self.translation,
            self.scale * other.scale,
        )

    def __matmul__(self, other: "Sim3") -> "Sim3":
        return self.compose(other)

    def inverse(self) -> "Sim3":
        inv_s = 1.0 / self.scale
        rt = np.ascontiguousarray(self.rotation.T)
        return _unchecked_sim3(rt, -inv_s * (rt @ self.translation), inv_s)

    def act(self, points: np.ndarray) -> np.ndarray:
        """Apply ``s * R @ p + t`` to one point (3,) or a batch (N, 3)."""
        p = np.asarray(points, dtype=float)
        return self.scale * (p @ self.rotation.T) + self.translation

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 representation [[s R, t], [0, 1]]."""
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m

    def is_close(self, other: "Sim3", tol: float = 1e-9) -> bool:
        return (
            np.linalg.norm(self.rotation - other.rotation) <= tol
            and np.linalg.norm(self.translation - other.translation) <= tol
            and abs(self.scale - other.scale) <= tol
        )


def _unchecked_sim3(rotation: np.ndarray, translation: np.ndarray, scale: float) -> Sim3:
    """Construction fast path for outputs that are valid by construction.

    compose/inverse/exp preserve the invariants of their (validated) inputs,
    so re-running the constructor checks there would only add overhead in the
    optimizer's hot loop.
    """
    g = object.__new__(Sim3)
    object.__setattr__(g, "rotation", rotation)
    object.__setattr__(g, "translation", translation)
    object.__setattr__(g, "scale", scale)
    return g


def _w_coefficients(theta: float, sigma: float) -> tuple[float, float, float]:
    """Coefficients (A, B, C) of W = A*hat + B*hat^2 + C*I.

    W is the closed form of the integral of exp(u*sigma)*exp(u*hat(phi)) for
    u in [0, 1]; it couples rho, phi and sigma in the Sim(3) exponential.
    """
    if sigma == 0.0:
        c = 1.0
    else:
        c = math.expm1(sigma) / sigma
    s = math.exp(sigma)

    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        if abs(sigma) < _SMALL_SIGMA:
            # Double Taylor series about theta = sigma = 0.
            a = 0.5 + sigma / 3.0 + sigma * sigma / 8.0 + sigma**3 / 30.0
            b = 1.0 / 6.0 + sigma / 8.0 + sigma * sigma / 20.0
            a -= t2 / 24.0
            b -= t2 / 120.0
        else:
            # theta^2 terms are below 1e-8 here and contribute < 1e-12 to t.
            s2 = sigma * sigma
            a = ((sigma - 1.0) * s + 1.0) / s2
            b = (s * (0.5 * s2 - sigma + 1.0) - 1.0) / (s2 * sigma)
    else:
        sin_t = math.sin(theta)
        cos_t = math.cos(theta)
        t2 = theta * theta
        denom = t2 + sigma * sigma
        a_num = s * sin_t * sigma + (1.0 - s * cos_t) * theta
        a = a_num / (theta * denom)
        b = (c - ((s * cos_t - 1.0) * sigma + s * sin_t * theta) / denom) / t2
    return a, b, c


def _sim3_w(phi: np.ndarray, sigma: float) -> np.ndarray:
    x, y, z = float(phi[0]), float(phi[1]), float(phi[2])
    theta = math.sqrt(x * x + y * y + z * z)
    a, b, c = _w_coefficients(theta, sigma)
    ax, ay, az = a * x, a * y, a * z
    bxy, bxz, byz = b * x * y, b * x * z, b * y * z
    bxx, byy, bzz = b * x * x, b * y * y, b * z * z
    return np.array(
        [
            [c - byy - bzz, bxy - az, bxz + ay],
            [bxy + az, c - bxx - bzz, byz - ax],
            [bxz - ay, byz + ax, c - bxx - byy],
        ]
    )


def _solve3(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Solve a well-conditioned 3x3 system by cofactor expansion."""
    a, b, c = m[0]
    d, e, f = m[1]
    g, h, i = m[2]
    co = np.array(
        [
            [e * i - f * h, c * h - b * i, b * f - c * e],
            [f * g - d * i, a * i - c * g, c * d - a * f],
            [d * h - e * g, b * g - a * h, a * e - b * d],
        ]
    )
    det = a * co[0, 0] + b * co[1, 0] + c * co[2, 0]
    return (co @ v) / det


def exp_sim3(xi: Tangent7 | np.ndarray) -> Sim3:
    """Exponential map sim(3) -> Sim(3); exp(0) is the identity."""
    if isinstance(xi, Tangent7):
        rho, phi, sigma = xi.rho, xi.phi, xi.sigma
    else:
        v = np.asarray(xi, dtype=float).reshape(7)
        rho, phi, sigma = v[0:3], v[3:6], float(v[6])
    if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(phi)) and math.isfinite(sigma)):
        raise ValueError("tangent vector must be finite")
    rotation = so3_exp(phi)
    translation = _sim3_w(phi, sigma) @ rho
    return _unchecked_sim3(rotation, translation, math.exp(sigma))


def log_sim3(g: Sim3) -> Tangent7:
    """Logarithm map Sim(3) -> sim(3); inverse of :func:`exp_sim3`.

    Raises:
        RotationNearPi: when the rotation angle is within 1e-6 of pi.
    """
    phi = so3_log(g.rotation)
    sigma = math.log(g.scale)
    rho = _solve3(_sim3_w(phi, sigma), g.translation)
    return Tangent7(rho, phi, sigma)


def adjoint(g: Sim3) -> np.ndarray:
    """7x7 adjoint: Adj(g) xi = log(g exp(xi) g^-1), block order (rho, phi, sigma)."""
    s, r, t = g.scale, g.rotation, g.translation
    adj = np.zeros((7, 7))
    adj[0:3, 0:3] = s * r
    adj[0:3, 3:6] = so3_hat(t) @ r
    adj[0:3, 6] = -t
    adj[3:6, 3:6] = r
    adj[6, 6] = 1.0
    return adj


def little_adjoint(xi: Tangent7 | np.ndarray) -> np.ndarray:
    """7x7 matrix of ad(xi) = [xi, .] in the (rho, phi, sigma) ordering."""
    if not isinstance(xi, Tangent7):
        xi = Tangent7.from_vector(np.asarray(xi, dtype=float))
    ad = np.zeros((7, 7))
    ad[0:3, 0:3] = so3_hat(xi.phi) + xi.sigma * np.eye(3)
    ad[0:3, 3:6] = so3_hat(xi.rho)
    ad[0:3, 6] = -xi.rho
    ad[3:6, 3:6] = so3_hat(xi.phi)
    return ad
