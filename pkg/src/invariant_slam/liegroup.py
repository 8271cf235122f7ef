"""Matrix Lie group primitives for planar and spatial state estimation.

Covers SO(2), SO(3) and the extended special Euclidean groups SE_{1+K}(2),
SE_{1+K}(3) that pack one rotation together with K+1 translation blocks
(robot position plus landmarks).  Their exponential maps serve as the
retractions of the invariant-error filters.

Conventions:
    * 2D rotations are canonically angles in (-pi, pi]; matrices on demand.
    * 3D rotations are 3x3 orthonormal matrices with det +1.
    * skew(w) for scalar w is w*J with J = [[0,-1],[1,0]]; for a 3-vector it
      is the usual cross-product matrix.
    * Small-angle branches use Taylor expansions below ANGLE_EPS to avoid
      catastrophic cancellation; the switch is continuous to ~1e-12.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Small-angle threshold for the SE_k exponential coefficients.
ANGLE_EPS = 1e-4
# Threshold below which exp_so3/log_so3 switch to series form.
SO3_EPS = 1e-6

J2 = np.array([[0.0, -1.0], [1.0, 0.0]])


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


def wrap_angles(theta: np.ndarray) -> np.ndarray:
    """Elementwise wrap to (-pi, pi]."""
    out = np.mod(np.asarray(theta, dtype=float) + np.pi, 2.0 * np.pi)
    out[out <= 0.0] += 2.0 * np.pi
    return out - np.pi


def rot2(theta: float) -> np.ndarray:
    """2x2 rotation matrix of the given angle."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def skew(omega) -> np.ndarray:
    """Skew matrix: scalar -> omega*J (2D), 3-vector -> cross-product matrix."""
    arr = np.atleast_1d(np.asarray(omega, dtype=float))
    if arr.shape == (1,):
        return arr[0] * J2
    if arr.shape == (3,):
        x, y, z = arr
        return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    raise ValueError(f"skew expects a scalar or 3-vector, got shape {arr.shape}")


@dataclass(frozen=True)
class Rotation2:
    """Planar rotation, canonically stored as a wrapped angle."""

    theta: float

    def __post_init__(self):
        if not math.isfinite(self.theta):
            raise ValueError("non-finite rotation angle")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def matrix(self) -> np.ndarray:
        return rot2(self.theta)

    def compose(self, other: "Rotation2") -> "Rotation2":
        return Rotation2(self.theta + other.theta)

    def inverse(self) -> "Rotation2":
        return Rotation2(-self.theta)

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(v, dtype=float)


@dataclass(frozen=True)
class Rotation3:
    """Spatial rotation stored as a 3x3 orthonormal matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"Rotation3 expects a 3x3 matrix, got {m.shape}")
        object.__setattr__(self, "matrix", m)

    def compose(self, other: "Rotation3") -> "Rotation3":
        return Rotation3(self.matrix @ other.matrix)

    def inverse(self) -> "Rotation3":
        return Rotation3(self.matrix.T.copy())

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(v, dtype=float)

    def renormalized(self) -> "Rotation3":
        """Project back onto SO(3); call after long products."""
        u, _, vt = np.linalg.svd(self.matrix)
        d = np.sign(np.linalg.det(u @ vt))
        return Rotation3(u @ np.diag([1.0, 1.0, d]) @ vt)


@dataclass(frozen=True)
class TangentSEk:
    """Tangent coordinates: rotation part plus K+1 translation blocks.

    Block 0 is the robot position, blocks 1..K the landmarks.  ``e_rot`` is a
    scalar angle in 2D and a 3-vector in 3D; each block matches the ambient
    dimension.
    """

    e_rot: np.ndarray
    e_blocks: tuple

    @classmethod
    def from_parts(cls, e_rot, blocks) -> "TangentSEk":
        rot = np.atleast_1d(np.asarray(e_rot, dtype=float))
        if rot.shape not in ((1,), (3,)):
            raise ValueError(f"rotation part must be scalar or 3-vector, got {rot.shape}")
        dim = 2 if rot.shape == (1,) else 3
        blk = tuple(np.asarray(b, dtype=float) for b in blocks)
        for b in blk:
            if b.shape != (dim,):
                raise ValueError(f"block of shape {b.shape} does not match ambient dim {dim}")
        return cls(rot, blk)

    @property
    def ambient_dim(self) -> int:
        return 2 if self.e_rot.shape == (1,) else 3


@dataclass(frozen=True)
class GroupElementSEk:
    """Element of SE_{1+K}(n): a rotation plus K+1 translation vectors."""

    delta_rot: object  # Rotation2 | Rotation3
    delta_blocks: tuple

    @property
    def rotation_matrix(self) -> np.ndarray:
        return self.delta_rot.matrix


def exp_so2(theta: float) -> Rotation2:
    """Exponential map of SO(2)."""
    if not math.isfinite(theta):
        raise ValueError("non-finite input to exp_so2")
    return Rotation2(theta)


def _so3_coeffs(angle: float) -> tuple:
    """Rodrigues coefficients (sin t / t, (1 - cos t) / t^2) with series fallback."""
    if angle < SO3_EPS:
        a2 = angle * angle
        return 1.0 - a2 / 6.0, 0.5 - a2 / 24.0
    return math.sin(angle) / angle, (1.0 - math.cos(angle)) / (angle * angle)


def exp_so3(omega: np.ndarray) -> Rotation3:
    """Exponential map of SO(3) via the Rodrigues formula."""
    w = np.asarray(omega, dtype=float).reshape(3)
    if not np.all(np.isfinite(w)):
        raise ValueError("non-finite input to exp_so3")
    angle = float(np.linalg.norm(w))
    a, b = _so3_coeffs(angle)
    k = skew(w)
    return Rotation3(np.eye(3) + a * k + b * (k @ k))


def log_so3(rotation: Rotation3, guard: float = 1e-6) -> np.ndarray:
    """Closed-form SO(3) logarithm: angle from the trace, axis from R - R^T.

    Raises ValueError when the rotation angle is within ``guard`` of pi,
    where the antisymmetric part no longer determines the axis reliably.
    """
    r = rotation.matrix
    cos_angle = min(1.0, max(-1.0, 0.5 * (np.trace(r) - 1.0)))
    angle = math.acos(cos_angle)
    if math.pi - angle < guard:
        raise ValueError("rotation angle too close to pi for a stable logarithm")
    vee = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if angle < SO3_EPS:
        # vee = sin(angle)*axis; sin t / t ~ 1 - t^2/6
        return vee * (1.0 + angle * angle / 6.0)
    return vee * (angle / math.sin(angle))


def so3_right_jacobian(omega: np.ndarray) -> np.ndarray:
    """Right Jacobian of exp_so3: exp(w + d) = exp(w) exp(J_r(w) d) + O(|d|^2)."""
    w = np.asarray(omega, dtype=float).reshape(3)
    angle = float(np.linalg.norm(w))
    k = skew(w)
    if angle < ANGLE_EPS:
        a2 = angle * angle
        c2 = 0.5 - a2 / 24.0
        c3 = 1.0 / 6.0 - a2 / 120.0
    else:
        c2 = (1.0 - math.cos(angle)) / (angle * angle)
        c3 = (angle - math.sin(angle)) / (angle ** 3)
    return np.eye(3) - c2 * k + c3 * (k @ k)


def _se2_translation_matrix(theta: float) -> np.ndarray:
    """A(theta) = [[sin t/t, -(1-cos t)/t], [(1-cos t)/t, sin t/t]]."""
    if abs(theta) < ANGLE_EPS:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0
        b = theta * (0.5 - t2 / 24.0)
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / theta
    return np.array([[a, -b], [b, a]])


def _se3_translation_matrix(e_rot: np.ndarray) -> np.ndarray:
    """V(w) = I + c2 (w)_x + c3 (w)_x^2 applied to each translation block."""
    angle = float(np.linalg.norm(e_rot))
    k = skew(e_rot)
    if angle < ANGLE_EPS:
        a2 = angle * angle
        c2 = 0.5 - a2 / 24.0
        c3 = 1.0 / 6.0 - a2 / 120.0
    else:
        c2 = (1.0 - math.cos(angle)) / (angle * angle)
        c3 = (angle - math.sin(angle)) / (angle ** 3)
    return np.eye(3) + c2 * k + c3 * (k @ k)


def exp_sek2(e: TangentSEk) -> GroupElementSEk:
    """Exponential map of SE_{1+K}(2)."""
    if e.ambient_dim != 2:
        raise ValueError("exp_sek2 expects a 2D tangent element")
    theta = float(e.e_rot[0])
    a = _se2_translation_matrix(theta)
    blocks = tuple(a @ b for b in e.e_blocks)
    return GroupElementSEk(exp_so2(theta), blocks)


def exp_sek3(e: TangentSEk) -> GroupElementSEk:
    """Exponential map of SE_{1+K}(3)."""
    if e.ambient_dim != 3:
        raise ValueError("exp_sek3 expects a 3D tangent element")
    v = _se3_translation_matrix(e.e_rot)
    blocks = tuple(v @ b for b in e.e_blocks)
    return GroupElementSEk(exp_so3(e.e_rot), blocks)


def embed_sek(e: TangentSEk) -> np.ndarray:
    """Embed tangent coordinates as the (n+1+K)x(n+1+K) algebra matrix.

    Top-left is skew(e_rot); each translation block is one extra column.
    Useful as the input to a brute-force matrix exponential.
    """
    n = e.ambient_dim
    k1 = len(e.e_blocks)
    size = n + k1
    s = np.zeros((size, size))
    s[:n, :n] = skew(e.e_rot if n == 3 else float(e.e_rot[0]))
    for i, b in enumerate(e.e_blocks):
        s[:n, n + i] = b
    return s
