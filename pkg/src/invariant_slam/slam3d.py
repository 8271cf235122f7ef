"""3D mono-robot SLAM: SO(3) pose, odometry increments, monocular
perspective-projection observations, invariant and standard EKF contracts.

Error-coordinate layout (dimension 6 + 3K):

    [e_R (3), e_pR (3), e_L1 (3), ..., e_LK (3)]

Invariant model: retraction is the SE_{1+K}(3) exponential acting on the
state; the heading columns of H vanish identically.  Standard model:
rotation error via the SO(3) group difference, additive positions.

A landmark behind the camera (body-frame depth below DEPTH_FLOOR) is not
visible: prediction raises NotVisibleSignal and the engine skips the entry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotVisibleSignal, UnknownSubjectError
from .filtering import FilterModel
from .liegroup import (
    Rotation3,
    TangentSEk,
    exp_sek3,
    exp_so3,
    log_so3,
    skew,
    so3_right_jacobian,
)

DEPTH_FLOOR = 1e-6


@dataclass(frozen=True)
class SlamState3:
    """Robot orientation and position plus an ordered landmark map."""

    rotation: Rotation3
    p_r: np.ndarray
    landmarks: dict

    def __post_init__(self):
        object.__setattr__(self, "p_r", np.asarray(self.p_r, dtype=float).reshape(3))
        object.__setattr__(self, "landmarks", dict(self.landmarks))

    @property
    def landmark_ids(self) -> tuple:
        return tuple(self.landmarks.keys())

    def landmark(self, lid) -> np.ndarray:
        try:
            return self.landmarks[lid]
        except KeyError:
            raise UnknownSubjectError(lid) from None

    def with_landmark(self, lid, position: np.ndarray) -> "SlamState3":
        if lid in self.landmarks:
            raise ValueError(f"duplicate landmark id {lid!r}")
        new = dict(self.landmarks)
        new[lid] = np.asarray(position, dtype=float).reshape(3)
        return SlamState3(self.rotation, self.p_r, new)


@dataclass(frozen=True)
class OdometryInput3:
    """Rotation increment (rotation vector) and body-frame translation."""

    omega: np.ndarray
    p_bar: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float).reshape(3))
        object.__setattr__(self, "p_bar", np.asarray(self.p_bar, dtype=float).reshape(3))


def dynamics3(x: SlamState3, u: OdometryInput3, w: np.ndarray) -> SlamState3:
    """R' = R exp(omega + w_w); p' = p + R (p_bar + w_p); landmarks fixed."""
    w = np.asarray(w, dtype=float).reshape(6)
    rot = x.rotation.compose(exp_so3(u.omega + w[:3])).renormalized()
    p_r = x.p_r + x.rotation.matrix @ (u.p_bar + w[3:])
    return SlamState3(rot, p_r, x.landmarks)


def observe3(x: SlamState3, lid) -> np.ndarray:
    """Perspective projection (q1/q3, q2/q3) of the body-frame landmark."""
    q = x.rotation.matrix.T @ (x.landmark(lid) - x.p_r)
    if q[2] < DEPTH_FLOOR:
        raise NotVisibleSignal(lid)
    return np.array([q[0] / q[2], q[1] / q[2]])


def _delta_h(q: np.ndarray) -> np.ndarray:
    """Jacobian of the projection at the body-frame point q (depth-scaled)."""
    z = q[2]
    return np.array([
        [1.0 / z, 0.0, -q[0] / (z * z)],
        [0.0, 1.0 / z, -q[1] / (z * z)],
    ])


def apply_se3(alpha_rot: Rotation3, alpha_p: np.ndarray, x: SlamState3) -> SlamState3:
    """Global frame change by (R_a, p_a) on every global-frame quantity."""
    r_a = alpha_rot.matrix
    p_a = np.asarray(alpha_p, dtype=float).reshape(3)
    return SlamState3(
        alpha_rot.compose(x.rotation),
        r_a @ x.p_r + p_a,
        {k: r_a @ v + p_a for k, v in x.landmarks.items()},
    )


class _Slam3Base(FilterModel):

    def error_dim(self, x: SlamState3) -> int:
        return 6 + 3 * len(x.landmarks)

    def dynamics(self, x, u, w):
        return dynamics3(x, u, w)

    def has_subject(self, x, key) -> bool:
        return key in x.landmarks

    def predict(self, x, key) -> np.ndarray:
        return observe3(x, key)

    def place_subject(self, x, key, measurement) -> SlamState3:
        # A projective measurement alone does not fix depth; landmark
        # initialization for this model takes (u, v, depth) triples.
        z = np.asarray(measurement, dtype=float)
        if z.shape != (3,):
            raise ValueError("3D landmark initialization needs (u, v, depth)")
        point_body = np.array([z[0] * z[2], z[1] * z[2], z[2]])
        return x.with_landmark(key, x.p_r + x.rotation.matrix @ point_body)

    def robot_position(self, x: SlamState3) -> np.ndarray:
        return x.p_r

    def pose_dim(self) -> int:
        return 6

    def pose_slice(self) -> slice:
        return slice(0, 6)

    def pose_error(self, x_true: SlamState3, xhat: SlamState3) -> np.ndarray:
        """Pose block of the error; landmark registries need not match."""
        bare_true = SlamState3(x_true.rotation, x_true.p_r, {})
        bare_hat = SlamState3(xhat.rotation, xhat.p_r, {})
        return self.error(bare_true, bare_hat)

    def _landmark_offset(self, x: SlamState3, key) -> int:
        return 6 + 3 * list(x.landmarks.keys()).index(key)


class InvariantSlam3(_Slam3Base):
    """Invariant-error EKF model on SO(3) x R^{3(K+1)}."""

    name = "invariant3"

    def retract(self, x: SlamState3, e: np.ndarray) -> SlamState3:
        e = np.asarray(e, dtype=float)
        if e.shape != (self.error_dim(x),):
            raise ValueError(f"expected error of dim {self.error_dim(x)}, got {e.shape}")
        blocks = [e[3:6]] + [e[6 + 3 * i:9 + 3 * i] for i in range(len(x.landmarks))]
        g = exp_sek3(TangentSEk.from_parts(e[:3], blocks))
        d_r = g.rotation_matrix
        landmarks = {
            k: d_r @ v + g.delta_blocks[1 + i]
            for i, (k, v) in enumerate(x.landmarks.items())
        }
        rot = Rotation3(d_r @ x.rotation.matrix).renormalized()
        return SlamState3(rot, d_r @ x.p_r + g.delta_blocks[0], landmarks)

    def error(self, x: SlamState3, xhat: SlamState3) -> np.ndarray:
        if x.landmark_ids != xhat.landmark_ids:
            raise ValueError("landmark registries differ")
        e = np.empty(self.error_dim(x))
        e[:3] = log_so3(Rotation3(x.rotation.matrix @ xhat.rotation.matrix.T))
        r_rel = xhat.rotation.matrix @ x.rotation.matrix.T
        e[3:6] = r_rel @ x.p_r - xhat.p_r
        for i, k in enumerate(x.landmark_ids):
            e[6 + 3 * i:9 + 3 * i] = r_rel @ x.landmarks[k] - xhat.landmarks[k]
        return e

    def process_jacobians(self, x: SlamState3, u: OdometryInput3) -> tuple:
        d = self.error_dim(x)
        f = np.eye(d)
        g = np.zeros((d, 6))
        # Rotation-noise block R exp(omega) J_r(omega); positions couple
        # through their skew at the propagated estimate.
        b = x.rotation.matrix @ exp_so3(u.omega).matrix @ so3_right_jacobian(u.omega)
        p_prop = x.p_r + x.rotation.matrix @ u.p_bar
        g[0:3, 0:3] = b
        g[3:6, 0:3] = skew(p_prop) @ b
        g[3:6, 3:6] = x.rotation.matrix
        for i, k in enumerate(x.landmark_ids):
            g[6 + 3 * i:9 + 3 * i, 0:3] = skew(x.landmarks[k]) @ b
        return f, g

    def observation_rows(self, x: SlamState3, key) -> tuple:
        q = x.rotation.matrix.T @ (x.landmark(key) - x.p_r)
        if q[2] < DEPTH_FLOOR:
            raise NotVisibleSignal(key)
        dh = _delta_h(q)
        m = np.zeros((3, self.error_dim(x)))
        rt = x.rotation.matrix.T
        m[:, 3:6] = -rt
        off = self._landmark_offset(x, key)
        m[:, off:off + 3] = rt
        return dh @ m, np.eye(2)


class StandardSlam3(_Slam3Base):
    """Standard EKF model: SO(3) group difference on rotation, additive positions."""

    name = "standard3"

    def retract(self, x: SlamState3, e: np.ndarray) -> SlamState3:
        e = np.asarray(e, dtype=float)
        if e.shape != (self.error_dim(x),):
            raise ValueError(f"expected error of dim {self.error_dim(x)}, got {e.shape}")
        rot = Rotation3(exp_so3(e[:3]).matrix @ x.rotation.matrix).renormalized()
        landmarks = {
            k: v + e[6 + 3 * i:9 + 3 * i]
            for i, (k, v) in enumerate(x.landmarks.items())
        }
        return SlamState3(rot, x.p_r + e[3:6], landmarks)

    def error(self, x: SlamState3, xhat: SlamState3) -> np.ndarray:
        if x.landmark_ids != xhat.landmark_ids:
            raise ValueError("landmark registries differ")
        e = np.empty(self.error_dim(x))
        e[:3] = log_so3(Rotation3(x.rotation.matrix @ xhat.rotation.matrix.T))
        e[3:6] = x.p_r - xhat.p_r
        for i, k in enumerate(x.landmark_ids):
            e[6 + 3 * i:9 + 3 * i] = x.landmarks[k] - xhat.landmarks[k]
        return e

    def process_jacobians(self, x: SlamState3, u: OdometryInput3) -> tuple:
        d = self.error_dim(x)
        f = np.eye(d)
        f[3:6, 0:3] = -skew(x.rotation.matrix @ u.p_bar)
        g = np.zeros((d, 6))
        g[0:3, 0:3] = x.rotation.matrix @ exp_so3(u.omega).matrix @ so3_right_jacobian(u.omega)
        g[3:6, 3:6] = x.rotation.matrix
        return f, g

    def observation_rows(self, x: SlamState3, key) -> tuple:
        p_l = x.landmark(key)
        q = x.rotation.matrix.T @ (p_l - x.p_r)
        if q[2] < DEPTH_FLOOR:
            raise NotVisibleSignal(key)
        dh = _delta_h(q)
        m = np.zeros((3, self.error_dim(x)))
        rt = x.rotation.matrix.T
        m[:, 0:3] = rt @ skew(p_l - x.p_r)
        m[:, 3:6] = -rt
        off = self._landmark_offset(x, key)
        m[:, off:off + 3] = rt
        return dh @ m, np.eye(2)
