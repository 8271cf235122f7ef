"""2D mono-robot wheeled SLAM: odometry dynamics, range-bearing observations,
and the invariant-error and standard-error EKF model contracts.

State: robot heading theta, robot position p_R, ordered landmark map.
Error-coordinate layout (dimension 3 + 2K):

    [e_theta, e_pR (2), e_L1 (2), ..., e_LK (2)]

Both models define their error coordinates through their retraction; the
flattened error is the first-order inverse of the retraction, so that
flatten(error(retract(x, e), x)) = e + O(|e|^2).

Invariant model:
    retraction  theta' = theta + e_theta; p_i' = dR p_i + A(e_theta) e_i
                (the exponential of SE_{1+K}(2) acting on the state)
    error       e_theta = wrap(theta - theta_hat)
                e_i = R(theta_hat - theta) p_i - p_hat_i
    F = I exactly; the H rows have a zero heading column.

Standard model:
    retraction  additive; error heading wrap(theta - theta_hat), blocks p - p_hat.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, UnknownSubjectError
from .filtering import FilterModel
from .liegroup import J2, TangentSEk, exp_sek2, rot2, wrap_angle

MIN_RANGE = 1e-9


@dataclass(frozen=True)
class SlamState2:
    """Robot pose plus an ordered landmark map (id -> 2-vector)."""

    theta: float
    p_r: np.ndarray
    landmarks: dict

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))
        object.__setattr__(self, "p_r", np.asarray(self.p_r, dtype=float).reshape(2))
        object.__setattr__(self, "landmarks", dict(self.landmarks))

    @property
    def rotation(self) -> np.ndarray:
        return rot2(self.theta)

    @property
    def landmark_ids(self) -> tuple:
        return tuple(self.landmarks.keys())

    def landmark(self, lid) -> np.ndarray:
        try:
            return self.landmarks[lid]
        except KeyError:
            raise UnknownSubjectError(lid) from None

    def with_landmark(self, lid, position: np.ndarray) -> "SlamState2":
        if lid in self.landmarks:
            raise ValueError(f"duplicate landmark id {lid!r}")
        new = dict(self.landmarks)
        new[lid] = np.asarray(position, dtype=float).reshape(2)
        return SlamState2(self.theta, self.p_r, new)


@dataclass(frozen=True)
class OdometryInput2:
    """Heading increment (rad) and body-frame translation increment (m)."""

    omega: float
    p_bar: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p_bar", np.asarray(self.p_bar, dtype=float).reshape(2))
        if not (math.isfinite(self.omega) and np.all(np.isfinite(self.p_bar))):
            raise ValueError("non-finite odometry input")


def dynamics2(x: SlamState2, u: OdometryInput2, w: np.ndarray) -> SlamState2:
    """theta += omega + w_w; p_R += R(theta)(p_bar + w_p); landmarks fixed."""
    w = np.asarray(w, dtype=float).reshape(3)
    theta = x.theta + u.omega + w[0]
    p_r = x.p_r + x.rotation @ (u.p_bar + w[1:])
    return SlamState2(theta, p_r, x.landmarks)


def observe2(x: SlamState2, lid) -> np.ndarray:
    """Range-bearing of a landmark in the robot frame: (|q|, atan2(q2, q1))."""
    q = x.rotation.T @ (x.landmark(lid) - x.p_r)
    r = float(np.linalg.norm(q))
    if r < MIN_RANGE:
        raise DegenerateGeometryError(f"landmark {lid!r} coincides with the robot")
    return np.array([r, math.atan2(q[1], q[0])])


def range_bearing_to_point(measurement: np.ndarray) -> np.ndarray:
    """Body-frame point for a (range, bearing) pair."""
    r, b = float(measurement[0]), float(measurement[1])
    return np.array([r * math.cos(b), r * math.sin(b)])


def _delta_h(q: np.ndarray) -> np.ndarray:
    """Jacobian of (range, bearing) w.r.t. the body-frame point q."""
    r2 = float(q @ q)
    r = math.sqrt(r2)
    if r < MIN_RANGE:
        raise DegenerateGeometryError("zero-range observation geometry")
    return np.vstack([q / r, (J2 @ q) / r2])


def apply_se2(alpha_theta: float, alpha_p: np.ndarray, x: SlamState2) -> SlamState2:
    """Global frame change: rotate and translate every global-frame quantity."""
    r_a = rot2(alpha_theta)
    p_a = np.asarray(alpha_p, dtype=float).reshape(2)
    return SlamState2(
        x.theta + alpha_theta,
        r_a @ x.p_r + p_a,
        {k: r_a @ v + p_a for k, v in x.landmarks.items()},
    )


class _Slam2Base(FilterModel):
    """Shared plumbing for the two 2D model contracts."""

    def error_dim(self, x: SlamState2) -> int:
        return 3 + 2 * len(x.landmarks)

    def dynamics(self, x, u, w):
        return dynamics2(x, u, w)

    def has_subject(self, x, key) -> bool:
        return key in x.landmarks

    def predict(self, x, key) -> np.ndarray:
        return observe2(x, key)

    def wrap_residual(self, key, residual: np.ndarray) -> np.ndarray:
        out = residual.copy()
        out[1] = wrap_angle(out[1])
        return out

    def place_subject(self, x, key, measurement) -> SlamState2:
        point = x.p_r + x.rotation @ range_bearing_to_point(measurement)
        return x.with_landmark(key, point)

    def robot_position(self, x: SlamState2) -> np.ndarray:
        return x.p_r

    def pose_dim(self) -> int:
        return 3

    def pose_slice(self) -> slice:
        return slice(0, 3)

    def pose_error(self, x_true: SlamState2, xhat: SlamState2) -> np.ndarray:
        """Pose block of the error; landmark registries need not match."""
        bare_true = SlamState2(x_true.theta, x_true.p_r, {})
        bare_hat = SlamState2(xhat.theta, xhat.p_r, {})
        return self.error(bare_true, bare_hat)

    def _landmark_offset(self, x: SlamState2, key) -> int:
        return 3 + 2 * list(x.landmarks.keys()).index(key)


class InvariantSlam2(_Slam2Base):
    """Invariant-error EKF model: retraction via the SE_{1+K}(2) exponential."""

    name = "invariant2"

    def retract(self, x: SlamState2, e: np.ndarray) -> SlamState2:
        e = np.asarray(e, dtype=float)
        if e.shape != (self.error_dim(x),):
            raise ValueError(f"expected error of dim {self.error_dim(x)}, got {e.shape}")
        blocks = [e[1:3]] + [e[3 + 2 * i:5 + 2 * i] for i in range(len(x.landmarks))]
        g = exp_sek2(TangentSEk.from_parts(e[0], blocks))
        d_r = g.rotation_matrix
        landmarks = {
            k: d_r @ v + g.delta_blocks[1 + i]
            for i, (k, v) in enumerate(x.landmarks.items())
        }
        return SlamState2(x.theta + e[0], d_r @ x.p_r + g.delta_blocks[0], landmarks)

    def error(self, x: SlamState2, xhat: SlamState2) -> np.ndarray:
        if x.landmark_ids != xhat.landmark_ids:
            raise ValueError("landmark registries differ")
        e = np.empty(self.error_dim(x))
        e[0] = wrap_angle(x.theta - xhat.theta)
        r_rel = rot2(xhat.theta - x.theta)
        e[1:3] = r_rel @ x.p_r - xhat.p_r
        for i, k in enumerate(x.landmark_ids):
            e[3 + 2 * i:5 + 2 * i] = r_rel @ x.landmarks[k] - xhat.landmarks[k]
        return e

    def process_jacobians(self, x: SlamState2, u: OdometryInput2) -> tuple:
        d = self.error_dim(x)
        f = np.eye(d)
        g = np.zeros((d, 3))
        g[0, 0] = 1.0
        # Heading-noise column: -J p evaluated at the *propagated* positions
        # (landmarks do not move); translation-noise block: R(theta).
        p_prop = x.p_r + x.rotation @ u.p_bar
        g[1:3, 0] = -J2 @ p_prop
        g[1:3, 1:3] = x.rotation
        for i, k in enumerate(x.landmark_ids):
            g[3 + 2 * i:5 + 2 * i, 0] = -J2 @ x.landmarks[k]
        return f, g

    def observation_rows(self, x: SlamState2, key) -> tuple:
        q = x.rotation.T @ (x.landmark(key) - x.p_r)
        dh = _delta_h(q)
        m = np.zeros((2, self.error_dim(x)))
        rt = x.rotation.T
        m[:, 1:3] = -rt
        off = self._landmark_offset(x, key)
        m[:, off:off + 2] = rt
        return dh @ m, np.eye(2)


class StandardSlam2(_Slam2Base):
    """Standard EKF model: additive error on heading and positions."""

    name = "standard2"

    def retract(self, x: SlamState2, e: np.ndarray) -> SlamState2:
        e = np.asarray(e, dtype=float)
        if e.shape != (self.error_dim(x),):
            raise ValueError(f"expected error of dim {self.error_dim(x)}, got {e.shape}")
        landmarks = {
            k: v + e[3 + 2 * i:5 + 2 * i]
            for i, (k, v) in enumerate(x.landmarks.items())
        }
        return SlamState2(x.theta + e[0], x.p_r + e[1:3], landmarks)

    def error(self, x: SlamState2, xhat: SlamState2) -> np.ndarray:
        if x.landmark_ids != xhat.landmark_ids:
            raise ValueError("landmark registries differ")
        e = np.empty(self.error_dim(x))
        e[0] = wrap_angle(x.theta - xhat.theta)
        e[1:3] = x.p_r - xhat.p_r
        for i, k in enumerate(x.landmark_ids):
            e[3 + 2 * i:5 + 2 * i] = x.landmarks[k] - xhat.landmarks[k]
        return e

    def process_jacobians(self, x: SlamState2, u: OdometryInput2) -> tuple:
        d = self.error_dim(x)
        f = np.eye(d)
        f[1:3, 0] = x.rotation @ J2 @ u.p_bar
        g = np.zeros((d, 3))
        g[0, 0] = 1.0
        g[1:3, 1:3] = x.rotation
        return f, g

    def observation_rows(self, x: SlamState2, key) -> tuple:
        p_l = x.landmark(key)
        q = x.rotation.T @ (p_l - x.p_r)
        dh = _delta_h(q)
        m = np.zeros((2, self.error_dim(x)))
        rt = x.rotation.T
        m[:, 0] = -J2 @ rt @ (p_l - x.p_r)
        m[:, 1:3] = -rt
        off = self._landmark_offset(x, key)
        m[:, off:off + 2] = rt
        return dh @ m, np.eye(2)
