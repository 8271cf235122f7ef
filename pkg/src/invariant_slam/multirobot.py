"""2D multi-robot SLAM with anchored landmark orientations.

M robots with independent headings share one centralized filter over K
landmarks.  In the invariant variant every landmark carries a static anchor
angle, cloned from the heading of the robot that first observed it; the
landmark error block is the SE(2)-invariant error built from that anchor.
Error layout:

    invariant: [per robot m: (theta_m, p_m)] + [per landmark j: (anchor_j, p_j)]
               dimension 3M + 3K
    standard:  [per robot m: (theta_m, p_m)] + [per landmark j: p_j]
               dimension 3M + 2K

Measurement keys are ObsKey(observer, kind, subject): kind "landmark" keys
may be auto-initialized; "robot" subjects always exist in the state.
Anchor coordinates are genuine filter states with zero process noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import UnknownSubjectError
from .filtering import FilterModel
from .liegroup import J2, TangentSEk, exp_sek2, rot2, wrap_angle
from .slam2d import OdometryInput2, _delta_h, range_bearing_to_point


class ObsKey(NamedTuple):
    observer: int
    kind: str  # "landmark" | "robot"
    subject: object


@dataclass(frozen=True)
class RobotPose2:
    theta: float
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(2))

    @property
    def rotation(self) -> np.ndarray:
        return rot2(self.theta)


@dataclass(frozen=True)
class AnchoredLandmark:
    anchor: float
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "anchor", wrap_angle(float(self.anchor)))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(2))


@dataclass(frozen=True)
class MultiState2:
    """Poses of M robots plus anchored landmarks; anchors never change."""

    robots: tuple
    landmarks: dict
    anchor_source: dict

    def __post_init__(self):
        object.__setattr__(self, "robots", tuple(self.robots))
        object.__setattr__(self, "landmarks", dict(self.landmarks))
        object.__setattr__(self, "anchor_source", dict(self.anchor_source))

    @property
    def n_robots(self) -> int:
        return len(self.robots)

    @property
    def landmark_ids(self) -> tuple:
        return tuple(self.landmarks.keys())

    def robot(self, m: int) -> RobotPose2:
        if not 0 <= m < len(self.robots):
            raise UnknownSubjectError(("robot", m))
        return self.robots[m]

    def landmark(self, lid) -> AnchoredLandmark:
        try:
            return self.landmarks[lid]
        except KeyError:
            raise UnknownSubjectError(lid) from None

    def with_landmark(self, lid, entry: AnchoredLandmark, source: int) -> "MultiState2":
        if lid in self.landmarks:
            raise ValueError(f"duplicate landmark id {lid!r}")
        new = dict(self.landmarks)
        new[lid] = entry
        sources = dict(self.anchor_source)
        sources[lid] = source
        return MultiState2(self.robots, new, sources)


def dynamics_multi(x: MultiState2, inputs, w: np.ndarray) -> MultiState2:
    """Each robot evolves independently; landmarks and anchors are fixed."""
    inputs = tuple(inputs)
    if len(inputs) != x.n_robots:
        raise ValueError(f"expected {x.n_robots} inputs, got {len(inputs)}")
    w = np.asarray(w, dtype=float).reshape(3 * x.n_robots)
    robots = []
    for m, (pose, u) in enumerate(zip(x.robots, inputs)):
        wm = w[3 * m:3 * m + 3]
        theta = pose.theta + u.omega + wm[0]
        p = pose.p + pose.rotation @ (u.p_bar + wm[1:])
        robots.append(RobotPose2(theta, p))
    return MultiState2(tuple(robots), x.landmarks, x.anchor_source)


def observe_multi(x: MultiState2, key: ObsKey) -> np.ndarray:
    """Range-bearing of a landmark or peer robot in the observer's frame."""
    obs = x.robot(key.observer)
    target = x.landmark(key.subject).p if key.kind == "landmark" else x.robot(key.subject).p
    q = obs.rotation.T @ (target - obs.p)
    import math
    return np.array([float(np.linalg.norm(q)), math.atan2(q[1], q[0])])


def apply_se2_multi(alpha_theta: float, alpha_p: np.ndarray, x: MultiState2) -> MultiState2:
    """Global frame change; anchors transform like global orientations."""
    r_a = rot2(alpha_theta)
    p_a = np.asarray(alpha_p, dtype=float).reshape(2)
    robots = tuple(RobotPose2(r.theta + alpha_theta, r_a @ r.p + p_a) for r in x.robots)
    landmarks = {
        k: AnchoredLandmark(v.anchor + alpha_theta, r_a @ v.p + p_a)
        for k, v in x.landmarks.items()
    }
    return MultiState2(robots, landmarks, x.anchor_source)


class _MultiBase(FilterModel):

    per_landmark = 3

    def error_dim(self, x: MultiState2) -> int:
        return 3 * x.n_robots + self.per_landmark * len(x.landmarks)

    def dynamics(self, x, u, w):
        return dynamics_multi(x, u, w)

    def has_subject(self, x: MultiState2, key: ObsKey) -> bool:
        if key.kind == "robot":
            return 0 <= key.subject < x.n_robots
        return key.subject in x.landmarks

    def initializable(self, key: ObsKey) -> bool:
        return key.kind == "landmark"

    def predict(self, x, key):
        return observe_multi(x, key)

    def wrap_residual(self, key, residual: np.ndarray) -> np.ndarray:
        out = residual.copy()
        out[1] = wrap_angle(out[1])
        return out

    def place_subject(self, x: MultiState2, key: ObsKey, measurement) -> MultiState2:
        obs = x.robot(key.observer)
        point = obs.p + obs.rotation @ range_bearing_to_point(measurement)
        entry = AnchoredLandmark(obs.theta, point)
        return x.with_landmark(key.subject, entry, key.observer)

    def robot_position(self, x: MultiState2, m: int = 0) -> np.ndarray:
        return x.robot(m).p

    def robot_slice(self, m: int) -> slice:
        return slice(3 * m, 3 * m + 3)

    def robot_pose_error(self, pose_true: RobotPose2, pose_hat: RobotPose2,
                         invariant: bool) -> np.ndarray:
        e = np.empty(3)
        e[0] = wrap_angle(pose_true.theta - pose_hat.theta)
        if invariant:
            e[1:] = rot2(pose_hat.theta - pose_true.theta) @ pose_true.p - pose_hat.p
        else:
            e[1:] = pose_true.p - pose_hat.p
        return e

    def _landmark_offset(self, x: MultiState2, lid) -> int:
        idx = list(x.landmarks.keys()).index(lid)
        return 3 * x.n_robots + self.per_landmark * idx


class InvariantMulti2(_MultiBase):
    """Centralized invariant-error filter with anchored landmark orientations."""

    name = "invariant_multi2"
    per_landmark = 3

    def retract(self, x: MultiState2, e: np.ndarray) -> MultiState2:
        e = np.asarray(e, dtype=float)
        if e.shape != (self.error_dim(x),):
            raise ValueError(f"expected error of dim {self.error_dim(x)}, got {e.shape}")
        robots = []
        for m, pose in enumerate(x.robots):
            em = e[3 * m:3 * m + 3]
            g = exp_sek2(TangentSEk.from_parts(em[0], [em[1:]]))
            robots.append(RobotPose2(pose.theta + em[0],
                                     g.rotation_matrix @ pose.p + g.delta_blocks[0]))
        base = 3 * x.n_robots
        landmarks = {}
        for j, (k, lm) in enumerate(x.landmarks.items()):
            ej = e[base + 3 * j:base + 3 * j + 3]
            g = exp_sek2(TangentSEk.from_parts(ej[0], [ej[1:]]))
            landmarks[k] = AnchoredLandmark(lm.anchor + ej[0],
                                            g.rotation_matrix @ lm.p + g.delta_blocks[0])
        return MultiState2(tuple(robots), landmarks, x.anchor_source)

    def error(self, x: MultiState2, xhat: MultiState2) -> np.ndarray:
        if x.landmark_ids != xhat.landmark_ids or x.n_robots != xhat.n_robots:
            raise ValueError("state registries differ")
        e = np.empty(self.error_dim(x))
        for m, (pose, pose_hat) in enumerate(zip(x.robots, xhat.robots)):
            e[3 * m] = wrap_angle(pose.theta - pose_hat.theta)
            e[3 * m + 1:3 * m + 3] = rot2(pose_hat.theta - pose.theta) @ pose.p - pose_hat.p
        base = 3 * x.n_robots
        for j, k in enumerate(x.landmark_ids):
            lm, lm_hat = x.landmarks[k], xhat.landmarks[k]
            e[base + 3 * j] = wrap_angle(lm.anchor - lm_hat.anchor)
            e[base + 3 * j + 1:base + 3 * j + 3] = (
                rot2(lm_hat.anchor - lm.anchor) @ lm.p - lm_hat.p)
        return e

    def process_jacobians(self, x: MultiState2, inputs) -> tuple:
        inputs = tuple(inputs)
        d = self.error_dim(x)
        f = np.eye(d)
        g = np.zeros((d, 3 * x.n_robots))
        for m, (pose, u) in enumerate(zip(x.robots, inputs)):
            p_prop = pose.p + pose.rotation @ u.p_bar
            g[3 * m, 3 * m] = 1.0
            g[3 * m + 1:3 * m + 3, 3 * m] = -J2 @ p_prop
            g[3 * m + 1:3 * m + 3, 3 * m + 1:3 * m + 3] = pose.rotation
        # Landmark and anchor rows are zero: anchors are static and the
        # landmark error is built from the anchor, not the robot heading.
        return f, g

    def observation_rows(self, x: MultiState2, key: ObsKey) -> tuple:
        obs = x.robot(key.observer)
        rt = obs.rotation.T
        if key.kind == "landmark":
            target = x.landmark(key.subject).p
            t_theta_col = self._landmark_offset(x, key.subject)
            t_pos = t_theta_col + 1
        else:
            target = x.robot(key.subject).p
            t_theta_col = 3 * key.subject
            t_pos = t_theta_col + 1
        q = rt @ (target - obs.p)
        dh = _delta_h(q)
        m_mat = np.zeros((2, self.error_dim(x)))
        jp = J2 @ target
        m_mat[:, 3 * key.observer] = -rt @ jp
        m_mat[:, 3 * key.observer + 1:3 * key.observer + 3] = -rt
        m_mat[:, t_theta_col] = rt @ jp
        m_mat[:, t_pos:t_pos + 2] = rt
        return dh @ m_mat, np.eye(2)


class StandardMulti2(_MultiBase):
    """Centralized standard EKF: additive error, no anchor coordinates."""

    name = "standard_multi2"
    per_landmark = 2

    def retract(self, x: MultiState2, e: np.ndarray) -> MultiState2:
        e = np.asarray(e, dtype=float)
        if e.shape != (self.error_dim(x),):
            raise ValueError(f"expected error of dim {self.error_dim(x)}, got {e.shape}")
        robots = tuple(
            RobotPose2(pose.theta + e[3 * m], pose.p + e[3 * m + 1:3 * m + 3])
            for m, pose in enumerate(x.robots))
        base = 3 * x.n_robots
        landmarks = {
            k: AnchoredLandmark(lm.anchor, lm.p + e[base + 2 * j:base + 2 * j + 2])
            for j, (k, lm) in enumerate(x.landmarks.items())
        }
        return MultiState2(robots, landmarks, x.anchor_source)

    def error(self, x: MultiState2, xhat: MultiState2) -> np.ndarray:
        if x.landmark_ids != xhat.landmark_ids or x.n_robots != xhat.n_robots:
            raise ValueError("state registries differ")
        e = np.empty(self.error_dim(x))
        for m, (pose, pose_hat) in enumerate(zip(x.robots, xhat.robots)):
            e[3 * m] = wrap_angle(pose.theta - pose_hat.theta)
            e[3 * m + 1:3 * m + 3] = pose.p - pose_hat.p
        base = 3 * x.n_robots
        for j, k in enumerate(x.landmark_ids):
            e[base + 2 * j:base + 2 * j + 2] = x.landmarks[k].p - xhat.landmarks[k].p
        return e

    def process_jacobians(self, x: MultiState2, inputs) -> tuple:
        inputs = tuple(inputs)
        d = self.error_dim(x)
        f = np.eye(d)
        g = np.zeros((d, 3 * x.n_robots))
        for m, (pose, u) in enumerate(zip(x.robots, inputs)):
            f[3 * m + 1:3 * m + 3, 3 * m] = pose.rotation @ J2 @ u.p_bar
            g[3 * m, 3 * m] = 1.0
            g[3 * m + 1:3 * m + 3, 3 * m + 1:3 * m + 3] = pose.rotation
        return f, g

    def observation_rows(self, x: MultiState2, key: ObsKey) -> tuple:
        obs = x.robot(key.observer)
        rt = obs.rotation.T
        if key.kind == "landmark":
            target = x.landmark(key.subject).p
            t_pos = self._landmark_offset(x, key.subject)
        else:
            target = x.robot(key.subject).p
            t_pos = 3 * key.subject + 1
        q = rt @ (target - obs.p)
        dh = _delta_h(q)
        m_mat = np.zeros((2, self.error_dim(x)))
        m_mat[:, 3 * key.observer] = -J2 @ rt @ (target - obs.p)
        m_mat[:, 3 * key.observer + 1:3 * key.observer + 3] = -rt
        m_mat[:, t_pos:t_pos + 2] = rt
        return dh @ m_mat, np.eye(2)
