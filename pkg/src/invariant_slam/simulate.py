"""Deterministic synthetic world generator and Monte-Carlo harness.

The benchmark scenario: a wheeled robot drives circular loops at constant
speed and angular rate while landmarks disposed around the trajectory are
observed through a limited-range range-bearing sensor.  Each Monte-Carlo
run corrupts the same ground truth with freshly seeded noise; every filter
in the campaign consumes bitwise-identical noisy data (paired comparison).

Everything is a pure function of (config, base_seed): runs execute and
aggregate in fixed run-index order so output bytes are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FilterError
from .filtering import Belief, Control, MeasurementBatch, MeasurementEntry, Step, run_filter
from .metrics import evaluate_run
from .slam2d import InvariantSlam2, OdometryInput2, SlamState2, StandardSlam2, dynamics2, observe2
from .liegroup import wrap_angle

FILTER_VARIANTS = {
    "invariant": (InvariantSlam2, "invariant2"),
    "standard": (StandardSlam2, "standard2"),
}


@dataclass(frozen=True)
class SimConfig:
    """Benchmark scenario parameters.

    The defaults trace seven 43-step loops of radius ~7 m with 20 landmarks
    scattered around the circle, a 5 m sensor, and per-step odometry noise;
    exact noise magnitudes are configuration, not physics, and the
    acceptance gates are ordinal in them.
    """

    n_loops: int = 7
    n_landmarks: int = 20
    radius: float = 7.0
    speed: float = 1.0227
    angular_rate: float = 2.0 * math.pi / 43.0
    dt: float = 1.0
    max_range: float = 5.0
    odom_heading_std: float = 0.02
    odom_position_std: float = 0.05
    range_std: float = 0.1
    bearing_std: float = math.radians(1.0)
    landmark_jitter: float = 2.0
    n_runs: int = 100
    base_seed: int = 424242

    def __post_init__(self):
        positive = {
            "n_loops": self.n_loops, "n_landmarks": self.n_landmarks,
            "radius": self.radius, "speed": self.speed,
            "angular_rate": self.angular_rate, "dt": self.dt,
            "max_range": self.max_range, "n_runs": self.n_runs,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.dt * self.angular_rate >= math.pi:
            raise ValueError("dt * angular_rate must stay below pi")

    @property
    def steps_per_loop(self) -> int:
        return int(round(2.0 * math.pi / (self.angular_rate * self.dt)))

    @property
    def n_steps(self) -> int:
        return self.n_loops * self.steps_per_loop

    @property
    def process_noise(self) -> np.ndarray:
        return np.diag([self.odom_heading_std ** 2,
                        self.odom_position_std ** 2,
                        self.odom_position_std ** 2])

    @property
    def measurement_noise(self) -> np.ndarray:
        return np.diag([self.range_std ** 2, self.bearing_std ** 2])


@dataclass
class GroundTruthLog:
    """True poses, landmark positions, and noiseless per-step inputs."""

    poses: list  # (theta, p) per time index, length n_steps + 1
    inputs: list  # OdometryInput2 per step
    landmarks: dict
    config: SimConfig

    def pose_state(self, index: int) -> SlamState2:
        theta, p = self.poses[index]
        return SlamState2(theta, p, {})

    def full_state(self, index: int) -> SlamState2:
        theta, p = self.poses[index]
        return SlamState2(theta, p, self.landmarks)


def make_world(config: SimConfig) -> GroundTruthLog:
    """Constant-twist circular trajectory with landmarks around it."""
    rng = np.random.default_rng(config.base_seed)
    omega_bar = config.angular_rate * config.dt
    p_bar = np.array([config.speed * config.dt, 0.0])
    u = OdometryInput2(omega_bar, p_bar)
    theta, p = math.pi / 2.0, np.array([config.radius, 0.0])
    poses = [(theta, p.copy())]
    inputs = []
    state = SlamState2(theta, p, {})
    for _ in range(config.n_steps):
        state = dynamics2(state, u, np.zeros(3))
        poses.append((state.theta, state.p_r.copy()))
        inputs.append(u)
    landmarks = {}
    for j in range(config.n_landmarks):
        angle = 2.0 * math.pi * j / config.n_landmarks
        rad = config.radius + config.landmark_jitter * rng.uniform(-1.0, 1.0)
        landmarks[j] = np.array([rad * math.cos(angle), rad * math.sin(angle)])
    return GroundTruthLog(poses, inputs, landmarks, config)


def visible_landmarks(world: GroundTruthLog, step: int) -> list:
    """Ids within sensor range of the true pose after step ``step``."""
    _, p = world.poses[step + 1]
    out = []
    for lid, pos in world.landmarks.items():
        if np.linalg.norm(pos - p) <= world.config.max_range:
            out.append(lid)
    return out


def first_loop_closure_step(world: GroundTruthLog) -> int | None:
    """First re-observation of landmark 0 after it has left the sensor range."""
    seen = False
    gone = False
    for n in range(world.config.n_steps):
        vis = 0 in visible_landmarks(world, n)
        if vis and not seen:
            seen = True
        elif seen and not vis:
            gone = True
        elif gone and vis:
            return n
    return None


def simulate_run(world: GroundTruthLog, config: SimConfig, run_index: int) -> list:
    """Noisy inputs and measurement batches for one Monte-Carlo run."""
    rng = np.random.default_rng(config.base_seed + run_index)
    q = config.process_noise
    n_meas = config.measurement_noise
    steps = []
    for n in range(config.n_steps):
        u_true = world.inputs[n]
        w = rng.normal(0.0, [config.odom_heading_std,
                             config.odom_position_std,
                             config.odom_position_std])
        u_noisy = OdometryInput2(u_true.omega + w[0], u_true.p_bar + w[1:])
        truth = world.full_state(n + 1)
        entries = []
        for lid in visible_landmarks(world, n):
            value = observe2(truth, lid)
            value = value + rng.normal(0.0, [config.range_std, config.bearing_std])
            value[1] = wrap_angle(value[1])
            entries.append(MeasurementEntry(lid, value, n_meas.copy()))
        batch = MeasurementBatch(float((n + 1) * config.dt), tuple(entries)) if entries else None
        steps.append(Step(time=float((n + 1) * config.dt),
                          control=Control(u_noisy, q.copy()),
                          batch=batch))
    return steps


@dataclass
class FilterCampaignSummary:
    """Aggregated paired-comparison results for one filter."""

    name: str
    mean_nees_series: np.ndarray
    rmse_series: np.ndarray
    sigma3_series: np.ndarray
    mean_nees: float
    mean_nees_post_closure: float
    mean_rmse: float
    kernel_max_residual: float
    kernel_containment_residual: float
    composed_residual: float
    info_violation_count: int
    info_max_increase: float
    failed_runs: int


@dataclass
class CampaignResult:
    config: SimConfig
    loop_closure_step: int | None
    filters: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)


def _initial_belief(world: GroundTruthLog) -> Belief:
    theta, p = world.poses[0]
    return Belief(SlamState2(theta, p, {}), np.zeros((3, 3)))


def run_single(world: GroundTruthLog, config: SimConfig, run_index: int,
               variant: str) -> tuple:
    """Run one filter over one simulated run; returns (FilterRun, RunMetrics)."""
    model_cls, variant_name = FILTER_VARIANTS[variant]
    steps = simulate_run(world, config, run_index)
    run = run_filter(model_cls(), _initial_belief(world), steps)
    truth = [world.pose_state(n + 1) for n in range(config.n_steps)]
    return run, evaluate_run(run, truth, variant_name)


def run_monte_carlo(config: SimConfig, filters=("invariant", "standard")) -> CampaignResult:
    """Paired Monte-Carlo campaign over all requested filters.

    Every filter consumes the identical noisy data of each run.  A failed
    run is excluded from that filter's aggregates and counted.
    """
    if not filters:
        raise ValueError("at least one filter is required")
    for name in filters:
        if name not in FILTER_VARIANTS:
            raise ValueError(f"unknown filter {name!r}")
    world = make_world(config)
    closure = first_loop_closure_step(world)
    result = CampaignResult(config=config, loop_closure_step=closure)
    truth = [world.pose_state(n + 1) for n in range(config.n_steps)]
    initial = _initial_belief(world)

    per_filter = {name: {"nees": [], "err": [], "sig": [], "runs": []} for name in filters}
    failures = {name: 0 for name in filters}
    for run_index in range(config.n_runs):
        steps = simulate_run(world, config, run_index)
        for name in filters:
            model_cls, variant_name = FILTER_VARIANTS[name]
            try:
                run = run_filter(model_cls(), initial, steps)
                rm = evaluate_run(run, truth, variant_name)
            except FilterError as exc:
                failures[name] += 1
                result.warnings.append(f"{name} run {run_index} failed: {exc}")
                continue
            acc = per_filter[name]
            acc["nees"].append(rm.nees_series)
            acc["err"].append(rm.position_error_series)
            acc["sig"].append(rm.pose_sigma_trace)
            acc["runs"].append(rm)

    for name in filters:
        acc = per_filter[name]
        nees_mat = np.asarray(acc["nees"])
        err_mat = np.asarray(acc["err"])
        sig_mat = np.asarray(acc["sig"])
        mean_nees_series = nees_mat.mean(axis=0)
        rmse_series = np.sqrt(np.mean(np.sum(err_mat ** 2, axis=-1), axis=0))
        sigma3_series = 3.0 * np.sqrt(sig_mat.mean(axis=0))
        post = mean_nees_series[closure:] if closure is not None else mean_nees_series
        result.filters[name] = FilterCampaignSummary(
            name=name,
            mean_nees_series=mean_nees_series,
            rmse_series=rmse_series,
            sigma3_series=sigma3_series,
            mean_nees=float(mean_nees_series.mean()),
            mean_nees_post_closure=float(post.mean()),
            mean_rmse=float(rmse_series.mean()),
            kernel_max_residual=max(r.kernel.max_obs_residual for r in acc["runs"]),
            kernel_containment_residual=max(
                r.kernel.max_containment_residual for r in acc["runs"]),
            composed_residual=max(r.kernel.composed_residual for r in acc["runs"]),
            info_violation_count=sum(r.information.violation_count for r in acc["runs"]),
            info_max_increase=max(r.information.max_relative_increase for r in acc["runs"]),
            failed_runs=failures[name],
        )
    return result
