"""Generic error-state EKF engine.

The engine is parameterized by a model contract (dynamics, observation,
error definition, retraction, Jacobian providers) so that filters built on
different state errors share one propagate/update loop:

    propagate:  x <- f(x, u, 0);         P <- F P F^T + G Q G^T
    update:     K = P H^T (H P H^T + J N J^T)^-1   (linear solve, no inverse)
                e = K * wrapped(y - h(x));  x <- retract(x, e)
                P <- (I - K H) P (I - K H)^T + K J N J^T K^T   (Joseph form)

The covariance is expressed in the model's error coordinates, which are
*defined by the retraction*: H, F, G are the derivatives of the measurement
and of the propagated error with respect to the retraction coordinates, and
``model.error`` is the first-order inverse of the retraction.  Covariances
are re-symmetrized after every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateUpdateError,
    FilterError,
    NumericalFailureError,
    UnknownSubjectError,
)

# Condition-number ceiling for the innovation covariance.
MAX_INNOVATION_CONDITION = 1e12
# Central finite-difference step for covariance augmentation Jacobians.
FD_STEP = 1e-6


@dataclass(frozen=True)
class Belief:
    """A state estimate with an error-coordinate covariance."""

    estimate: object
    covariance: np.ndarray

    def validated(self, model: "FilterModel", step: int | None = None) -> "Belief":
        p = np.asarray(self.covariance, dtype=float)
        d = model.error_dim(self.estimate)
        if p.shape != (d, d):
            raise ValueError(f"covariance shape {p.shape} does not match error dim {d}")
        if not np.all(np.isfinite(p)):
            raise NumericalFailureError("non-finite covariance", step)
        return Belief(self.estimate, 0.5 * (p + p.T))


@dataclass(frozen=True)
class Control:
    """Control input with its process-noise covariance for one step."""

    u: object
    Q: np.ndarray


@dataclass(frozen=True)
class MeasurementEntry:
    """One relative observation: an opaque subject key, value, and noise."""

    key: object
    value: np.ndarray
    noise: np.ndarray


@dataclass(frozen=True)
class MeasurementBatch:
    time: float
    entries: tuple


@dataclass(frozen=True)
class Step:
    """One filter step: optional control, then optional measurement batch."""

    time: float
    control: Control | None = None
    batch: MeasurementBatch | None = None


class FilterModel:
    """Contract the engine expects from a state-space model.

    Subjects (landmarks, peer robots) are addressed by opaque hashable keys.
    """

    name = "model"

    def error_dim(self, x) -> int:
        raise NotImplementedError

    def dynamics(self, x, u, w: np.ndarray):
        raise NotImplementedError

    def process_jacobians(self, x, u) -> tuple:
        """(F, G) of the error propagation, evaluated at the estimate."""
        raise NotImplementedError

    def retract(self, x, e: np.ndarray):
        raise NotImplementedError

    def error(self, x, xhat) -> np.ndarray:
        """Flattened error coordinates of x relative to xhat."""
        raise NotImplementedError

    def has_subject(self, x, key) -> bool:
        raise NotImplementedError

    def predict(self, x, key) -> np.ndarray:
        """Predicted measurement for a subject; NotVisibleSignal to skip."""
        raise NotImplementedError

    def observation_rows(self, x, key) -> tuple:
        """(H_rows, J_rows) for one subject's measurement."""
        raise NotImplementedError

    def wrap_residual(self, key, residual: np.ndarray) -> np.ndarray:
        """Wrap angular residual components; default passthrough."""
        return residual

    def place_subject(self, x, key, measurement: np.ndarray):
        """State with a new subject added from its first measurement."""
        raise NotImplementedError

    def initializable(self, key) -> bool:
        """Whether an unseen key may be added from a measurement."""
        return True


def propagate(belief: Belief, control: Control, model: FilterModel,
              step: int | None = None) -> tuple:
    """One covariance propagation; returns (belief, F, G)."""
    x = belief.estimate
    f_mat, g_mat = model.process_jacobians(x, control.u)
    x_new = model.dynamics(x, control.u, np.zeros(np.shape(control.Q)[0]))
    p = f_mat @ belief.covariance @ f_mat.T + g_mat @ np.asarray(control.Q) @ g_mat.T
    return Belief(x_new, p).validated(model, step), f_mat, g_mat


@dataclass(frozen=True)
class Innovation:
    """Residual bookkeeping for one batched update."""

    keys: tuple
    residual: np.ndarray
    S: np.ndarray
    gain: np.ndarray
    correction: np.ndarray


def update(belief: Belief, batch: MeasurementBatch, model: FilterModel,
           step: int | None = None, gate_threshold: float | None = None) -> tuple:
    """Batched measurement update; returns (belief, H, Innovation | None).

    All entries whose subject is known are processed in one stacked update.
    Entries whose prediction is not available (NotVisibleSignal) are skipped.
    With ``gate_threshold`` set, entries whose marginal Mahalanobis distance
    exceeds it are dropped before the joint update.
    """
    from .errors import NotVisibleSignal

    x = belief.estimate
    p = belief.covariance
    keys, resids, h_rows, noise_blocks = [], [], [], []
    for entry in batch.entries:
        if not model.has_subject(x, entry.key):
            raise UnknownSubjectError(entry.key)
        try:
            predicted = model.predict(x, entry.key)
        except NotVisibleSignal:
            continue
        h_k, j_k = model.observation_rows(x, entry.key)
        resid = model.wrap_residual(entry.key, np.asarray(entry.value, dtype=float) - predicted)
        nk = j_k @ np.asarray(entry.noise, dtype=float) @ j_k.T
        if gate_threshold is not None:
            s_k = h_k @ p @ h_k.T + nk
            d2 = float(resid @ np.linalg.solve(s_k, resid))
            if d2 > gate_threshold:
                continue
        keys.append(entry.key)
        resids.append(resid)
        h_rows.append(h_k)
        noise_blocks.append(nk)

    if not keys:
        return belief, None, None

    h = np.vstack(h_rows)
    residual = np.concatenate(resids)
    n_stack = _block_diag(noise_blocks)
    s = h @ p @ h.T + n_stack
    s = 0.5 * (s + s.T)
    if np.linalg.cond(s) > MAX_INNOVATION_CONDITION:
        raise DegenerateUpdateError("singular innovation covariance", step)
    # K = P H^T S^-1 via a solve on S (symmetric).
    gain = np.linalg.solve(s, h @ p).T
    correction = gain @ residual
    x_new = model.retract(x, correction)
    i_kh = np.eye(p.shape[0]) - gain @ h
    p_new = i_kh @ p @ i_kh.T + gain @ n_stack @ gain.T
    new_belief = Belief(x_new, p_new).validated(model, step)
    return new_belief, h, Innovation(tuple(keys), residual, s, gain, correction)


def _block_diag(blocks: Sequence[np.ndarray]) -> np.ndarray:
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n))
    i = 0
    for b in blocks:
        k = b.shape[0]
        out[i:i + k, i:i + k] = b
        i += k
    return out


def initialize_subject(belief: Belief, model: FilterModel, key, measurement: np.ndarray,
                       noise: np.ndarray, step: int | None = None) -> Belief:
    """Augment the belief with a new subject placed from its measurement.

    The new error-block rows of the augmented covariance are obtained by
    central finite differences of the placement map against the model's own
    error definition, w.r.t. the existing error coordinates (J_e) and the
    measurement components (J_v):

        P_aug = [[P, P J_e^T], [J_e P, J_e P J_e^T + J_v N J_v^T]]

    which is PSD by construction.
    """
    x = belief.estimate
    if model.has_subject(x, key):
        raise ValueError(f"subject {key!r} already present")
    z = np.asarray(measurement, dtype=float)
    x_aug = model.place_subject(x, key, z)
    d_old = model.error_dim(x)
    d_new = model.error_dim(x_aug)
    n_extra = d_new - d_old

    def new_rows(state) -> np.ndarray:
        return model.error(state, x_aug)[d_old:]

    j_e = np.zeros((n_extra, d_old))
    for i in range(d_old):
        e = np.zeros(d_old)
        e[i] = FD_STEP
        plus = new_rows(model.place_subject(model.retract(x, e), key, z))
        minus = new_rows(model.place_subject(model.retract(x, -e), key, z))
        j_e[:, i] = (plus - minus) / (2.0 * FD_STEP)

    m = z.shape[0]
    j_v = np.zeros((n_extra, m))
    for i in range(m):
        dz = np.zeros(m)
        dz[i] = FD_STEP
        plus = new_rows(model.place_subject(x, key, z + dz))
        minus = new_rows(model.place_subject(x, key, z - dz))
        j_v[:, i] = (plus - minus) / (2.0 * FD_STEP)

    p = belief.covariance
    cross = p @ j_e.T
    corner = j_e @ cross + j_v @ np.asarray(noise, dtype=float) @ j_v.T
    p_aug = np.block([[p, cross], [cross.T, corner]])
    return Belief(x_aug, p_aug).validated(model, step)


@dataclass
class StepRecord:
    """Per-step quantities retained for metrics and observability audits."""

    index: int
    time: float
    F: np.ndarray | None
    G: np.ndarray | None
    H: np.ndarray | None
    belief_pred: Belief
    belief_lin: Belief
    belief_post: Belief
    observed_keys: tuple = ()
    initialized_keys: tuple = ()
    innovation: Innovation | None = None


@dataclass
class FilterRun:
    """Full record of one filter execution."""

    model: FilterModel
    initial: Belief
    records: list = field(default_factory=list)
    final: Belief = None

    def __post_init__(self):
        if self.final is None:
            self.final = self.initial


def run_filter(model: FilterModel, initial: Belief, steps: Iterable[Step],
               gate_threshold: float | None = None,
               observer=None, keep_records: bool = True) -> FilterRun:
    """Run propagate/update over a time-ordered step log.

    Subjects not yet in the state are initialized from their first
    measurement before the batched update; the remaining entries update
    jointly.  Deterministic given identical inputs.

    ``observer`` is called with every StepRecord as it is produced; with
    ``keep_records=False`` the records are not retained (streaming mode for
    long replays where per-step covariances would not fit in memory).
    """
    belief = initial.validated(model)
    run = FilterRun(model=model, initial=belief)
    last_time = -np.inf
    for index, step in enumerate(steps):
        if step.time <= last_time:
            raise FilterError("step log is not strictly time-ordered", index)
        last_time = step.time
        try:
            f_mat = g_mat = None
            if step.control is not None:
                belief, f_mat, g_mat = propagate(belief, step.control, model, index)
            belief_pred = belief
            initialized = []
            remaining = []
            if step.batch is not None:
                for entry in step.batch.entries:
                    if model.has_subject(belief.estimate, entry.key):
                        remaining.append(entry)
                    elif model.initializable(entry.key):
                        belief = initialize_subject(
                            belief, model, entry.key, entry.value, entry.noise, index)
                        initialized.append(entry.key)
                    else:
                        raise UnknownSubjectError(entry.key)
            belief_lin = belief
            h_mat = innovation = None
            if remaining:
                batch = MeasurementBatch(step.batch.time, tuple(remaining))
                belief, h_mat, innovation = update(
                    belief, batch, model, index, gate_threshold)
        except FilterError:
            raise
        except Exception as exc:  # attach the step index to model-level errors
            raise FilterError(f"{type(exc).__name__}: {exc}", index) from exc
        record = StepRecord(
            index=index,
            time=step.time,
            F=f_mat,
            G=g_mat,
            H=h_mat,
            belief_pred=belief_pred,
            belief_lin=belief_lin,
            belief_post=belief,
            observed_keys=tuple(innovation.keys) if innovation else (),
            initialized_keys=tuple(initialized),
            innovation=innovation,
        )
        if observer is not None:
            observer(record)
        if keep_records:
            run.records.append(record)
        run.final = belief
    return run
