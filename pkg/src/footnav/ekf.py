"""Centralized error-state EKF over both feet.

The 30-dim error state stacks the two 15-dim per-IMU blocks
(dp, dv, dtheta, db_a, db_g). Prediction mechanizes each foot and
propagates covariance with the same first-order transition used by the
preintegration module; zero-velocity and position fixes enter as standard
Kalman updates in Joseph form; the inter-foot distance bound is enforced by
projecting the estimate onto the constraint surface in the covariance
metric, leaving the covariance itself untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .preintegration import ImuNoiseModel
from .so3 import right_jacobian, rot_matrix, rotvec_to_quat, skew
from .states import (
    ATT,
    BIAS_ACC,
    BIAS_GYR,
    ERROR_DIM,
    JOINT_ERROR_DIM,
    POS,
    VEL,
    ImuSample,
    JointState,
    joint_retract,
    mechanize,
)
from .stepconstraint import DistanceConstraint
from .zupt import zupt_H


@dataclass(frozen=True)
class EkfState:
    x: JointState
    P: np.ndarray  # 30x30 joint error covariance

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        if P.shape != (JOINT_ERROR_DIM, JOINT_ERROR_DIM):
            raise ValueError(f"P must be 30x30, got {P.shape}")
        object.__setattr__(self, "P", P)


def transition_matrix(x, u: ImuSample, dt: float) -> np.ndarray:
    """First-order error-state transition of one mechanize step (15x15)."""
    R = rot_matrix(x.q)
    f = u.f_b - x.b_a
    w = u.w_b - x.b_g
    phi = w * dt
    Rfx = R @ skew(f)

    F = np.eye(ERROR_DIM)
    F[POS, VEL] = np.eye(3) * dt
    F[POS, ATT] = -0.5 * Rfx * dt * dt
    F[POS, BIAS_ACC] = -0.5 * R * dt * dt
    F[VEL, ATT] = -Rfx * dt
    F[VEL, BIAS_ACC] = -R * dt
    F[ATT, ATT] = rot_matrix(rotvec_to_quat(phi)).T
    F[ATT, BIAS_GYR] = -right_jacobian(phi) * dt
    return F


def process_noise(x, u: ImuSample, dt: float, noise: ImuNoiseModel) -> np.ndarray:
    """Discrete process noise matching transition_matrix (15x15)."""
    R = rot_matrix(x.q)
    phi = (u.w_b - x.b_g) * dt
    B = np.zeros((ERROR_DIM, 6))  # columns: gyro white, accel white
    B[ATT, 0:3] = right_jacobian(phi) * dt
    B[VEL, 3:6] = R * dt
    B[POS, 3:6] = 0.5 * R * dt * dt
    Qw = np.zeros((6, 6))
    Qw[0:3, 0:3] = (noise.sigma_g**2 / dt) * np.eye(3)
    Qw[3:6, 3:6] = (noise.sigma_a**2 / dt) * np.eye(3)
    Q = B @ Qw @ B.T
    Q[BIAS_ACC, BIAS_ACC] = (noise.sigma_ba**2 * dt) * np.eye(3)
    Q[BIAS_GYR, BIAS_GYR] = (noise.sigma_bg**2 * dt) * np.eye(3)
    return Q


def ekf_predict(s: EkfState, u1: ImuSample, u2: ImuSample, dt: float, noise: ImuNoiseModel) -> EkfState:
    """Mechanize both feet and propagate the joint covariance.

    The transition and process noise are block-diagonal per IMU, so the
    joint covariance is propagated block-wise (including the cross block).
    """
    x1 = mechanize(s.x.s1, u1, dt)
    x2 = mechanize(s.x.s2, u2, dt)
    F1 = transition_matrix(s.x.s1, u1, dt)
    F2 = transition_matrix(s.x.s2, u2, dt)
    a, b = slice(0, ERROR_DIM), slice(ERROR_DIM, JOINT_ERROR_DIM)
    P = np.empty((JOINT_ERROR_DIM, JOINT_ERROR_DIM))
    P[a, a] = F1 @ s.P[a, a] @ F1.T + process_noise(s.x.s1, u1, dt, noise)
    P[b, b] = F2 @ s.P[b, b] @ F2.T + process_noise(s.x.s2, u2, dt, noise)
    P[a, b] = F1 @ s.P[a, b] @ F2.T
    P[b, a] = P[a, b].T
    return EkfState(JointState(x1, x2), 0.5 * (P + P.T))


def _kalman_update(s: EkfState, innovation: np.ndarray, H: np.ndarray, R: np.ndarray) -> EkfState:
    S = H @ s.P @ H.T + R
    try:
        K = np.linalg.solve(S, H @ s.P).T
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"singular innovation covariance: {exc}") from None
    delta = K @ innovation
    x_new = joint_retract(s.x, delta)
    IKH = np.eye(JOINT_ERROR_DIM) - K @ H
    P = IKH @ s.P @ IKH.T + K @ R @ K.T  # Joseph form
    return EkfState(x_new, 0.5 * (P + P.T))


def ekf_update_zupt(s: EkfState, right: bool, left: bool, sigma: float = 0.01) -> EkfState:
    """Zero-velocity pseudo-measurement on the grounded feet."""
    H = zupt_H(right, left)
    parts = []
    if right:
        parts.append(-s.x.s1.v)
    if left:
        parts.append(-s.x.s2.v)
    innovation = np.concatenate(parts)
    R = sigma**2 * np.eye(H.shape[0])
    return _kalman_update(s, innovation, H, R)


_H_POS = np.zeros((6, JOINT_ERROR_DIM))
_H_POS[0:3, POS] = np.eye(3)
_H_POS[3:6, ERROR_DIM + POS.start : ERROR_DIM + POS.stop] = np.eye(3)


def ekf_update_position(s: EkfState, y_pos: np.ndarray, sigma: float = 0.3) -> EkfState:
    """Loosely coupled position-fix update for both feet."""
    innovation = np.asarray(y_pos, dtype=float) - np.concatenate([s.x.s1.p, s.x.s2.p])
    R = sigma**2 * np.eye(6)
    return _kalman_update(s, innovation, _H_POS, R)


def project_distance(s: EkfState, c: DistanceConstraint, tol: float = 1e-6, max_iter: int = 10) -> EkfState:
    """Enforce ||p1 - p2|| <= d by covariance-weighted projection.

    When the bound is violated, solves min (x - x_hat)^T P^-1 (x - x_hat)
    subject to the linearized distance constraint, re-linearizing at the
    current iterate until the violation is below tol. The covariance is
    deliberately left unchanged.
    """
    if np.linalg.norm(s.x.s1.p - s.x.s2.p) <= c.d:
        return s

    x_hat = s.x
    delta = np.zeros(JOINT_ERROR_DIM)  # projected correction around x_hat
    x_cur = x_hat
    for _ in range(max_iter):
        diff = x_cur.s1.p - x_cur.s2.p
        dist = np.linalg.norm(diff)
        if abs(dist - c.d) < tol:
            break
        u = diff / max(dist, c.eps_norm)
        D = np.zeros(JOINT_ERROR_DIM)
        D[POS] = u
        D[ERROR_DIM + POS.start : ERROR_DIM + POS.stop] = -u
        PD = s.P @ D
        dPd = float(D @ PD)
        if dPd <= 0:
            raise ValueError("degenerate covariance along the constraint direction")
        # linearize the active constraint at the iterate, re-solve from x_hat:
        # min delta' P^-1 delta  s.t.  (dist - d) + D (delta - delta_k) = 0
        resid = (dist - c.d) - float(D @ delta)
        delta = -PD * (resid / dPd)
        x_cur = joint_retract(x_hat, delta)
    return EkfState(x_cur, s.P)


@dataclass(frozen=True)
class EkfOptions:
    """Method toggles for the filter baseline; schedules mirror the smoother."""

    use_zupt: bool = True
    use_pos: bool = True
    use_step: bool = True
    zupt_sigma: float = 0.01
    pos_sigma: float | None = None
    constraint: DistanceConstraint = DistanceConstraint()
    constraint_interval: float = 0.5
    record_dt: float = 0.1  # trajectory recording cadence


def run_ekf(ds, opts: EkfOptions | None = None, init_state: JointState | None = None,
            prior_cov: np.ndarray | None = None, detector_cfg=None):
    """Filter a whole dataset sample by sample.

    Zero-velocity updates fire at every detected stance sample, position
    updates when a fix lands on the sample grid, and the distance projection
    runs on the shared constraint schedule. Returns a TrajectoryEstimate on
    the recording grid.
    """
    from .fgo import TrajectoryEstimate, _default_prior_cov
    from .zupt import StanceDetectorConfig, detect_stance

    opts = opts if opts is not None else EkfOptions()
    detector_cfg = detector_cfg if detector_cfg is not None else StanceDetectorConfig()
    dt = ds.dt
    n = len(ds.imu_right)
    ps = opts.pos_sigma if opts.pos_sigma is not None else max(ds.corruption.pos_sigma, 1e-3)

    if init_state is None:
        init_state = JointState(ds.truth_right.state(0), ds.truth_left.state(0))
    if prior_cov is None:
        prior_cov = _default_prior_cov()

    mask_r = detect_stance(ds.imu_right, detector_cfg)
    mask_l = detect_stance(ds.imu_left, detector_cfg)
    fix_sample = {int(round((ft - ds.truth_right.t[0]) / dt)): ds.fixes.y[i]
                  for i, ft in enumerate(ds.fixes.t)}
    cstep = max(int(round(opts.constraint_interval / dt)), 1)
    rstep = max(int(round(opts.record_dt / dt)), 1)

    s = EkfState(init_state, prior_cov.copy())
    rec_t = [ds.truth_right.t[0]]
    rec_r = [s.x.s1]
    rec_l = [s.x.s2]
    penalty_times = []

    for k in range(n):
        s = ekf_predict(s, ds.imu_right.sample(k), ds.imu_left.sample(k), dt, ds.noise)
        kk = k + 1  # state epoch after consuming sample k
        if opts.use_zupt and kk < n and (mask_r[kk] or mask_l[kk]):
            s = ekf_update_zupt(s, bool(mask_r[kk]), bool(mask_l[kk]), opts.zupt_sigma)
        if opts.use_pos and kk in fix_sample:
            s = ekf_update_position(s, fix_sample[kk], ps)
        if opts.use_step and kk % cstep == 0:
            s = project_distance(s, opts.constraint)
            penalty_times.append(ds.truth_right.t[kk] if kk < ds.truth_right.t.shape[0] else rec_t[-1] + dt)
        if kk % rstep == 0 or kk == n:
            rec_t.append(ds.truth_right.t[kk] if kk < ds.truth_right.t.shape[0] else rec_t[-1] + dt)
            rec_r.append(s.x.s1)
            rec_l.append(s.x.s2)

    return TrajectoryEstimate(
        t=np.array(rec_t),
        right=rec_r,
        left=rec_l,
        penalty_times=np.array(penalty_times),
        method="",
    )
