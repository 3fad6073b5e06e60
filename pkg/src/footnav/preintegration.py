"""IMU preintegration between keyframes.

High-rate samples between two graph nodes are folded into a single relative
motion (dq, dv, dp) expressed in the frame of the first node, gravity-free:

    dq: body_i -> body_j rotation (unit quaternion)
    dv = R(q_i)^T (v_j - v_i - g dt_sum)
    dp = R(q_i)^T (p_j - p_i - v_i dt_sum - g dt_sum^2 / 2)

The accumulator carries a 9x9 covariance of the (dtheta, dv, dp) error, and
9x6 Jacobians of (dq, dv, dp) with respect to the gyro/accel biases at the
linearization point, which allow first-order re-correction when the bias
estimate moves. The per-step recursion matches states.mechanize exactly, so
predict() reproduces sample-by-sample dead reckoning at zero noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .so3 import (
    quat_conj,
    quat_mul,
    quat_rotate,
    quat_to_rotvec,
    right_jacobian,
    right_jacobian_inv,
    rot_matrix,
    rotvec_to_quat,
    skew,
)
from .states import (
    ATT,
    BIAS_ACC,
    BIAS_GYR,
    ERROR_DIM,
    POS,
    VEL,
    ImuSample,
    NavState,
    gravity,
)


@dataclass(frozen=True)
class ImuNoiseModel:
    """Continuous-time IMU noise densities (white noise per sqrt(Hz))."""

    sigma_a: float = 0.02  # accel white noise, m/s^2/sqrt(Hz)
    sigma_g: float = 0.002  # gyro white noise, rad/s/sqrt(Hz)
    sigma_ba: float = 1e-4  # accel bias random walk, m/s^3/sqrt(Hz)
    sigma_bg: float = 1e-4  # gyro bias random walk, rad/s^2/sqrt(Hz)

    def __post_init__(self):
        for name in ("sigma_a", "sigma_g", "sigma_ba", "sigma_bg"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class PreintegratedImu:
    """Accumulated relative motion between two keyframes.

    Sigma rows/cols are ordered (dtheta, dv, dp); j_bias columns are
    (b_g, b_a). b_lin = (b_a, b_g) is the bias the samples were corrected
    with during accumulation.
    """

    dq: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))
    dv: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dp: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sigma: np.ndarray = field(default_factory=lambda: np.zeros((9, 9)))
    j_bias: np.ndarray = field(default_factory=lambda: np.zeros((9, 6)))
    b_a_lin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_g_lin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dt_sum: float = 0.0
    n: int = 0

    @classmethod
    def fresh(cls, b_a: np.ndarray | None = None, b_g: np.ndarray | None = None) -> "PreintegratedImu":
        return cls(
            b_a_lin=np.zeros(3) if b_a is None else np.asarray(b_a, dtype=float).copy(),
            b_g_lin=np.zeros(3) if b_g is None else np.asarray(b_g, dtype=float).copy(),
        )


def integrate_sample(
    acc: PreintegratedImu, u: ImuSample, dt: float, noise: ImuNoiseModel
) -> PreintegratedImu:
    """Fold one bias-corrected sample into the accumulator (pure update)."""
    if not (np.isfinite(dt) and dt > 0):
        raise ValueError(f"dt must be positive and finite, got {dt}")

    f = u.f_b - acc.b_a_lin
    w = u.w_b - acc.b_g_lin
    dR = rot_matrix(acc.dq)
    phi = w * dt
    dq_step = rotvec_to_quat(phi)
    R_step = rot_matrix(dq_step)
    Jr = right_jacobian(phi)
    fx = skew(f)

    # error transition for (dtheta, dv, dp)
    A = np.zeros((9, 9))
    A[0:3, 0:3] = R_step.T
    A[3:6, 0:3] = -dR @ fx * dt
    A[3:6, 3:6] = np.eye(3)
    A[6:9, 0:3] = -0.5 * dR @ fx * dt * dt
    A[6:9, 3:6] = np.eye(3) * dt
    A[6:9, 6:9] = np.eye(3)

    # white-noise input (gyro, accel), discrete variance sigma^2 / dt
    B = np.zeros((9, 6))
    B[0:3, 0:3] = Jr * dt
    B[3:6, 3:6] = dR * dt
    B[6:9, 3:6] = 0.5 * dR * dt * dt
    Qd = np.zeros((6, 6))
    Qd[0:3, 0:3] = (noise.sigma_g**2 / dt) * np.eye(3)
    Qd[3:6, 3:6] = (noise.sigma_a**2 / dt) * np.eye(3)
    sigma = A @ acc.sigma @ A.T + B @ Qd @ B.T

    # bias Jacobian recursion, columns (b_g, b_a)
    J = acc.j_bias
    J_th_bg, J_th_ba = J[0:3, 0:3], J[0:3, 3:6]
    J_v_bg, J_v_ba = J[3:6, 0:3], J[3:6, 3:6]
    J_p_bg, J_p_ba = J[6:9, 0:3], J[6:9, 3:6]
    j_new = np.zeros((9, 6))
    j_new[0:3, 0:3] = R_step.T @ J_th_bg - Jr * dt
    j_new[0:3, 3:6] = R_step.T @ J_th_ba
    j_new[3:6, 0:3] = J_v_bg - dR @ fx @ J_th_bg * dt
    j_new[3:6, 3:6] = J_v_ba - dR * dt - dR @ fx @ J_th_ba * dt
    j_new[6:9, 0:3] = J_p_bg + J_v_bg * dt - 0.5 * dR @ fx @ J_th_bg * dt * dt
    j_new[6:9, 3:6] = J_p_ba + J_v_ba * dt - 0.5 * dR * dt * dt - 0.5 * dR @ fx @ J_th_ba * dt * dt

    dp_new = acc.dp + acc.dv * dt + 0.5 * (dR @ f) * dt * dt
    dv_new = acc.dv + (dR @ f) * dt
    dq_new = quat_mul(acc.dq, dq_step)

    return PreintegratedImu(
        dq=dq_new,
        dv=dv_new,
        dp=dp_new,
        sigma=0.5 * (sigma + sigma.T),
        j_bias=j_new,
        b_a_lin=acc.b_a_lin,
        b_g_lin=acc.b_g_lin,
        dt_sum=acc.dt_sum + dt,
        n=acc.n + 1,
    )


def _bias_corrected(acc: PreintegratedImu, b_a: np.ndarray, b_g: np.ndarray):
    """First-order (dq, dv, dp) at biases (b_a, b_g) near the linearization point."""
    db_g = b_g - acc.b_g_lin
    db_a = b_a - acc.b_a_lin
    J = acc.j_bias
    th_corr = J[0:3, 0:3] @ db_g + J[0:3, 3:6] @ db_a
    dq = quat_mul(acc.dq, rotvec_to_quat(th_corr))
    dv = acc.dv + J[3:6, 0:3] @ db_g + J[3:6, 3:6] @ db_a
    dp = acc.dp + J[6:9, 0:3] @ db_g + J[6:9, 3:6] @ db_a
    return dq, dv, dp, th_corr


def predict(x_i: NavState, acc: PreintegratedImu, g_n: np.ndarray | None = None) -> NavState:
    """Compose a start state with the accumulated motion, reinstating gravity.

    An empty accumulator acts as the identity. At zero noise and biases equal
    to the linearization point this equals iterated mechanize.
    """
    if acc.dt_sum == 0.0:
        return x_i
    g = gravity() if g_n is None else g_n
    dq, dv, dp, _ = _bias_corrected(acc, x_i.b_a, x_i.b_g)
    dt = acc.dt_sum
    q_j = quat_mul(x_i.q, dq)
    v_j = x_i.v + g * dt + quat_rotate(x_i.q, dv)
    p_j = x_i.p + x_i.v * dt + 0.5 * g * dt * dt + quat_rotate(x_i.q, dp)
    return NavState(p_j, v_j, q_j, x_i.b_a, x_i.b_g)


@dataclass(frozen=True)
class PreintResidual:
    """Residual of one preintegration factor and its error-state Jacobians.

    r stacks (r_theta, r_v, r_p, r_ba, r_bg): 9 motion rows weighted by the
    accumulated sigma, then 6 bias random-walk rows weighted by the walk
    covariance over dt_sum. J_i / J_j are 15x15 against the per-IMU error
    layout (dp, dv, dtheta, db_a, db_g) of the start / end states.
    """

    r: np.ndarray
    J_i: np.ndarray
    J_j: np.ndarray
    cov: np.ndarray


def preint_covariance(acc: PreintegratedImu, noise: ImuNoiseModel) -> np.ndarray:
    """15x15 residual covariance: accumulated motion + bias random walk."""
    cov = np.zeros((15, 15))
    cov[0:9, 0:9] = acc.sigma
    cov[9:12, 9:12] = (noise.sigma_ba**2 * acc.dt_sum) * np.eye(3)
    cov[12:15, 12:15] = (noise.sigma_bg**2 * acc.dt_sum) * np.eye(3)
    return cov


def _residual_terms(x_i: NavState, x_j: NavState, acc: PreintegratedImu, g: np.ndarray):
    dq_bar, dv_bar, dp_bar, th_corr = _bias_corrected(acc, x_i.b_a, x_i.b_g)
    E = rot_matrix(x_i.q).T
    dt = acc.dt_sum

    q_err = quat_mul(quat_conj(dq_bar), quat_mul(quat_conj(x_i.q), x_j.q))
    r_th = quat_to_rotvec(q_err)
    v_term = E @ (x_j.v - x_i.v - g * dt)
    p_term = E @ (x_j.p - x_i.p - x_i.v * dt - 0.5 * g * dt * dt)

    r = np.empty(15)
    r[0:3] = r_th
    r[3:6] = v_term - dv_bar
    r[6:9] = p_term - dp_bar
    r[9:12] = x_j.b_a - x_i.b_a
    r[12:15] = x_j.b_g - x_i.b_g
    return r, q_err, th_corr, E, v_term, p_term


def motion_residual(
    x_i: NavState, x_j: NavState, acc: PreintegratedImu, g_n: np.ndarray | None = None
) -> np.ndarray:
    """Residual vector only (no Jacobians); the cheap path for cost evaluation."""
    if acc.dt_sum <= 0.0:
        raise ValueError("degenerate preintegration factor: dt_sum is zero")
    g = gravity() if g_n is None else g_n
    return _residual_terms(x_i, x_j, acc, g)[0]


def residual(
    x_i: NavState,
    x_j: NavState,
    acc: PreintegratedImu,
    noise: ImuNoiseModel,
    g_n: np.ndarray | None = None,
) -> PreintResidual:
    """Motion + bias-walk residual between two states bridged by the accumulator."""
    if acc.dt_sum <= 0.0:
        raise ValueError("degenerate preintegration factor: dt_sum is zero")
    g = gravity() if g_n is None else g_n
    dt = acc.dt_sum

    r, q_err, th_corr, E, v_term, p_term = _residual_terms(x_i, x_j, acc, g)
    r_th = r[0:3]
    R_i = E.T
    R_j = rot_matrix(x_j.q)

    J = acc.j_bias
    Jr_inv = right_jacobian_inv(r_th)
    E_err = rot_matrix(q_err)

    J_i = np.zeros((15, ERROR_DIM))
    J_j = np.zeros((15, ERROR_DIM))

    # rotation rows
    J_i[0:3, ATT] = -Jr_inv @ R_j.T @ R_i
    J_i[0:3, BIAS_GYR] = -Jr_inv @ E_err.T @ right_jacobian(th_corr) @ J[0:3, 0:3]
    J_j[0:3, ATT] = Jr_inv

    # velocity rows
    J_i[3:6, VEL] = -E
    J_i[3:6, ATT] = skew(v_term)
    J_i[3:6, BIAS_ACC] = -J[3:6, 3:6]
    J_i[3:6, BIAS_GYR] = -J[3:6, 0:3]
    J_j[3:6, VEL] = E

    # position rows
    J_i[6:9, POS] = -E
    J_i[6:9, VEL] = -E * dt
    J_i[6:9, ATT] = skew(p_term)
    J_i[6:9, BIAS_ACC] = -J[6:9, 3:6]
    J_i[6:9, BIAS_GYR] = -J[6:9, 0:3]
    J_j[6:9, POS] = E

    # bias random-walk rows
    J_i[9:12, BIAS_ACC] = -np.eye(3)
    J_i[12:15, BIAS_GYR] = -np.eye(3)
    J_j[9:12, BIAS_ACC] = np.eye(3)
    J_j[12:15, BIAS_GYR] = np.eye(3)

    return PreintResidual(r=r, J_i=J_i, J_j=J_j, cov=preint_covariance(acc, noise))
