"""Navigation states, error-state layout, and strapdown mechanization.

Frames: local-level East-North-Up navigation frame, flat Earth, constant
gravity. Earth rotation and transport rate are ignored (indoor, minutes-long
trajectories).

Error-state layout (15 per IMU): [dp, dv, dtheta, db_a, db_g], where dtheta
is a body-frame rotation vector applied on the right of the attitude
quaternion. The joint error vector stacks IMU 1 (right foot) in rows 0:15
and IMU 2 (left foot) in rows 15:30; every measurement matrix in the
package indexes against this layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .so3 import quat_conj, quat_mul, quat_normalize, quat_rotate, quat_to_rotvec, rotvec_to_quat

GRAVITY_MPS2 = 9.80665

# per-IMU error-state blocks
POS = slice(0, 3)
VEL = slice(3, 6)
ATT = slice(6, 9)
BIAS_ACC = slice(9, 12)
BIAS_GYR = slice(12, 15)
ERROR_DIM = 15
JOINT_ERROR_DIM = 30


def gravity(magnitude: float = GRAVITY_MPS2) -> np.ndarray:
    """Navigation-frame gravity vector (ENU: straight down)."""
    return np.array([0.0, 0.0, -magnitude])


def _vec(x, n: int, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {a.shape}")
    # a.a is finite iff every entry is (values never approach sqrt(realmax))
    if not np.isfinite(a @ a):
        raise ValueError(f"{name} contains non-finite values: {a}")
    return a


@dataclass(frozen=True)
class ImuSample:
    """One IMU reading: specific force f_b (m/s^2) and angular rate w_b (rad/s), body frame."""

    t: float
    f_b: np.ndarray
    w_b: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.t):
            raise ValueError(f"sample timestamp is not finite: {self.t}")
        object.__setattr__(self, "f_b", _vec(self.f_b, 3, "f_b"))
        object.__setattr__(self, "w_b", _vec(self.w_b, 3, "w_b"))


@dataclass(frozen=True)
class ImuSeries:
    """Uniformly sampled IMU stream. Sample k applies over [t[k], t[k] + dt]."""

    t: np.ndarray
    f: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        f = np.asarray(self.f, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if t.ndim != 1:
            raise ValueError(f"t must be 1-D, got shape {t.shape}")
        n = t.shape[0]
        if f.shape != (n, 3) or w.shape != (n, 3):
            raise ValueError(f"f/w must have shape ({n}, 3), got {f.shape}, {w.shape}")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(f)) and np.all(np.isfinite(w))):
            raise ValueError("IMU series contains non-finite values")
        if n > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("IMU timestamps must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "w", w)

    def __len__(self) -> int:
        return self.t.shape[0]

    def sample(self, k: int) -> ImuSample:
        return ImuSample(self.t[k], self.f[k], self.w[k])


@dataclass(frozen=True)
class NavState:
    """Single-IMU navigation state: position, velocity, attitude, IMU biases.

    p, v are navigation-frame (m, m/s); q is the body-to-nav unit quaternion
    [w, x, y, z]; b_a (m/s^2) and b_g (rad/s) are accelerometer and gyroscope
    biases. 16 scalars total. The quaternion is renormalized on construction,
    so it is unit-norm after every operation that builds a new state.
    """

    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    b_a: np.ndarray
    b_g: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", _vec(self.p, 3, "p"))
        object.__setattr__(self, "v", _vec(self.v, 3, "v"))
        object.__setattr__(self, "q", quat_normalize(_vec(self.q, 4, "q")))
        object.__setattr__(self, "b_a", _vec(self.b_a, 3, "b_a"))
        object.__setattr__(self, "b_g", _vec(self.b_g, 3, "b_g"))

    @classmethod
    def identity(cls) -> "NavState":
        return cls(np.zeros(3), np.zeros(3), np.array([1.0, 0, 0, 0]), np.zeros(3), np.zeros(3))


@dataclass(frozen=True)
class JointState:
    """Concatenated dual-IMU state: s1 = right foot, s2 = left foot."""

    s1: NavState
    s2: NavState


def mechanize(x: NavState, u: ImuSample, dt: float, g_n: np.ndarray | None = None) -> NavState:
    """One strapdown step: first-order update with the pre-update attitude.

    q <- q * Exp((w_b - b_g) dt)
    a  = R(q)(f_b - b_a) + g_n          (pre-update q)
    v <- v + a dt
    p <- p + v dt + a dt^2 / 2

    The simulator's IMU synthesis is the exact inverse of this scheme, so
    zero-noise dead reckoning reproduces its ground truth to round-off.
    """
    if not (np.isfinite(dt) and dt > 0):
        raise ValueError(f"dt must be positive and finite, got {dt}")
    g = gravity() if g_n is None else g_n
    a = quat_rotate(x.q, u.f_b - x.b_a) + g
    q_next = quat_mul(x.q, rotvec_to_quat((u.w_b - x.b_g) * dt))
    v_next = x.v + a * dt
    p_next = x.p + x.v * dt + 0.5 * a * dt * dt
    return NavState(p_next, v_next, q_next, x.b_a, x.b_g)


def retract(x: NavState, delta: np.ndarray) -> NavState:
    """Apply a 15-dim error vector: additive on p/v/biases, right-multiplicative on q."""
    delta = _vec(delta, ERROR_DIM, "delta")
    return NavState(
        x.p + delta[POS],
        x.v + delta[VEL],
        quat_mul(x.q, rotvec_to_quat(delta[ATT])),
        x.b_a + delta[BIAS_ACC],
        x.b_g + delta[BIAS_GYR],
    )


def local_coordinates(x: NavState, y: NavState) -> np.ndarray:
    """Inverse of retract: the delta with retract(x, delta) = y."""
    delta = np.empty(ERROR_DIM)
    delta[POS] = y.p - x.p
    delta[VEL] = y.v - x.v
    delta[ATT] = quat_to_rotvec(quat_mul(quat_conj(x.q), y.q))
    delta[BIAS_ACC] = y.b_a - x.b_a
    delta[BIAS_GYR] = y.b_g - x.b_g
    return delta


def joint_retract(x: JointState, delta: np.ndarray) -> JointState:
    delta = _vec(delta, JOINT_ERROR_DIM, "delta")
    return JointState(retract(x.s1, delta[:ERROR_DIM]), retract(x.s2, delta[ERROR_DIM:]))


def joint_local_coordinates(x: JointState, y: JointState) -> np.ndarray:
    return np.concatenate([local_coordinates(x.s1, y.s1), local_coordinates(x.s2, y.s2)])


def dead_reckon(x0: NavState, series: ImuSeries, dt: float, g_n: np.ndarray | None = None):
    """Propagate x0 through a whole IMU series.

    Returns (t, states): len(series) + 1 states; t[k] is the time of state k,
    with t[0] = series.t[0] and each sample advancing one dt.
    """
    states = [x0]
    x = x0
    for k in range(len(series)):
        x = mechanize(x, series.sample(k), dt, g_n)
        states.append(x)
    t = np.concatenate([series.t, [series.t[-1] + dt]])
    return t, states
