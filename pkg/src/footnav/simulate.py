"""Synthetic dual-foot gait, IMU synthesis, and position-fix corruption.

Ground truth is generated directly in discrete time on the IMU sample grid:
per-sample velocities follow smooth swing profiles and positions are their
trapezoidal integral, which is exactly the position rule of
states.mechanize. IMU streams are then computed as the exact discrete
inverse of mechanize, so zero-noise dead reckoning reproduces the truth to
round-off. Stance samples have exactly zero velocity and constant position,
and the generated stance labels are exact by construction.

Gait model: footprints are laid along a waypoint path at step_length
spacing, alternating feet, offset laterally by half the step width. Each
foot repeats a cycle of `stance_ratio` grounded time followed by a swing to
its next footprint (a raised-cosine horizontal velocity profile, scaled so
the discrete integral lands exactly on the footprint, plus a sinusoidal
vertical lift). The left foot runs half a cycle out of phase. Foot attitude
holds still in stance and oscillates in pitch while tracking the path
heading during swing.

Natural gait variability comes in as seeded mid-swing hesitations: with
probability hesitation_prob a swing hovers briefly (velocity and angular
rate notched close to zero around a random point of the swing). Hovers look
like stance to a norm-threshold detector while the foot still creeps, which
is exactly the zero-velocity model violation real walkers produce.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .preintegration import ImuNoiseModel
from .so3 import quat_conj, quat_mul, quat_to_rotvec, rot_matrix, rotvec_to_quat
from .states import ImuSeries, NavState, gravity


def figure_eight_waypoints(width: float = 6.0, height: float = 6.0, n: int = 720) -> np.ndarray:
    """Closed figure-eight (Gerono lemniscate) fitting a width x height box."""
    th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    x = 0.5 * width * np.sin(th)
    y = 0.5 * height * np.sin(th) * np.cos(th)
    return np.column_stack([x, y])


@dataclass(frozen=True)
class GaitConfig:
    step_length: float = 0.65  # m between successive opposite-foot footprints
    cadence: float = 1.3  # steps/s (both feet counted)
    step_width: float = 0.25  # m lateral separation between foot tracks
    stance_ratio: float = 0.65  # grounded fraction of each foot's cycle
    duration: float = 120.0  # s
    path: np.ndarray | None = None  # waypoints (closed loop); default figure eight
    imu_rate: float = 60.0  # Hz
    foot_lift: float = 0.05  # m swing apex height
    pitch_amp: float = 1.9  # rad/s peak swing pitch rate
    hesitation_prob: float = 0.07  # per-step chance of a mid-swing hover
    hesitation_depth: float = 0.97  # speed reduction at the hover center
    hesitation_width: float = 0.11  # hover extent as a fraction of the swing
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.stance_ratio < 1.0):
            raise ValueError("stance_ratio must be in (0, 1)")
        if self.imu_rate <= 0 or self.cadence <= 0:
            raise ValueError("imu_rate and cadence must be positive")
        if self.step_length <= 0 or self.duration <= 0:
            raise ValueError("step_length and duration must be positive")
        if not (0.0 <= self.hesitation_prob <= 1.0) or not (0.0 <= self.hesitation_depth < 1.0):
            raise ValueError("hesitation_prob in [0,1] and hesitation_depth in [0,1)")
        if self.path is not None:
            p = np.asarray(self.path, dtype=float)
            if p.ndim != 2 or p.shape[0] < 3 or p.shape[1] != 2:
                raise ValueError("path must be an (n>=3, 2) waypoint array")
            object.__setattr__(self, "path", p)


@dataclass(frozen=True)
class FootTruth:
    """Ground-truth track of one foot on the IMU sample grid."""

    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    stance: np.ndarray

    def state(self, k: int) -> NavState:
        return NavState(self.p[k], self.v[k], self.q[k], np.zeros(3), np.zeros(3))


def _polyline_arclength(points: np.ndarray):
    seg = np.diff(points, axis=0)
    ds = np.linalg.norm(seg, axis=1)
    if np.any(ds == 0):
        keep = np.concatenate([[True], ds > 0])
        points = points[keep]
        seg = np.diff(points, axis=0)
        ds = np.linalg.norm(seg, axis=1)
    if points.shape[0] < 2 or np.sum(ds) <= 0:
        raise ValueError("degenerate path: needs nonzero total length")
    s = np.concatenate([[0.0], np.cumsum(ds)])
    return points, s


def _sample_closed_path(points: np.ndarray, arcs: np.ndarray):
    """Positions and unit tangents at the given arclengths along a closed loop."""
    closed = np.vstack([points, points[0]])
    closed, s = _polyline_arclength(closed)
    total = s[-1]
    a = np.mod(arcs, total)
    x = np.interp(a, s, closed[:, 0])
    y = np.interp(a, s, closed[:, 1])
    idx = np.clip(np.searchsorted(s, a, side="right") - 1, 0, len(s) - 2)
    seg = closed[idx + 1] - closed[idx]
    tang = seg / np.linalg.norm(seg, axis=1, keepdims=True)
    return np.column_stack([x, y]), tang


def generate_gait(cfg: GaitConfig) -> tuple[FootTruth, FootTruth]:
    """Ground-truth trajectories and exact stance labels for both feet."""
    dt = 1.0 / cfg.imu_rate
    n_samples = int(round(cfg.duration * cfg.imu_rate)) + 1
    t = np.arange(n_samples) * dt

    # integer cycle timing: C samples per gait cycle, S grounded, N swinging
    cycle = int(round(2.0 * cfg.imu_rate / cfg.cadence))
    cycle += cycle % 2
    stance_n = min(max(int(round(cfg.stance_ratio * cycle)), 2), cycle - 4)
    swing_n = cycle - stance_n

    path = cfg.path if cfg.path is not None else figure_eight_waypoints()
    n_steps = int(np.ceil(cfg.duration * cfg.cadence)) + 4
    arcs = np.arange(n_steps + 2) * cfg.step_length
    centers, tang = _sample_closed_path(path, arcs)
    normals = np.column_stack([-tang[:, 1], tang[:, 0]])  # 90 deg CCW: left side

    trajs = []
    for foot_id, (foot_sign, phase0, first_idx, stride) in enumerate(
        (
            (-1.0, 0, 0, 2),  # right foot: footprints 0, 2, 4, ...
            (+1.0, cycle // 2, 1, 2),  # left foot: start beside right, then 1, 3, 5, ...
        )
    ):
        prints_xy = centers[first_idx::stride] + foot_sign * 0.5 * cfg.step_width * normals[first_idx::stride]
        start_xy = centers[0] + foot_sign * 0.5 * cfg.step_width * normals[0]
        prints_xy = np.vstack([start_xy, prints_xy]) if first_idx == 1 else prints_xy
        headings = np.arctan2(tang[first_idx::stride, 1], tang[first_idx::stride, 0])
        if first_idx == 1:
            headings = np.concatenate([[np.arctan2(tang[0, 1], tang[0, 0])], headings])

        rng = np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFFFFFF, foot_id])
        trajs.append(
            _integrate_foot(
                t, dt, prints_xy, headings, cycle, stance_n, swing_n, phase0, cfg, rng
            )
        )
    return trajs[0], trajs[1]


def _swing_weights(n: int) -> np.ndarray:
    """Raised-cosine speed shape over n intervals; exactly zero at both ends."""
    j = np.arange(n + 1)
    w = 1.0 - np.cos(2.0 * np.pi * j / n)
    w[0] = 0.0
    w[-1] = 0.0
    return w


def _integrate_foot(t, dt, prints_xy, headings, cycle, stance_n, swing_n, phase0, cfg, rng):
    n_samples = t.shape[0]
    v = np.zeros((n_samples, 3))
    w_body = np.zeros((n_samples - 1, 3))  # rate over interval [k, k+1]
    stance = np.ones(n_samples, dtype=bool)

    base_shape = _swing_weights(swing_n)
    lift_rate = np.pi * cfg.foot_lift / (swing_n * dt)
    base_lift = lift_rate * np.sin(2.0 * np.pi * np.arange(swing_n + 1) / swing_n)
    base_lift[0] = 0.0
    base_lift[-1] = 0.0
    s_node = np.arange(swing_n + 1) / swing_n
    jmid = (np.arange(swing_n) + 0.5) / swing_n
    base_pitch = cfg.pitch_amp * np.sin(2.0 * np.pi * jmid)
    base_yaw = 1.0 - np.cos(2.0 * np.pi * jmid)

    # swing k lifts off at sample a = stance_n - phase0 + k*cycle, lands at b
    for k in range(prints_xy.shape[0] - 1):
        a = stance_n - phase0 + k * cycle
        b = a + swing_n
        if a >= n_samples - 1:
            break
        lo, hi = max(a, 0), min(b, n_samples - 1)
        if hi <= lo:
            continue
        stance[max(a + 1, 0) : min(b, n_samples)] = False  # strictly inside the swing

        # occasional mid-swing hover: velocity and angular rate pinched near
        # a random point, which a norm-threshold detector mistakes for stance
        if rng.random() < cfg.hesitation_prob:
            c = rng.uniform(0.40, 0.60)
            notch_node = 1.0 - cfg.hesitation_depth * np.exp(-(((s_node - c) / cfg.hesitation_width) ** 2))
            notch_mid = 1.0 - cfg.hesitation_depth * np.exp(-(((jmid - c) / cfg.hesitation_width) ** 2))
        else:
            notch_node = None
            notch_mid = None

        shape = base_shape if notch_node is None else base_shape * notch_node
        lift = base_lift if notch_node is None else base_lift * notch_node
        lift = lift.copy()
        lift[1:-1] -= np.mean(lift[1:-1])  # foot returns exactly to ground level
        pitch = base_pitch if notch_mid is None else base_pitch * notch_mid
        pitch = pitch - np.mean(pitch)  # no net pitch across a swing
        yaw_shape = base_yaw if notch_mid is None else base_yaw * notch_mid

        delta = prints_xy[k + 1] - prints_xy[k]
        # scaled so the trapezoidal integral lands exactly on the next footprint
        denom = dt * np.sum(shape[1:-1])
        sl = slice(lo - a, hi - a + 1)
        v[lo : hi + 1, 0] = delta[0] / denom * shape[sl]
        v[lo : hi + 1, 1] = delta[1] / denom * shape[sl]
        v[lo : hi + 1, 2] = lift[sl]

        dh = headings[k + 1] - headings[k]
        dh = (dh + np.pi) % (2.0 * np.pi) - np.pi
        ihi = min(b, n_samples - 1)
        w_body[lo:ihi, 1] = pitch[lo - a : ihi - a]
        w_body[lo:ihi, 2] = dh / (dt * np.sum(yaw_shape)) * yaw_shape[lo - a : ihi - a]

    p = np.zeros((n_samples, 3))
    p[0, :2] = prints_xy[0]
    dp = 0.5 * dt * (v[:-1] + v[1:])
    p[1:] = p[0] + np.cumsum(dp, axis=0)

    q = np.zeros((n_samples, 4))
    q0 = rotvec_to_quat(np.array([0.0, 0.0, headings[0]]))
    q[0] = q0
    for i in range(n_samples - 1):
        if np.any(w_body[i]):
            qn = quat_mul(q[i], rotvec_to_quat(w_body[i] * dt))
            q[i + 1] = qn / np.linalg.norm(qn)
        else:
            q[i + 1] = q[i]

    return FootTruth(t=t, p=p, v=v, q=q, stance=stance)


def synthesize_imu(
    truth: FootTruth,
    noise: ImuNoiseModel | None = None,
    bias0: tuple[np.ndarray, np.ndarray] | None = None,
    seed: int | None = None,
    g_n: np.ndarray | None = None,
) -> ImuSeries:
    """Specific force and angular rate streams from ground truth.

    The clean values are the exact discrete inverse of states.mechanize;
    noise=None returns them untouched. Otherwise additive white noise at the
    configured densities plus random-walk biases (starting from bias0) are
    applied, all drawn from the given seed.
    """
    g = gravity() if g_n is None else g_n
    n = truth.t.shape[0] - 1
    dt = truth.t[1] - truth.t[0]
    f = np.empty((n, 3))
    w = np.empty((n, 3))
    for k in range(n):
        w[k] = quat_to_rotvec(quat_mul(quat_conj(truth.q[k]), truth.q[k + 1])) / dt
        a_n = (truth.v[k + 1] - truth.v[k]) / dt - g
        f[k] = rot_matrix(truth.q[k]).T @ a_n

    if noise is not None:
        rng = np.random.default_rng(seed)
        b_a = np.zeros(3) if bias0 is None else np.asarray(bias0[0], dtype=float)
        b_g = np.zeros(3) if bias0 is None else np.asarray(bias0[1], dtype=float)
        walk_a = noise.sigma_ba * np.sqrt(dt) * rng.standard_normal((n, 3))
        walk_g = noise.sigma_bg * np.sqrt(dt) * rng.standard_normal((n, 3))
        bias_a = b_a + np.vstack([np.zeros(3), np.cumsum(walk_a[:-1], axis=0)])
        bias_g = b_g + np.vstack([np.zeros(3), np.cumsum(walk_g[:-1], axis=0)])
        f = f + bias_a + noise.sigma_a / np.sqrt(dt) * rng.standard_normal((n, 3))
        w = w + bias_g + noise.sigma_g / np.sqrt(dt) * rng.standard_normal((n, 3))

    return ImuSeries(t=truth.t[:-1], f=f, w=w)


@dataclass(frozen=True)
class CorruptionConfig:
    pos_sigma: float = 0.30  # m, per-axis Gaussian noise on fixes
    pos_interval: float = 0.5  # s between fixes; first fix at t = pos_interval
    outlier_prob: float = 0.05  # per-fix probability of a gross bias
    outlier_set: tuple[float, ...] = (1.0, 2.0, 3.0)  # m, candidate bias magnitudes
    seed: int = 0

    def __post_init__(self):
        if self.pos_sigma < 0 or self.pos_interval <= 0:
            raise ValueError("pos_sigma must be >= 0 and pos_interval > 0")
        if not (0.0 <= self.outlier_prob <= 1.0):
            raise ValueError("outlier_prob must be in [0, 1]")


@dataclass(frozen=True)
class PositionFixes:
    """External position fixes for both feet: y = [p_right; p_left] + noise."""

    t: np.ndarray
    y: np.ndarray  # (K, 6)
    outlier: np.ndarray  # (K,) bool, diagnostic only


def corrupt_positions(
    truth_right: FootTruth, truth_left: FootTruth, cfg: CorruptionConfig
) -> PositionFixes:
    """Noisy position fixes on the fix cadence, with occasional gross outliers."""
    rng = np.random.default_rng(cfg.seed)
    dt = truth_right.t[1] - truth_right.t[0]
    step = int(round(cfg.pos_interval / dt))
    idx = np.arange(step, truth_right.t.shape[0], step)
    k = idx.shape[0]
    y = np.hstack([truth_right.p[idx], truth_left.p[idx]])
    y = y + cfg.pos_sigma * rng.standard_normal((k, 6))
    flags = rng.random(k) < cfg.outlier_prob
    for i in np.nonzero(flags)[0]:
        axis = rng.integers(0, 6)
        mag = cfg.outlier_set[rng.integers(0, len(cfg.outlier_set))]
        sign = 1.0 if rng.random() < 0.5 else -1.0
        y[i, axis] += sign * mag
    return PositionFixes(t=truth_right.t[idx], y=y, outlier=flags)


@dataclass(frozen=True)
class TrajectoryDataset:
    """Everything one benchmark run consumes, plus the configs that made it."""

    truth_right: FootTruth
    truth_left: FootTruth
    imu_right: ImuSeries
    imu_left: ImuSeries
    fixes: PositionFixes
    gait: GaitConfig
    corruption: CorruptionConfig
    noise: ImuNoiseModel
    seeds: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return self.truth_right.t[1] - self.truth_right.t[0]


BIAS0_ACC_STD = 0.05  # m/s^2, initial accel bias spread per axis
BIAS0_GYR_STD = 0.005  # rad/s, initial gyro bias spread per axis


def make_dataset(
    gait: GaitConfig | None = None,
    corruption: CorruptionConfig | None = None,
    noise: ImuNoiseModel | None = None,
    seed: int = 0,
    zero_noise: bool = False,
) -> TrajectoryDataset:
    """Generate a complete synthetic dataset from one master seed.

    Child seeds for the two IMU streams, their initial biases, and the fix
    corruption are derived with SeedSequence so the streams are independent
    yet reproducible. Each IMU starts with a randomly drawn turn-on bias
    (BIAS0_*_STD per axis); estimating these is a large part of what
    separates the methods.
    """
    gait = gait if gait is not None else GaitConfig(seed=seed)
    noise = noise if noise is not None else ImuNoiseModel()
    sub = np.random.SeedSequence(seed).generate_state(4)
    corruption = corruption if corruption is not None else CorruptionConfig(seed=int(sub[2]))
    tr, tl = generate_gait(gait)
    if zero_noise:
        imu_r = synthesize_imu(tr, None)
        imu_l = synthesize_imu(tl, None)
        corruption = CorruptionConfig(
            pos_sigma=0.0, pos_interval=corruption.pos_interval, outlier_prob=0.0,
            outlier_set=corruption.outlier_set, seed=corruption.seed,
        )
    else:
        rng = np.random.default_rng(int(sub[3]))
        bias_r = (BIAS0_ACC_STD * rng.standard_normal(3), BIAS0_GYR_STD * rng.standard_normal(3))
        bias_l = (BIAS0_ACC_STD * rng.standard_normal(3), BIAS0_GYR_STD * rng.standard_normal(3))
        imu_r = synthesize_imu(tr, noise, bias0=bias_r, seed=int(sub[0]))
        imu_l = synthesize_imu(tl, noise, bias0=bias_l, seed=int(sub[1]))
    fixes = corrupt_positions(tr, tl, corruption)
    return TrajectoryDataset(
        truth_right=tr,
        truth_left=tl,
        imu_right=imu_r,
        imu_left=imu_l,
        fixes=fixes,
        gait=gait,
        corruption=corruption,
        noise=noise,
        seeds={"master": seed, "imu_right": int(sub[0]), "imu_left": int(sub[1]), "fixes": corruption.seed},
    )
