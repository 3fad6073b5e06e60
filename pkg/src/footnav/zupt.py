"""Stance detection and the zero-velocity measurement model.

A foot is flagged as grounded when windowed means of the raw IMU norms sit
below thresholds: |mean ||f_b|| - g| < acc_thresh and mean ||w_b|| <
gyro_thresh. Runs shorter than min_duration are discarded. During stance the
foot velocity is treated as a zero pseudo-measurement whose matrix selects
the velocity block of the corresponding IMU in the 30-dim joint error state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .states import ERROR_DIM, JOINT_ERROR_DIM, VEL, GRAVITY_MPS2, ImuSeries, JointState


@dataclass(frozen=True)
class StanceDetectorConfig:
    acc_thresh: float = 0.5  # m/s^2, on | mean||f_b|| - g |
    gyro_thresh: float = 0.3  # rad/s, on mean||w_b||
    window: int = 5  # samples in the moving mean
    min_duration: int = 6  # samples a stance run must persist
    gravity_mag: float = GRAVITY_MPS2

    def __post_init__(self):
        if self.acc_thresh <= 0 or self.gyro_thresh <= 0:
            raise ValueError("thresholds must be positive")
        if self.window < 1 or self.min_duration < 1:
            raise ValueError("window and min_duration must be >= 1")


def _moving_mean(x: np.ndarray, window: int) -> np.ndarray:
    """Centered moving mean; the window is truncated at the stream edges."""
    n = x.shape[0]
    half = window // 2
    c = np.concatenate([[0.0], np.cumsum(x)])
    lo = np.maximum(np.arange(n) - half, 0)
    hi = np.minimum(np.arange(n) + (window - half), n)
    return (c[hi] - c[lo]) / (hi - lo)


def detect_stance(series: ImuSeries, cfg: StanceDetectorConfig) -> np.ndarray:
    """Per-sample stance flags for one foot's IMU stream."""
    if len(series) == 0:
        raise ValueError("cannot detect stance on an empty IMU stream")
    acc_norm = np.linalg.norm(series.f, axis=1)
    gyr_norm = np.linalg.norm(series.w, axis=1)
    acc_ok = np.abs(_moving_mean(acc_norm, cfg.window) - cfg.gravity_mag) < cfg.acc_thresh
    gyr_ok = _moving_mean(gyr_norm, cfg.window) < cfg.gyro_thresh
    mask = acc_ok & gyr_ok
    return _drop_short_runs(mask, cfg.min_duration)


def _drop_short_runs(mask: np.ndarray, min_len: int) -> np.ndarray:
    out = mask.copy()
    n = out.shape[0]
    i = 0
    while i < n:
        if out[i]:
            j = i
            while j < n and out[j]:
                j += 1
            if j - i < min_len:
                out[i:j] = False
            i = j
        else:
            i += 1
    return out


def stance_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [start, stop) index ranges of contiguous stance runs."""
    runs = []
    n = mask.shape[0]
    i = 0
    while i < n:
        if mask[i]:
            j = i
            while j < n and mask[j]:
                j += 1
            runs.append((i, j))
            i = j
        else:
            i += 1
    return runs


@dataclass(frozen=True)
class StanceMask:
    """Per-keyframe stance flags for both feet, aligned to keyframe timestamps."""

    t: np.ndarray
    right: np.ndarray
    left: np.ndarray

    def __post_init__(self):
        if not (self.t.shape == self.right.shape == self.left.shape):
            raise ValueError("stance mask arrays must share one length")


def zupt_H(right: bool, left: bool) -> np.ndarray:
    """Zero-velocity measurement matrix against the 30-dim joint error state.

    One 3x30 row block per grounded foot; each block is an identity on that
    foot's velocity columns and zero elsewhere. Both feet grounded stacks the
    right-foot rows above the left-foot rows (6x30).
    """
    if not (right or left):
        raise ValueError("at least one foot must be in stance")
    rows = []
    if right:
        h = np.zeros((3, JOINT_ERROR_DIM))
        h[:, VEL] = np.eye(3)
        rows.append(h)
    if left:
        h = np.zeros((3, JOINT_ERROR_DIM))
        h[:, ERROR_DIM + VEL.start : ERROR_DIM + VEL.stop] = np.eye(3)
        rows.append(h)
    return np.vstack(rows)


def zupt_residual(x: JointState, right: bool, left: bool):
    """Residual (0 - v) of the grounded feet and its error-state Jacobian.

    Returns (r, J) with r = y - H x for y = 0 and J = dr/d(delta) = -H.
    """
    H = zupt_H(right, left)
    parts = []
    if right:
        parts.append(-x.s1.v)
    if left:
        parts.append(-x.s2.v)
    return np.concatenate(parts), -H


def save_stance_csv(path, t: np.ndarray, right: np.ndarray, left: np.ndarray) -> None:
    """Debug export: one row per epoch, columns t,right,left (0/1 flags)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,right,left\n")
        for k in range(t.shape[0]):
            fh.write(f"{t[k]:.17g},{int(right[k])},{int(left[k])}\n")
