"""Quaternion and SO(3) helpers.

Conventions used throughout the package:
  - quaternions are scalar-first unit 4-vectors [w, x, y, z];
  - q rotates body-frame vectors into the navigation frame,
    v_n = rot_matrix(q) @ v_b;
  - rotation vectors (axis * angle, rad) live in the body frame and attach
    on the right: q_perturbed = quat_mul(q, rotvec_to_quat(theta)).
"""

from __future__ import annotations

import numpy as np

_SMALL_ANGLE = 1e-10
_EYE3 = np.eye(3)
_EYE3.setflags(write=False)


def quat_normalize(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError(f"cannot normalize quaternion with norm {n}")
    return q / n


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate a 3-vector by q without building the full matrix."""
    w = q[0]
    u = q[1:]
    return v + 2.0 * np.cross(u, np.cross(u, v) + w * v)


def rot_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotvec_to_quat(phi: np.ndarray) -> np.ndarray:
    """Quaternion exponential of a rotation vector (axis * angle)."""
    angle = np.linalg.norm(phi)
    if angle < _SMALL_ANGLE:
        # sin(a/2)/a ~ 1/2 - a^2/48
        s = 0.5 - angle * angle / 48.0
        q = np.empty(4)
        q[0] = np.cos(0.5 * angle)
        q[1:] = s * phi
        return quat_normalize(q)
    q = np.empty(4)
    q[0] = np.cos(0.5 * angle)
    q[1:] = np.sin(0.5 * angle) / angle * phi
    return q


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    """Rotation vector of a unit quaternion, with |angle| <= pi."""
    if q[0] < 0.0:  # shortest-path branch
        q = -q
    vn = np.linalg.norm(q[1:])
    if vn < _SMALL_ANGLE:
        # 2 v / w with the first curvature term
        return (2.0 / q[0]) * q[1:] * (1.0 - vn * vn / (3.0 * q[0] * q[0]))
    angle = 2.0 * np.arctan2(vn, q[0])
    return q[1:] * (angle / vn)


def skew(v: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def right_jacobian(phi: np.ndarray) -> np.ndarray:
    """Right Jacobian of SO(3): d Log(Exp(phi) Exp(d_phi)) / d d_phi at 0."""
    angle = np.sqrt(phi @ phi)
    s = skew(phi)
    if angle < 1e-7:
        return _EYE3 - 0.5 * s + (1.0 / 6.0) * (s @ s)
    a2 = angle * angle
    return (
        _EYE3
        - (1.0 - np.cos(angle)) / a2 * s
        + (angle - np.sin(angle)) / (a2 * angle) * (s @ s)
    )


def right_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    angle = np.sqrt(phi @ phi)
    s = skew(phi)
    if angle < 1e-7:
        return _EYE3 + 0.5 * s + (1.0 / 12.0) * (s @ s)
    a2 = angle * angle
    coef = 1.0 / a2 - (1.0 + np.cos(angle)) / (2.0 * angle * np.sin(angle))
    return _EYE3 + 0.5 * s + coef * (s @ s)
