"""Grasp pose representation and the straight-line flow path.

A grasp is a unit quaternion (w, x, y, z) plus a gripper-center position in
the table frame (z up, table plane at z = 0, meters). The gripper frame has
its x axis along the closing direction and its z axis along the approach
direction, so a top-down grasp has its z axis pointing at -z world.

The flow operates on raw 7-vectors ``[qw, qx, qy, qz, px, py, pz]``; the
quaternion block is renormalized only when converting back to a pose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_WIDTH = 0.08
_NORM_TOL = 1e-9


def normalize_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n < 1e-12:
        raise ValueError(f"cannot normalize quaternion {q!r}")
    return q / n


def quat_mul(q1, q2) -> np.ndarray:
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = normalize_quat(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def top_down_quat(yaw: float) -> np.ndarray:
    """Orientation whose approach axis is -z and closing axis has heading ``yaw``.

    Equals ``Rz(yaw) * Rx(pi)``, which works out to ``[0, cos(yaw/2), sin(yaw/2), 0]``.
    """
    return np.array([0.0, np.cos(yaw / 2), np.sin(yaw / 2), 0.0])


def grasp_yaw(q) -> float:
    """Heading of the closing axis projected onto the table plane."""
    x_axis = quat_to_matrix(q)[:, 0]
    if np.hypot(x_axis[0], x_axis[1]) < 1e-12:
        # closing axis vertical: fall back to the heading of the gripper y axis
        y_axis = quat_to_matrix(q)[:, 1]
        return float(np.arctan2(y_axis[1], y_axis[0]) - np.pi / 2)
    return float(np.arctan2(x_axis[1], x_axis[0]))


def tilt_angle(q) -> float:
    """Angle between the approach axis and straight down (-z)."""
    approach = quat_to_matrix(q)[:, 2]
    return float(np.arccos(np.clip(-approach[2], -1.0, 1.0)))


@dataclass(frozen=True)
class GraspPose:
    orientation: np.ndarray
    position: np.ndarray
    width: float = DEFAULT_WIDTH

    def __post_init__(self):
        q = np.asarray(self.orientation, dtype=np.float64).reshape(4)
        p = np.asarray(self.position, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(q) - 1.0) > _NORM_TOL:
            q = normalize_quat(q)
        object.__setattr__(self, "orientation", q)
        object.__setattr__(self, "position", p)

    @classmethod
    def from_vec7(cls, vec, width: float = DEFAULT_WIDTH) -> "GraspPose":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (7,):
            raise ValueError(f"expected a 7-vector, got shape {vec.shape}")
        return cls(normalize_quat(vec[:4]), vec[4:].copy(), width)

    def to_vec7(self) -> np.ndarray:
        return to_vec7(self)


def to_vec7(pose: GraspPose) -> np.ndarray:
    return np.concatenate([pose.orientation, pose.position])


def from_vec7(vec, width: float = DEFAULT_WIDTH) -> GraspPose:
    return GraspPose.from_vec7(vec, width)


def hemisphere_align(g0, g1) -> np.ndarray:
    """Return ``g1`` with its quaternion negated when it points away from ``g0``'s."""
    g0 = np.asarray(g0, dtype=np.float64)
    g1 = np.array(g1, dtype=np.float64)
    if np.dot(g0[:4], g1[:4]) < 0:
        g1[:4] = -g1[:4]
    return g1


def interpolate_pose(g0, g1, t: float) -> np.ndarray:
    """Point at progression ``t`` on the straight path from ``g0`` to ``g1``.

    The quaternion block is interpolated raw, without renormalization.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"progression t must lie in [0, 1], got {t}")
    g0 = np.asarray(g0, dtype=np.float64)
    g1 = np.asarray(g1, dtype=np.float64)
    return (1.0 - t) * g0 + t * g1


def target_velocity(g0, g1) -> np.ndarray:
    return np.asarray(g1, dtype=np.float64) - np.asarray(g0, dtype=np.float64)


def pose_error(a: GraspPose, b: GraspPose) -> tuple[float, float]:
    """Rotation angle (rad, sign-invariant) and position distance (m) between poses."""
    d = abs(float(np.dot(a.orientation, b.orientation)))
    angle = 2.0 * np.arccos(min(d, 1.0))
    return float(angle), float(np.linalg.norm(a.position - b.position))
