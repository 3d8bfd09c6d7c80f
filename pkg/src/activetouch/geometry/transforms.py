"""Rigid transforms with unit quaternions stored as (w, x, y, z)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise ValueError("zero quaternion")
    return q / n


def quat_mul(a, b):
    """Hamilton product ``a * b`` (broadcasts over leading axes)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    angle = np.asarray(angle, dtype=float)[..., None]
    return np.concatenate([np.cos(angle / 2), np.sin(angle / 2) * axis], axis=-1)


def quat_to_matrix(q):
    q = quat_normalize(q)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return m.reshape(q.shape[:-1] + (3, 3))


def matrix_to_quat(m):
    """Rotation matrix (..., 3, 3) to quaternion with non-negative w."""
    m = np.asarray(m, dtype=float)
    flat = m.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    for k, r in enumerate(flat):
        tr = np.trace(r)
        if tr > 0:
            s = np.sqrt(tr + 1.0) * 2
            q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
            s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
            q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif r[1, 1] > r[2, 2]:
            s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
            q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
            q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        q = np.asarray(q)
        out[k] = q / np.linalg.norm(q) * (1.0 if q[0] >= 0 else -1.0)
    return out.reshape(m.shape[:-2] + (4,))


def rotation_between(a, b, fallback_axis=None):
    """Minimal rotation matrix taking unit vector ``a`` onto unit vector ``b``.

    For antiparallel inputs the rotation is pi about ``fallback_axis`` (or a
    deterministic axis perpendicular to ``a``).
    """
    a = np.asarray(a, dtype=float) / np.linalg.norm(a)
    b = np.asarray(b, dtype=float) / np.linalg.norm(b)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    c = float(np.dot(a, b))
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        axis = perpendicular_axis(a) if fallback_axis is None else np.asarray(fallback_axis, float)
        return axis_angle_matrix(axis, np.pi)
    return axis_angle_matrix(axis / s, np.arctan2(s, c))


def perpendicular_axis(v):
    """Deterministic unit vector orthogonal to ``v``."""
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    helper = np.eye(3)[int(np.argmin(np.abs(v)))]
    p = helper - np.dot(helper, v) * v
    return p / np.linalg.norm(p)


def axis_angle_matrix(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def rotvec_matrix(rv):
    rv = np.asarray(rv, dtype=float)
    angle = np.linalg.norm(rv)
    if angle < 1e-15:
        return np.eye(3)
    return axis_angle_matrix(rv / angle, angle)


def euler_matrices(angles):
    """Batch of xyz Euler rotations ``R = Rz @ Ry @ Rx``; ``angles`` is (N, 3) in radians."""
    a = np.asarray(angles, dtype=float)
    cx, cy, cz = np.cos(a).T
    sx, sy, sz = np.sin(a).T
    m = np.empty((a.shape[0], 3, 3))
    m[:, 0, 0] = cz * cy
    m[:, 0, 1] = cz * sy * sx - sz * cx
    m[:, 0, 2] = cz * sy * cx + sz * sx
    m[:, 1, 0] = sz * cy
    m[:, 1, 1] = sz * sy * sx + cz * cx
    m[:, 1, 2] = sz * sy * cx - cz * sx
    m[:, 2, 0] = -sy
    m[:, 2, 1] = cy * sx
    m[:, 2, 2] = cy * cx
    return m


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform mapping canonical (object/probe) coordinates to world."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(3)
        q = quat_normalize(np.array(self.rotation, dtype=float).reshape(4))
        t.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, rotation: np.ndarray, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(translation, matrix_to_quat(rotation))

    @property
    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def as_homogeneous(self) -> np.ndarray:
        h = np.eye(4)
        h[:3, :3] = self.matrix
        h[:3, 3] = self.translation
        return h

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.matrix.T + self.translation

    def rotate(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.matrix.T

    def inverse(self) -> "Pose":
        qi = quat_conj(self.rotation)
        return Pose(-quat_to_matrix(qi) @ self.translation, qi)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first."""
        return Pose(self.apply(other.translation), quat_mul(self.rotation, other.rotation))

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def to_list(self) -> list:
        return [float(v) for v in self.translation] + [float(v) for v in self.rotation]

    @classmethod
    def from_list(cls, values) -> "Pose":
        values = list(values)
        return cls(values[:3], values[3:7])

    def almost_equal(self, other: "Pose", tol: float = 1e-9) -> bool:
        dq = min(np.abs(self.rotation - other.rotation).max(), np.abs(self.rotation + other.rotation).max())
        return bool(np.abs(self.translation - other.translation).max() <= tol and dq <= tol)


def identity_pose() -> Pose:
    return Pose()
