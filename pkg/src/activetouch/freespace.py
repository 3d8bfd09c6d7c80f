"""Voxel map of workspace volume certified free by probe motion."""

from __future__ import annotations

import numpy as np

from .geometry.transforms import Pose, quat_mul, quat_conj
from .sensing import sweep_vertices

WORKSPACE_CENTER = (0.0, 0.5, 0.5)
WORKSPACE_SIZE = 1.0
RESOLUTION = 200


class FreeSpaceMap:
    """Bit-packed 200^3 occupancy grid; bit 1 means free.

    Voxel ``(ix, iy, iz)`` has linear index ``(ix * n + iy) * n + iz`` and lives
    in byte ``index >> 3`` at bit ``7 - (index & 7)`` (numpy ``packbits`` order).
    """

    def __init__(self, center=WORKSPACE_CENTER, size=WORKSPACE_SIZE, n=RESOLUTION):
        self.n = int(n)
        self.size = float(size)
        self.voxel = self.size / self.n
        self.lo = np.asarray(center, dtype=float) - self.size / 2
        self.bits = np.zeros((self.n ** 3 + 7) // 8, dtype=np.uint8)
        self.ignored = 0
        self.n_free = 0

    @property
    def n_voxels(self):
        return self.n ** 3

    def copy(self) -> "FreeSpaceMap":
        out = FreeSpaceMap.__new__(FreeSpaceMap)
        out.__dict__.update(self.__dict__)
        out.bits = self.bits.copy()
        return out

    def voxel_index(self, points):
        """Linear indices of the voxels containing ``points``; -1 outside the workspace."""
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        ijk = np.floor((p - self.lo) / self.voxel).astype(np.int64)
        inside = np.all((ijk >= 0) & (ijk < self.n), axis=1)
        lin = (ijk[:, 0] * self.n + ijk[:, 1]) * self.n + ijk[:, 2]
        return np.where(inside, lin, -1)

    def unravel(self, index):
        index = np.asarray(index, dtype=np.int64)
        return np.stack([index // (self.n * self.n), (index // self.n) % self.n, index % self.n], axis=-1)

    def voxel_center(self, index):
        return self.lo + (self.unravel(index) + 0.5) * self.voxel

    def _get(self, lin):
        return (self.bits[lin >> 3] >> (7 - (lin & 7)).astype(np.uint8)) & 1

    def is_free(self, points) -> np.ndarray:
        lin = self.voxel_index(points)
        out = np.zeros(len(lin), dtype=bool)
        ok = lin >= 0
        out[ok] = self._get(lin[ok]).astype(bool)
        return out

    def set_indices(self, lin) -> np.ndarray:
        """Set voxels by linear index; returns the sorted indices that were newly set."""
        lin = np.unique(np.asarray(lin, dtype=np.int64))
        if len(lin) == 0:
            return lin
        if lin[0] < 0 or lin[-1] >= self.n_voxels:
            raise ValueError("voxel index out of range")
        new = lin[self._get(lin) == 0]
        np.bitwise_or.at(self.bits, new >> 3, (1 << (7 - (new & 7))).astype(np.uint8))
        self.n_free += len(new)
        return new

    def mark_free(self, vertices) -> np.ndarray:
        lin = self.voxel_index(vertices)
        self.ignored += int(np.count_nonzero(lin < 0))
        return self.set_indices(lin[lin >= 0])

    def free_indices(self) -> np.ndarray:
        return np.flatnonzero(np.unpackbits(self.bits)[: self.n_voxels])


def count_violations_points(fmap: FreeSpaceMap, points) -> int:
    return int(np.count_nonzero(fmap.is_free(points)))


def count_violations(fmap: FreeSpaceMap, hyp, priors) -> int:
    """Number of the hypothesis' feature points that fall in free voxels."""
    prior = priors[hyp.class_id]
    return count_violations_points(fmap, hyp.pose.apply(prior.feature_points))


def count_violations_batch(fmap: FreeSpaceMap, class_ids, rotations, translations, priors) -> np.ndarray:
    """Per-hypothesis violation counts for arrays of poses."""
    class_ids = np.asarray(class_ids)
    out = np.zeros(len(class_ids), dtype=np.int64)
    if fmap.n_free == 0:
        return out
    for c in np.unique(class_ids):
        sel = np.flatnonzero(class_ids == c)
        fp = priors[int(c)].feature_points
        pts = np.matmul(fp[None], rotations[sel].transpose(0, 2, 1)) + translations[sel, None, :]
        out[sel] = fmap.is_free(pts.reshape(-1, 3)).reshape(len(sel), -1).sum(1)
    return out


def _slerp(q0, q1, s):
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    if q0 @ q1 < 0:
        q1 = -q1
    rel = quat_mul(quat_conj(q0), q1)
    angle = 2 * np.arctan2(np.linalg.norm(rel[1:]), rel[0])
    if angle < 1e-12:
        return np.tile(q0, (len(s), 1))
    axis = rel[1:] / np.linalg.norm(rel[1:])
    half = np.asarray(s)[:, None] * angle / 2
    step = np.concatenate([np.cos(half), np.sin(half) * axis], axis=1)
    return quat_mul(q0, step)


def interpolate_poses(pose_a: Pose, pose_b: Pose, step: float, reach: float = 0.0):
    """Poses from ``pose_a`` to ``pose_b`` with no point within ``reach`` of the origin moving more than ``step``."""
    if step <= 0:
        raise ValueError("step must be positive")
    dt = np.linalg.norm(pose_b.translation - pose_a.translation)
    qa, qb = pose_a.rotation, pose_b.rotation
    dot = min(1.0, abs(float(qa @ qb)))
    angle = 2 * np.arccos(dot)
    length = dt + angle * reach
    k = int(np.ceil(length / step - 1e-12)) if length > 0 else 0
    s = np.linspace(0.0, 1.0, k + 1)
    t = pose_a.translation + s[:, None] * (pose_b.translation - pose_a.translation)
    q = _slerp(qa, qb, s)
    return [Pose(t[i], q[i]) for i in range(k + 1)]


def swept_volume_of_segment(pose_a: Pose, pose_b: Pose, probe_mesh, step: float = 0.0025, margin: float = 0.01):
    """Shrunken probe vertices at poses sampled along the segment, stacked as one (N, 3) array."""
    reach = float(np.linalg.norm(probe_mesh.vertices, axis=1).max())
    poses = interpolate_poses(pose_a, pose_b, step, reach)
    return np.concatenate([sweep_vertices(p, probe_mesh, margin) for p in poses]), len(poses)
