"""Next-touch selection on the MAP shape and probe pose geometry."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry.transforms import Pose, axis_angle_matrix, perpendicular_axis

PRE_TOUCH_OFFSET = 0.03
TOUCH_ADVANCE = 0.05
MAX_SERVO_ANGLE = np.pi / 4


class NoTarget(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TargetProposal:
    point: np.ndarray
    normal: np.ndarray
    score: float
    index: int = -1


@dataclass(frozen=True, eq=False)
class ProbePlan:
    pre_touch: Pose
    touch: Pose
    fallback: Pose
    roll_angle: float


def admissible(points, normals, h) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    normals = np.asarray(normals, dtype=float)
    return (points[:, 2] > h) & (normals[:, 2] >= 0)


def select_target(points, normals, contacts, unreachable, h: float) -> TargetProposal:
    """Admissible candidate farthest from every contact and failed target.

    With no contacts or failed targets yet, the highest admissible candidate
    wins. Ties go to the lowest index.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    normals = np.asarray(normals, dtype=float).reshape(-1, 3)
    ok = np.flatnonzero(admissible(points, normals, h))
    if len(ok) == 0:
        raise NoTarget("no admissible target on the MAP shape")
    refs = [np.asarray(a, dtype=float).reshape(-1, 3) for a in (contacts, unreachable) if a is not None and len(a)]
    if not refs:
        k = ok[int(np.argmax(points[ok, 2]))]
        return TargetProposal(points[k], normals[k], float("inf"), int(k))
    ref = np.vstack(refs)
    d2 = ((points[ok, None, :] - ref[None]) ** 2).sum(-1).min(axis=1)
    j = int(np.argmax(d2))
    k = ok[j]
    return TargetProposal(points[k], normals[k], float(np.sqrt(d2[j])), int(k))


def gel_orientation(direction, roll: float, gel_axis_local=(0.0, 0.0, 1.0), reference: np.ndarray | None = None):
    """Orientation whose gel axis points along ``direction`` after a roll about the gel axis.

    Built as ``u_r u_n u``: reference orientation ``u``, roll ``u_n`` about the
    gel axis, then the minimal rotation ``u_r`` carrying the gel axis onto
    ``direction``.
    """
    u = np.eye(3) if reference is None else np.asarray(reference, dtype=float)
    n_g = u @ (np.asarray(gel_axis_local, dtype=float) / np.linalg.norm(gel_axis_local))
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    u_n = axis_angle_matrix(n_g, roll)
    cross = np.cross(n_g, d)
    s = np.linalg.norm(cross)
    angle = np.arctan2(s, float(n_g @ d))
    axis = cross / s if s > 1e-12 else perpendicular_axis(n_g)
    u_r = axis_angle_matrix(axis, angle)
    return u_r @ u_n @ u


def plan_probe_poses(point, normal, roll: float, gel_axis_local=(0.0, 0.0, 1.0), prior_contacts=None) -> ProbePlan:
    """Pre-touch, touch and fallback poses of the gel centre for target ``(point, normal)``.

    ``normal`` is the outward surface normal. The pre-touch pose sits
    ``PRE_TOUCH_OFFSET`` outside the surface with the gel facing ``-normal``;
    the touch pose is ``TOUCH_ADVANCE`` further along ``-normal``.
    """
    n = np.asarray(normal, dtype=float)
    nn = np.linalg.norm(n)
    if nn == 0:
        raise ValueError("target normal must be non-zero")
    n = n / nn
    x = np.asarray(point, dtype=float)
    R = gel_orientation(-n, roll, gel_axis_local)
    pre = Pose.from_matrix(R, x + PRE_TOUCH_OFFSET * n)
    touch = Pose.from_matrix(R, pre.translation - TOUCH_ADVANCE * n)
    fallback = touch
    if prior_contacts is not None and len(prior_contacts):
        centroid = np.asarray(prior_contacts, dtype=float).reshape(-1, 3).mean(axis=0)
        d = centroid - touch.translation
        if np.linalg.norm(d) > 1e-9:
            fallback = Pose.from_matrix(gel_orientation(d, roll, gel_axis_local), centroid)
    return ProbePlan(pre, touch, fallback, float(roll))


# --- tactile servoing ---------------------------------------------------------


@dataclass(frozen=True)
class ServoConfig:
    k_f: float = 4.0
    k_t: float = 1.0
    f_star: float = 5.0
    # metres of commanded offset per newton of force error at k_f / k_t = 1
    length_per_newton: float = 1e-3


def servo_target(c, x_g, n_g, f_e, cfg: ServoConfig = ServoConfig()):
    """Commanded gel centre ``x_d`` and the rotation ``(axis, angle)`` aligning the gel with ``-f_e``."""
    f_e = np.asarray(f_e, dtype=float)
    fn = np.linalg.norm(f_e)
    if fn == 0:
        raise ValueError("servo target needs a non-zero external force")
    n_g = np.asarray(n_g, dtype=float)
    cross = np.cross(n_g, -f_e)
    s = np.linalg.norm(cross)
    theta = min(float(np.arctan2(s, float(n_g @ -f_e))), MAX_SERVO_ANGLE)
    axis = cross / s if s > 1e-12 * fn else perpendicular_axis(n_g)
    alpha = (cfg.k_f / cfg.k_t) * (cfg.f_star - fn) * cfg.length_per_newton
    x_d = np.asarray(c, dtype=float) - alpha * f_e / fn
    return x_d, axis, theta


@dataclass
class ServoState:
    position: np.ndarray
    rotation: np.ndarray

    @property
    def gel_normal(self):
        return self.rotation[:, 2]


@dataclass
class ServoReport:
    converged: bool
    steps: int
    max_theta: float
    final_theta: float
    final_force_error: float
    lost_at: int | None = None
    patch_offset: float = float("nan")
    history: list = field(default_factory=list)


class KinematicServoSim:
    """Gel disc pressed into a rigid shape with linear per-point stiffness.

    The world force on the sensor is the sum of ``k * depth * n`` over gel
    sample points inside the shape, where ``n`` is the shape's outward normal.
    """

    def __init__(self, shape, gel_radius=0.012, stiffness=3333.0, rings=4, position_gain=0.05, rotation_gain=0.2, cfg=ServoConfig()):
        self.shape = shape
        self.cfg = cfg
        self.position_gain = position_gain
        self.rotation_gain = rotation_gain
        pts = [np.zeros(2)]
        for r in range(1, rings + 1):
            m = 6 * r
            ang = np.arange(m) * 2 * np.pi / m
            pts += list(gel_radius * r / rings * np.stack([np.cos(ang), np.sin(ang)], 1))
        self.disc = np.asarray(pts)
        self.k_point = stiffness / len(self.disc)

    def measure(self, state: ServoState):
        p = state.position + self.disc[:, :1] * state.rotation[:, 0] + self.disc[:, 1:] * state.rotation[:, 1]
        d, n, _ = self.shape.sdf_normal(p)
        depth = np.maximum(-d, 0.0)
        if not np.any(depth > 0):
            return None, None
        force = self.k_point * (depth[:, None] * n).sum(0)
        c = (depth[:, None] * p).sum(0) / depth.sum()
        return force, c

    def step(self, state: ServoState):
        force, c = self.measure(state)
        if force is None:
            return None
        x_d, axis, theta = servo_target(c, state.position, state.gel_normal, force, self.cfg)
        pos = state.position + self.position_gain * (x_d - state.position)
        rot = axis_angle_matrix(axis, self.rotation_gain * theta) @ state.rotation
        return ServoState(pos, rot), theta

    def errors(self, state: ServoState):
        force, c = self.measure(state)
        if force is None:
            return None
        fn = np.linalg.norm(force)
        raw = float(np.arctan2(np.linalg.norm(np.cross(state.gel_normal, -force)), state.gel_normal @ -force))
        return raw, abs(fn - self.cfg.f_star), float(np.linalg.norm(c - state.position))


def servo_fixed_point_check(
    sim: KinematicServoSim, state: ServoState, max_steps=200, theta_tol_deg=1.0, force_tol=0.2, center_tol=None
):
    """Iterate the servo law until aligned at the target force, or report why not.

    ``center_tol`` optionally also requires the contact centroid to sit that
    close to the gel centre.
    """
    tol = np.deg2rad(theta_tol_deg)
    max_theta = 0.0
    hist = []
    for k in range(max_steps + 1):
        err = sim.errors(state)
        if err is None:
            return ServoReport(False, k, max_theta, float("nan"), float("nan"), lost_at=k, history=hist)
        raw, ferr, offset = err
        hist.append((raw, ferr))
        if raw < tol and ferr < force_tol and (center_tol is None or offset < center_tol):
            return ServoReport(True, k, max_theta, raw, ferr, patch_offset=offset, history=hist)
        if k == max_steps:
            break
        out = sim.step(state)
        if out is None:
            return ServoReport(False, k, max_theta, raw, ferr, lost_at=k, history=hist)
        state, theta = out
        max_theta = max(max_theta, theta)
    return ServoReport(False, max_steps, max_theta, raw, ferr, patch_offset=offset, history=hist)
