"""Contact localization on the probe from a single force/torque reading.

A single point contact with no free moment constrains the contact to the line
of action ``{l0 + s F}``, where ``l0 = F x T / |F|^2`` is the effective arm.
Candidates are probe vertices; a friction-cone check on the vertex contact
normal separates the two places where a convex probe meets that line.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .geometry.transforms import Pose
from .sensing import Wrench

CONE_HALF_ANGLE = np.pi / 4


class NoEstimate(Exception):
    """Raised when the force is too small to localize a contact."""


@dataclass(frozen=True, eq=False)
class FtEstimate:
    contact_world: np.ndarray
    residual: float
    cone_violated: bool
    vertex_index: int = -1


def effective_arm(w: Wrench) -> np.ndarray:
    f = np.asarray(w.force, dtype=float)
    f2 = float(f @ f)
    if f2 == 0:
        raise ValueError("zero force has no line of action")
    return np.cross(f, w.torque) / f2


def project_vertex(x, l0):
    """Projection of ``x`` onto span(l0); returns ``(projection, degenerate)``.

    A zero arm means the line of action passes through the sensor origin, in
    which case the projection is the zero vector and the flag is set.
    """
    x = np.asarray(x, dtype=float)
    l0 = np.asarray(l0, dtype=float)
    n2 = float(l0 @ l0)
    if n2 == 0:
        return np.zeros_like(x), True
    s = (x @ l0) / n2
    return np.multiply.outer(s, l0), False


def arm_residuals(vertices, w: Wrench, objective: str = "line") -> np.ndarray:
    """Per-vertex distance term.

    ``"arm"`` is the distance between a vertex's projection on the arm and the
    arm itself, which only measures the component along ``l0``. ``"line"``
    adds the component along ``F x l0`` and is the distance to the line of
    action.
    """
    v = np.asarray(vertices, dtype=float)
    l0 = effective_arm(w)
    f_hat = w.force / np.linalg.norm(w.force)
    if objective == "arm":
        proj, _ = project_vertex(v, l0)
        return np.linalg.norm(proj - l0, axis=1)
    if objective != "line":
        raise ValueError(f"unknown objective {objective!r}")
    rel = v - l0
    perp = rel - np.outer(rel @ f_hat, f_hat)
    return np.linalg.norm(perp, axis=1)


def ft_objective(w: Wrench, vertices, contact_normals, lam: float = 1.0, objective: str = "line"):
    """Returns ``(cost, residual, violated)`` arrays over vertices."""
    res = arm_residuals(vertices, w, objective)
    f_hat = w.force / np.linalg.norm(w.force)
    violated = (np.asarray(contact_normals) @ -f_hat) < np.cos(CONE_HALF_ANGLE)
    return res + lam * violated, res, violated


def ft_localize(
    w: Wrench,
    vertices,
    contact_normals,
    lam: float = 1.0,
    force_threshold: float = 2.0,
    probe_pose: Pose | None = None,
    objective: str = "line",
) -> FtEstimate:
    """Best probe vertex for the wrench, ties going to the lowest index.

    ``vertices`` and ``contact_normals`` are in the sensor frame; the normals
    point into the probe, i.e. along the push an object would exert there.
    """
    if np.linalg.norm(w.force) <= force_threshold:
        raise NoEstimate("force below threshold")
    cost, res, violated = ft_objective(w, vertices, contact_normals, lam, objective)
    k = int(np.argmin(cost))
    x = np.asarray(vertices[k], dtype=float)
    if probe_pose is not None:
        x = probe_pose.apply(x[None])[0]
    return FtEstimate(x, float(res[k]), bool(violated[k]), k)


def smooth_window(history, k: int = 10) -> np.ndarray:
    """Mean contact of the last ``k`` estimates."""
    items = list(history)[-k:]
    if not items:
        raise ValueError("empty history")
    pts = np.array([h.contact_world if isinstance(h, FtEstimate) else h for h in items], dtype=float)
    return pts.mean(axis=0)


class FtWindow:
    """Ring buffer of recent estimates for one probe stream."""

    def __init__(self, k: int = 10):
        self.k = k
        self._buf = deque(maxlen=k)

    def push(self, est: FtEstimate):
        self._buf.append(est)

    def clear(self):
        self._buf.clear()

    def __len__(self):
        return len(self._buf)

    def mean(self) -> np.ndarray:
        return smooth_window(self._buf, self.k)


def ft_contact_normal(w: Wrench, probe_pose: Pose | None = None) -> np.ndarray:
    """Frictionless estimate of the object's outward normal, ``-F/|F|`` in world coordinates."""
    f = np.asarray(w.force, dtype=float)
    n = np.linalg.norm(f)
    if n == 0:
        raise ValueError("zero force")
    out = -f / n
    return out if probe_pose is None else probe_pose.rotate(out)
