"""Synthetic tactile and wrench measurements generated from a ground-truth object."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .geometry.labels import LabelConfig, surface_label
from .geometry.mesh import MeshShape, TriMesh
from .geometry.priors import Hypothesis
from .geometry.shapes import Box
from .geometry.transforms import Pose, perpendicular_axis, rotvec_matrix

SOURCES = ("gelsight", "ft")
CONTACT_LABELS = ("flat", "curved", "edge", "corner", "none")


@dataclass(frozen=True)
class NoiseConfig:
    gelsight_point_sigma: float = 0.0012
    gelsight_normal_sigma: float = float(np.deg2rad(3.0))
    ft_point_sigma: float = 0.0007
    force_sigma: float = 0.0
    torque_sigma: float = 0.0
    friction_angle_max_deg: float = 5.0
    mislabel_prob: float = 0.0
    gel_radius: float = 0.006
    gel_depth: float = 0.0015
    depth_threshold: float = 0.0005
    patch_points: int = 10

    @classmethod
    def noise_free(cls, **kw):
        base = dict(gelsight_point_sigma=0.0, gelsight_normal_sigma=0.0, ft_point_sigma=0.0, friction_angle_max_deg=0.0)
        base.update(kw)
        return cls(**base)


@dataclass(frozen=True, eq=False)
class OrientedContact:
    point: np.ndarray
    normal: np.ndarray
    source: str = "gelsight"
    label: str = "none"

    def __post_init__(self):
        p = np.array(self.point, dtype=float).reshape(3)
        n = np.array(self.normal, dtype=float).reshape(3)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise ValueError("contact normal must be non-zero")
        n = n / norm
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if self.label not in CONTACT_LABELS:
            raise ValueError(f"unknown label {self.label!r}")
        if (self.label == "none") != (self.source == "ft"):
            raise ValueError("ft contacts carry no label and gelsight contacts always carry one")
        object.__setattr__(self, "point", p)
        object.__setattr__(self, "normal", n)

    def to_dict(self):
        return {"point": self.point.tolist(), "normal": self.normal.tolist(), "source": self.source, "label": self.label}

    @classmethod
    def from_dict(cls, d):
        out = cls(d["point"], d["normal"], d["source"], d["label"])
        # keep the stored unit normal bit for bit instead of renormalizing it
        object.__setattr__(out, "normal", np.array(d["normal"], dtype=float).reshape(3))
        return out


@dataclass(frozen=True, eq=False)
class ContactPatch:
    contacts: tuple
    label: str
    patch_center: np.ndarray

    def __post_init__(self):
        if not 1 <= len(self.contacts) <= 10:
            raise ValueError("a patch holds between 1 and 10 contacts")
        object.__setattr__(self, "contacts", tuple(self.contacts))
        object.__setattr__(self, "patch_center", np.array(self.patch_center, dtype=float).reshape(3))

    def to_dict(self):
        return {
            "label": self.label,
            "patch_center": self.patch_center.tolist(),
            "contacts": [c.to_dict() for c in self.contacts],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(OrientedContact.from_dict(c) for c in d["contacts"]), d["label"], d["patch_center"])


@dataclass(frozen=True, eq=False)
class Wrench:
    force: np.ndarray
    torque: np.ndarray

    def __post_init__(self):
        f = np.array(self.force, dtype=float).reshape(3)
        t = np.array(self.torque, dtype=float).reshape(3)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(t))):
            raise ValueError("wrench components must be finite")
        object.__setattr__(self, "force", f)
        object.__setattr__(self, "torque", t)


class EmptyPatchError(RuntimeError):
    pass


# --- probe geometry -----------------------------------------------------


def grid_box_mesh(lo, hi, spacing) -> TriMesh:
    """Closed box mesh whose faces are regular grids with at most ``spacing`` between vertices."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    counts = np.maximum(1, np.ceil((hi - lo) / spacing - 1e-9).astype(int))
    verts, faces = [], []
    offset = 0
    for axis in range(3):
        a1, a2 = [k for k in range(3) if k != axis]
        for side, value in ((0, lo[axis]), (1, hi[axis])):
            u = np.linspace(lo[a1], hi[a1], counts[a1] + 1)
            v = np.linspace(lo[a2], hi[a2], counts[a2] + 1)
            uu, vv = np.meshgrid(u, v, indexing="ij")
            pts = np.zeros(uu.shape + (3,))
            pts[..., axis] = value
            pts[..., a1] = uu
            pts[..., a2] = vv
            nu, nv = uu.shape
            idx = np.arange(nu * nv).reshape(nu, nv) + offset
            q00, q10, q01, q11 = idx[:-1, :-1], idx[1:, :-1], idx[:-1, 1:], idx[1:, 1:]
            t1 = np.stack([q00, q10, q11], -1).reshape(-1, 3)
            t2 = np.stack([q00, q11, q01], -1).reshape(-1, 3)
            tri = np.concatenate([t1, t2])
            # (a1, a2, axis) is right handed for axis 0 and 2, left handed for axis 1
            flip = (side == 0) != (axis == 1)
            if flip:
                tri = tri[:, [0, 2, 1]]
            verts.append(pts.reshape(-1, 3))
            faces.append(tri)
            offset += nu * nv
    verts = np.concatenate(verts)
    faces = np.concatenate(faces)
    key = np.round(verts / (spacing * 1e-3)).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    return TriMesh(verts[first], inverse.reshape(-1)[faces])


@dataclass(eq=False)
class Probe:
    """Box-shaped fingertip whose local origin is the gel centre; the gel faces local +z."""

    half_width: float = 0.02
    length: float = 0.10
    vertex_spacing: float = 0.002
    sweep_spacing: float = 0.004
    mesh: TriMesh = field(init=False)
    sweep_mesh: TriMesh = field(init=False)

    def __post_init__(self):
        lo = np.array([-self.half_width, -self.half_width, -self.length])
        hi = np.array([self.half_width, self.half_width, 0.0])
        self.mesh = grid_box_mesh(lo, hi, self.vertex_spacing)
        self.sweep_mesh = grid_box_mesh(lo, hi, self.sweep_spacing)
        self.box = Box(self.half_width, self.half_width, self.length / 2)
        self.center = np.array([0.0, 0.0, -self.length / 2])
        self.gel_axis = np.array([0.0, 0.0, 1.0])
        self.vertices = self.mesh.vertices
        # inward normals: the direction an object pushing on that vertex would face
        self.contact_normals = -self.mesh.vertex_normals()

    def sdf(self, local_points):
        return self.box.sdf(np.asarray(local_points) - self.center)

    def sdf_normal(self, local_points):
        return self.box.sdf_normal(np.asarray(local_points) - self.center)

    def project(self, local_points):
        return self.box.project(np.asarray(local_points) - self.center) + self.center

    def on_gel(self, local_point, tol=1e-3) -> bool:
        p = np.asarray(local_point)
        return bool(abs(p[2]) <= tol and np.all(np.abs(p[:2]) <= self.half_width + tol))


# --- measurements -------------------------------------------------------


def _canonical(truth: Hypothesis, priors, pts):
    prior = priors[truth.class_id]
    return prior.shape, truth.pose.inverse().apply(np.asarray(pts, dtype=float).reshape(-1, 3))


def _tangent_basis(n):
    u = perpendicular_axis(n)
    return u, np.cross(n, u)


def _perturb_normals(normals, sigma, rng):
    if sigma <= 0:
        return normals
    out = np.empty_like(normals)
    for k, n in enumerate(normals):
        u, v = _tangent_basis(n)
        a, b = rng.normal(0.0, sigma, 2)
        out[k] = rotvec_matrix(a * u + b * v) @ n
    return out


def point_noise_scale(mean_distance: float) -> float:
    """Per-axis std of isotropic noise whose mean offset along any fixed direction is ``mean_distance``."""
    return mean_distance * np.sqrt(np.pi / 2)


def classify_contact_geometric(truth: Hypothesis, priors, patch_center, cfg: LabelConfig = LabelConfig()) -> str:
    shape, local = _canonical(truth, priors, patch_center)
    return surface_label(shape, local[0], cfg)


def _disc_offsets(n=127):
    # sunflower layout gives near-uniform density over the unit disc
    k = np.arange(n) + 0.5
    r = np.sqrt(k / n)
    theta = k * np.pi * (3 - np.sqrt(5))
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)


_DISC = _disc_offsets()


def simulate_patch(
    truth: Hypothesis,
    priors,
    contact_point,
    gel_normal,
    noise: NoiseConfig,
    rng,
    label_cfg: LabelConfig = LabelConfig(),
) -> ContactPatch:
    """Noisy GelSight-style patch around ``contact_point``.

    ``gel_normal`` is the direction the gel faces (into the object). The gel is
    modelled as a plane pressed ``gel_depth`` past the touched surface point;
    samples whose indentation exceeds ``depth_threshold`` are kept.
    """
    shape, local = _canonical(truth, priors, contact_point)
    R = truth.pose.matrix
    g = R.T @ (np.asarray(gel_normal, dtype=float) / np.linalg.norm(gel_normal))
    c = shape.project(local, iterations=3)[0]
    u, v = _tangent_basis(g)
    disc = c + noise.gel_radius * (_DISC[:, :1] * u + _DISC[:, 1:] * v)
    back = 0.01
    origin = disc - back * g
    t = np.zeros(len(disc))
    alive = np.ones(len(disc), dtype=bool)
    for _ in range(64):
        d = shape.sdf(origin + t[:, None] * g)
        hit = np.abs(d) < 1e-7
        alive &= t < back + 0.02
        step = np.where(alive & ~hit, d, 0.0)
        # overshoot can leave d negative; step back along the ray in that case
        t = t + step
        if not np.any(alive & ~hit):
            break
    hits = origin + t[:, None] * g
    depth = back + noise.gel_depth - t
    keep = alive & (np.abs(shape.sdf(hits)) < 1e-6) & (depth > noise.depth_threshold)
    if not np.any(keep):
        raise EmptyPatchError("no surface within the gel footprint")
    pts = shape.project(hits[keep], iterations=2)
    pts = pts[np.linalg.norm(pts - c, axis=1) <= noise.gel_radius + 1e-9]
    if len(pts) == 0:
        raise EmptyPatchError("no surface within the gel footprint")
    if len(pts) > noise.patch_points:
        pts = pts[np.sort(rng.choice(len(pts), noise.patch_points, replace=False))]
    _, nrm, _ = shape.sdf_normal(pts)

    world_pts = truth.pose.apply(pts)
    world_nrm = truth.pose.rotate(nrm)
    if noise.gelsight_point_sigma > 0:
        world_pts = world_pts + rng.normal(0.0, point_noise_scale(noise.gelsight_point_sigma), world_pts.shape)
    world_nrm = _perturb_normals(world_nrm, noise.gelsight_normal_sigma, rng)

    label = surface_label(shape, c, label_cfg)
    if noise.mislabel_prob > 0 and rng.random() < noise.mislabel_prob:
        others = [lab for lab in CONTACT_LABELS[:4] if lab != label]
        label = others[int(rng.integers(len(others)))]
    contacts = tuple(OrientedContact(p, n, "gelsight", label) for p, n in zip(world_pts, world_nrm))
    return ContactPatch(contacts, label, truth.pose.apply(c))


def sample_cone(axis, max_angle, rng):
    """Unit vector uniform in solid angle within ``max_angle`` of ``axis``."""
    axis = np.asarray(axis, dtype=float) / np.linalg.norm(axis)
    if max_angle <= 0:
        return axis
    cos_t = 1.0 - rng.random() * (1.0 - np.cos(max_angle))
    sin_t = np.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    phi = rng.random() * 2 * np.pi
    u, v = _tangent_basis(axis)
    return cos_t * axis + sin_t * (np.cos(phi) * u + np.sin(phi) * v)


def simulate_wrench(
    truth: Hypothesis | None,
    priors,
    probe_pose: Pose,
    probe: Probe,
    contact,
    magnitude: float,
    friction_angle_max: float,
    rng,
    force_sigma: float = 0.0,
    torque_sigma: float = 0.0,
    surface_normal=None,
) -> Wrench:
    """Sensor-frame wrench for a single point contact at world point ``contact``.

    The reaction (object on probe) is drawn inside the friction cone around the
    object's outward normal; ``F`` is its negation, ``T = x × F`` with ``x`` the
    contact in sensor coordinates. ``friction_angle_max`` is in degrees.
    """
    if magnitude <= 0:
        raise ValueError("magnitude must be positive")
    x_local = probe_pose.inverse().apply(np.asarray(contact, dtype=float).reshape(1, 3))[0]
    if abs(probe.sdf(x_local[None])[0]) > 1e-4:
        raise ValueError("contact is not on the probe surface")
    if surface_normal is None:
        shape, local = _canonical(truth, priors, contact)
        _, n_obj, _ = shape.sdf_normal(local)
        n_obj = truth.pose.rotate(n_obj[0])
    else:
        n_obj = np.asarray(surface_normal, dtype=float)
    reaction = sample_cone(n_obj, np.deg2rad(friction_angle_max), rng)
    f_world = -magnitude * reaction
    f = probe_pose.matrix.T @ f_world
    t = np.cross(x_local, f)
    if force_sigma > 0:
        f = f + rng.normal(0.0, force_sigma, 3)
    if torque_sigma > 0:
        t = t + rng.normal(0.0, torque_sigma, 3)
    return Wrench(f, t)


@lru_cache(maxsize=16)
def _shrunk_vertices(mesh: TriMesh, margin: float):
    if margin == 0:
        return mesh.vertices
    vn = mesh.vertex_normals()
    dots = mesh.min_incident_dot(vn)
    ok = dots > 1e-6
    moved = mesh.vertices - (margin / np.where(ok, dots, 1.0))[:, None] * vn
    d = MeshShape(mesh.vertices, mesh.faces).exact_sdf_normal(moved)[0]
    keep = ok & (d <= -margin + 1e-7)
    out = moved[keep]
    out.setflags(write=False)
    return out


def sweep_vertices(probe_pose: Pose, probe_mesh: TriMesh, margin: float) -> np.ndarray:
    """World-frame probe vertices pulled inward by ``margin``; vertices where the body is too thin are dropped."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    return probe_pose.apply(_shrunk_vertices(probe_mesh, float(margin)))
