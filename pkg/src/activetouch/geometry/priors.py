"""Object priors: shape, oriented feature points and their pair table."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .labels import LabelConfig, surface_label
from .mesh import TriMesh, load_mesh
from .pairs import PairTable, build_pair_table
from .shapes import Box, Cylinder, LPrism, Shape, Sphere, shape_from_description
from .transforms import Pose

DEFAULT_SEED = 42


def sample_surface(vertices, faces, n: int, rng):
    """Stratified area-weighted samples on a triangle soup.

    Returns ``(points, triangle_index)``. Zero-area triangles never receive
    samples. Strata are ``n`` equal slices of the cumulative area, so counts per
    triangle stay within one of their expected value.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    v = np.asarray(vertices, dtype=float)
    f = np.asarray(faces)
    mesh = TriMesh(v, f)
    area = mesh.face_areas
    total = area.sum()
    if total <= 0:
        raise ValueError("mesh has no area")
    usable = np.flatnonzero(area > 0)
    cdf = np.cumsum(area[usable]) / total
    u = (np.arange(n) + rng.random(n)) / n
    tri = usable[np.minimum(np.searchsorted(cdf, u, side="right"), len(usable) - 1)]
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a, b, c = v[f[tri, 0]], v[f[tri, 1]], v[f[tri, 2]]
    pts = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
    return pts, tri


def sample_feature_points(shape: Shape, n: int = 200, seed: int = DEFAULT_SEED):
    """Oriented surface samples ``(points, normals)`` lying on the shape's exact surface."""
    rng = np.random.default_rng(seed)
    v, f = shape.tessellate()
    pts, _ = sample_surface(v, f, n, rng)
    pts = shape.project(pts, iterations=3)
    _, normals, _ = shape.sdf_normal(pts)
    return pts, normals


@dataclass(frozen=True, eq=False)
class Hypothesis:
    """Object class index plus its world pose."""

    class_id: int
    pose: Pose


@dataclass(eq=False)
class ObjectPrior:
    class_id: int
    name: str
    shape: Shape
    feature_points: np.ndarray
    feature_normals: np.ndarray
    feature_labels: np.ndarray
    pair_table: PairTable
    model_points: np.ndarray
    seed: int = DEFAULT_SEED
    bin_width: float = 0.01
    resting_height: float = 0.0
    _mesh: TriMesh | None = field(default=None, repr=False)

    @property
    def mesh(self) -> TriMesh:
        if self._mesh is None:
            self._mesh = TriMesh(*self.shape.tessellate())
        return self._mesh

    @property
    def radius(self) -> float:
        return float(np.linalg.norm(self.model_points, axis=1).max())


def make_prior(
    class_id: int,
    name: str,
    shape: Shape,
    n_features: int = 200,
    seed: int = DEFAULT_SEED,
    bin_width: float = 0.01,
    n_model: int = 1000,
    label_cfg: LabelConfig = LabelConfig(),
) -> ObjectPrior:
    pts, nrm = sample_feature_points(shape, n_features, seed)
    labels = np.array([surface_label(shape, p, label_cfg) for p in pts])
    model, _ = sample_feature_points(shape, n_model, seed + 1)
    v, _ = shape.tessellate()
    prior = ObjectPrior(
        class_id=class_id,
        name=name,
        shape=shape,
        feature_points=pts,
        feature_normals=nrm,
        feature_labels=labels,
        pair_table=build_pair_table(pts, nrm, bin_width),
        model_points=model,
        seed=seed,
        bin_width=bin_width,
        resting_height=float(-v[:, 2].min()),
    )
    for arr in (pts, nrm, labels, model):
        arr.setflags(write=False)
    return prior


PRIMITIVES = (
    ("box", {"type": "box", "half_extents": [0.04, 0.03, 0.05]}),
    ("cylinder_slim", {"type": "cylinder", "radius": 0.03, "half_height": 0.06}),
    ("cylinder_wide", {"type": "cylinder", "radius": 0.045, "half_height": 0.045}),
    ("sphere", {"type": "sphere", "radius": 0.045}),
    ("l_prism", {"type": "l_prism", "width": 0.08, "depth": 0.08, "arm": 0.04, "half_height": 0.03}),
)


def primitive_library(n_features: int = 200, seed: int = DEFAULT_SEED, bin_width: float = 0.01):
    return [
        make_prior(k, name, shape_from_description(desc), n_features, seed, bin_width)
        for k, (name, desc) in enumerate(PRIMITIVES)
    ]


def load_manifest(path, n_features: int = 200, bin_width: float = 0.01):
    """Priors from a YAML manifest.

    Each entry has ``class_id``, ``name``, optional ``seed`` and either a
    ``mesh`` path (STL/OBJ, relative to the manifest) or a ``primitive`` block.
    """
    path = Path(path)
    data = yaml.safe_load(path.read_text())
    entries = data["objects"] if isinstance(data, dict) else data
    priors = []
    for e in entries:
        if "mesh" in e:
            shape = load_mesh(path.parent / e["mesh"], grid_spacing=e.get("grid_spacing"))
        else:
            shape = shape_from_description(e["primitive"])
        priors.append(
            make_prior(int(e["class_id"]), e["name"], shape, n_features, int(e.get("seed", DEFAULT_SEED)), bin_width)
        )
    ids = [p.class_id for p in priors]
    if sorted(ids) != list(range(len(ids))):
        raise ValueError("class ids must be 0..N-1")
    return sorted(priors, key=lambda p: p.class_id)


def sdf_query(prior: ObjectPrior, pose: Pose, x) -> np.ndarray | float:
    """Signed distance of world point(s) ``x`` to the prior placed at ``pose``."""
    x = np.asarray(x, dtype=float)
    local = pose.inverse().apply(x.reshape(-1, 3))
    d = prior.shape.sdf(local)
    return float(d[0]) if x.ndim == 1 else d


def sdf_normal(prior: ObjectPrior, pose: Pose, x):
    """World-frame outward unit normal(s) at ``x``."""
    x = np.asarray(x, dtype=float)
    local = pose.inverse().apply(x.reshape(-1, 3))
    _, n, _ = prior.shape.sdf_normal(local)
    n = pose.rotate(n)
    return n[0] if x.ndim == 1 else n


__all__ = [
    "Box", "Cylinder", "LPrism", "Sphere", "Hypothesis", "ObjectPrior", "make_prior", "primitive_library",
    "load_manifest", "sample_feature_points", "sample_surface", "sdf_query", "sdf_normal",
]
