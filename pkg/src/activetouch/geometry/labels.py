"""Geometric contact-type labelling from normals sampled around a surface point."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .transforms import perpendicular_axis


@dataclass(frozen=True)
class LabelConfig:
    radii: tuple = (0.002, 0.004, 0.006)
    ring_count: int = 24
    flat_deg: float = 5.0
    cluster_deg: float = 10.0
    min_cluster: int = 3


def ring_points(shape, point, normal, cfg: LabelConfig = LabelConfig()):
    """Surface points and normals on concentric rings around ``point`` (canonical frame)."""
    normal = np.asarray(normal, dtype=float)
    u = perpendicular_axis(normal)
    v = np.cross(normal, u)
    # the offset keeps ring samples off symmetric directions such as edge lines
    ang = (np.arange(cfg.ring_count) + 0.37) * 2 * np.pi / cfg.ring_count
    circle = np.cos(ang)[:, None] * u + np.sin(ang)[:, None] * v
    pts = np.concatenate([np.asarray(point) + r * circle for r in cfg.radii])
    pts = shape.project(pts, iterations=3)
    _, nrm, _ = shape.sdf_normal(pts)
    return pts, nrm


def label_from_normals(normals, cfg: LabelConfig = LabelConfig()) -> str:
    n = np.asarray(normals, dtype=float)
    cosines = np.clip(n @ n.T, -1.0, 1.0)
    if cosines.min() > np.cos(np.deg2rad(cfg.flat_deg)):
        return "flat"
    adj = csr_matrix(cosines > np.cos(np.deg2rad(cfg.cluster_deg)))
    _, comp = connected_components(adj, directed=False)
    sizes = np.bincount(comp)
    clusters = int(np.count_nonzero(sizes >= cfg.min_cluster))
    if clusters >= 3:
        return "corner"
    if clusters == 2:
        return "edge"
    return "curved"


def surface_label(shape, point, cfg: LabelConfig = LabelConfig()) -> str:
    """Label of a canonical-frame point near the surface of ``shape``."""
    p = shape.project(np.reshape(point, (1, 3)), iterations=3)
    _, n, _ = shape.sdf_normal(p)
    _, nrm = ring_points(shape, p[0], n[0], cfg)
    return label_from_normals(nrm, cfg)
