"""Triangle meshes with exact signed distance queries.

Distances are exact point-to-triangle minima; the sign comes from the
generalized winding number, so any closed, consistently oriented mesh works
without a precomputed grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .shapes import SURFACE_EPS, Shape, _normalize_rows

_CHUNK = 2_000_000


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray
    face_normals: np.ndarray = field(init=False)
    face_areas: np.ndarray = field(init=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float).reshape(-1, 3)
        f = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face index out of range")
        cr = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        area2 = np.linalg.norm(cr, axis=1)
        normals = np.zeros_like(cr)
        ok = area2 > 0
        normals[ok] = cr[ok] / area2[ok, None]
        for name, val in (("vertices", v), ("faces", f), ("face_normals", normals), ("face_areas", 0.5 * area2)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    def edge_report(self):
        """Return ``(boundary_edges, bad_orientation_edges)`` counts."""
        f = self.faces
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        und = np.sort(directed, axis=1)
        _, inv, counts = np.unique(und, axis=0, return_inverse=True, return_counts=True)
        boundary = int(np.count_nonzero(counts != 2))
        # a consistently oriented closed mesh uses each directed edge once
        _, dcounts = np.unique(directed, axis=0, return_counts=True)
        bad = int(np.count_nonzero(dcounts > 1))
        return boundary, bad

    def is_watertight(self) -> bool:
        b, bad = self.edge_report()
        return b == 0 and bad == 0 and len(self.faces) >= 4

    def vertex_normals(self) -> np.ndarray:
        """Area-weighted average of incident face normals."""
        acc = np.zeros_like(self.vertices)
        w = self.face_normals * self.face_areas[:, None]
        for k in range(3):
            np.add.at(acc, self.faces[:, k], w)
        n, _ = _normalize_rows(acc)
        return n

    def min_incident_dot(self, vertex_normals=None) -> np.ndarray:
        """Per vertex, the smallest dot product between its normal and an incident face normal."""
        vn = self.vertex_normals() if vertex_normals is None else vertex_normals
        out = np.full(len(self.vertices), np.inf)
        for k in range(3):
            d = (vn[self.faces[:, k]] * self.face_normals).sum(1)
            np.minimum.at(out, self.faces[:, k], np.where(self.face_areas > 0, d, np.inf))
        return out

    @property
    def volume(self) -> float:
        v = self.vertices
        f = self.faces
        return float(np.einsum("ij,ij->i", v[f[:, 0]], np.cross(v[f[:, 1]], v[f[:, 2]])).sum() / 6.0)


def closest_points_on_triangles(p, a, b, c):
    """Closest point from each row of ``p`` to the matching triangle (a, b, c).

    All inputs broadcast to (..., 3). Returns ``(closest, region)`` where region
    is 0 for the face interior, 1-3 for edges and 4-6 for vertices.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = (ab * ap).sum(-1)
    d2 = (ac * ap).sum(-1)
    bp = p - b
    d3 = (ab * bp).sum(-1)
    d4 = (ac * bp).sum(-1)
    cp = p - c
    d5 = (ab * cp).sum(-1)
    d6 = (ac * cp).sum(-1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    shape = np.broadcast_shapes(d1.shape, a.shape[:-1])
    out = np.empty(shape + (3,))
    region = np.full(shape, -1, dtype=np.int8)
    todo = np.ones(shape, dtype=bool)

    def assign(mask, value, reg):
        nonlocal todo
        mask = mask & todo
        if np.any(mask):
            out[mask] = np.broadcast_to(value, shape + (3,))[mask]
            region[mask] = reg
        todo = todo & ~mask

    assign((d1 <= 0) & (d2 <= 0), a, 4)
    assign((d3 >= 0) & (d4 <= d3), b, 5)
    assign((d6 >= 0) & (d5 <= d6), c, 6)
    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v_ab[..., None] * ab, 1)
        w_ac = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w_ac[..., None] * ac, 3)
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w_bc[..., None] * (c - b), 2)
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        assign(todo, a + v[..., None] * ab + w[..., None] * ac, 0)
    return out, region


def winding_numbers(points, vertices, faces) -> np.ndarray:
    """Generalized winding number of each point (1 inside, 0 outside)."""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    out = np.zeros(len(p))
    step = max(1, _CHUNK // max(len(faces), 1))
    tri = vertices[faces]
    for s in range(0, len(p), step):
        q = p[s:s + step, None, None, :]
        r = tri[None] - q
        ln = np.linalg.norm(r, axis=-1)
        a, b, c = r[..., 0, :], r[..., 1, :], r[..., 2, :]
        la, lb, lc = ln[..., 0], ln[..., 1], ln[..., 2]
        det = (a * np.cross(b, c)).sum(-1)
        den = la * lb * lc + (a * b).sum(-1) * lc + (b * c).sum(-1) * la + (c * a).sum(-1) * lb
        out[s:s + step] = np.arctan2(det, den).sum(1) / (2 * np.pi)
    return out


class MeshShape(Shape):
    """Signed distance to a closed triangle mesh.

    ``grid_spacing`` enables a trilinear grid cache for ``sdf`` only; normals
    and surface projection always use exact queries.
    """

    name = "mesh"

    def __init__(self, vertices, faces, grid_spacing: float | None = None, name: str | None = None):
        self.mesh = TriMesh(vertices, faces)
        if not self.mesh.is_watertight():
            b, bad = self.mesh.edge_report()
            raise MeshError(f"mesh is not watertight ({b} open edges, {bad} inconsistently oriented)")
        if self.mesh.volume < 0:
            raise MeshError("mesh faces are oriented inward")
        if name:
            self.name = name
        self._grid = None
        if grid_spacing:
            self._build_grid(grid_spacing)

    def tessellate(self):
        return self.mesh.vertices, self.mesh.faces

    def exact_sdf_normal(self, points):
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        v, f = self.mesh.vertices, self.mesh.faces
        a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
        nt = len(f)
        step = max(1, _CHUNK // nt)
        dist = np.empty(len(p))
        nearest = np.empty((len(p), 3))
        normals = np.empty((len(p), 3))
        for s in range(0, len(p), step):
            q = p[s:s + step, None, :]
            cp, _ = closest_points_on_triangles(q, a[None], b[None], c[None])
            d2 = ((q - cp) ** 2).sum(-1)
            idx = np.argmin(d2, axis=1)
            rows = np.arange(len(idx))
            dmin = np.sqrt(d2[rows, idx])
            dist[s:s + step] = dmin
            nearest[s:s + step] = cp[rows, idx]
            # on-surface normal: average of all faces touching the point; argmin picks lowest index on ties
            on = dmin <= SURFACE_EPS
            if np.any(on):
                active = d2[on] <= (dmin[on, None] + SURFACE_EPS) ** 2
                avg = active.astype(float) @ self.mesh.face_normals
                normals[s:s + step][on] = avg
            off = ~on
            normals[s:s + step][off] = (q[off, 0] - cp[rows, idx][off]) / dmin[off, None]
        wn = winding_numbers(p, v, f)
        inside = wn > 0.5
        sign = np.where(inside, -1.0, 1.0)
        on = dist <= SURFACE_EPS
        normals[~on] *= sign[~on, None]
        d = np.where(on, 0.0, sign * dist)
        n, bad = _normalize_rows(normals)
        return d, n, bad

    def sdf_normal(self, points):
        return self.exact_sdf_normal(points)

    def sdf(self, points):
        if self._grid is None:
            return self.exact_sdf_normal(points)[0]
        return self._grid_sdf(points)

    def describe(self):
        return {"type": "mesh", "vertices": len(self.mesh.vertices), "faces": len(self.mesh.faces)}

    def _build_grid(self, spacing):
        lo = self.mesh.vertices.min(0) - 2 * spacing
        hi = self.mesh.vertices.max(0) + 2 * spacing
        shape = np.ceil((hi - lo) / spacing).astype(int) + 1
        axes = [lo[k] + spacing * np.arange(shape[k]) for k in range(3)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        values = self.exact_sdf_normal(grid)[0].reshape(shape)
        self._grid = (lo, float(spacing), values)

    def _grid_sdf(self, points):
        lo, h, values = self._grid
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        u = (p - lo) / h
        hi = np.array(values.shape) - 1
        inside = np.all((u >= 0) & (u <= hi), axis=1)
        out = np.empty(len(p))
        if np.any(~inside):
            out[~inside] = self.exact_sdf_normal(p[~inside])[0]
        if np.any(inside):
            ui = u[inside]
            i0 = np.minimum(np.floor(ui).astype(int), hi - 1)
            t = ui - i0
            acc = np.zeros(len(ui))
            for dx in (0, 1):
                for dy in (0, 1):
                    for dz in (0, 1):
                        w = (
                            (t[:, 0] if dx else 1 - t[:, 0])
                            * (t[:, 1] if dy else 1 - t[:, 1])
                            * (t[:, 2] if dz else 1 - t[:, 2])
                        )
                        acc += w * values[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
            out[inside] = acc
        return out


def brute_force_distance(points, vertices, faces) -> np.ndarray:
    """Unsigned distance from each point to the nearest triangle (reference implementation)."""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    tri = np.asarray(vertices, dtype=float)[np.asarray(faces)]
    out = np.empty(len(p))
    for k, q in enumerate(p):
        cp, _ = closest_points_on_triangles(q[None], tri[:, 0], tri[:, 1], tri[:, 2])
        out[k] = np.sqrt(((cp - q) ** 2).sum(-1).min())
    return out


def load_mesh(path, grid_spacing: float | None = None) -> MeshShape:
    """Read an STL or OBJ file (meters) into a :class:`MeshShape`."""
    import trimesh

    tm = trimesh.load(str(path), force="mesh", process=True)
    return MeshShape(np.asarray(tm.vertices), np.asarray(tm.faces), grid_spacing=grid_spacing)
