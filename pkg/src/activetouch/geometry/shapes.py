"""Closed-form signed distance shapes.

Every shape works in its own canonical frame and exposes the same small
surface: ``sdf``, ``sdf_normal``, ``project`` and ``tessellate``. Normals are
unit outward gradients of the signed distance; on sharp features (box edges,
cylinder rims, polygon corners) they are the normalized average of the
incident face normals.
"""

from __future__ import annotations

import numpy as np

# Points closer than this to the surface are treated as lying on it.
SURFACE_EPS = 1e-8

FALLBACK_AXIS = np.array([0.0, 0.0, 1.0])


def _normalize_rows(v, fallback=FALLBACK_AXIS):
    n = np.linalg.norm(v, axis=-1)
    bad = n < 1e-15
    out = np.where(bad[:, None], fallback, v / np.where(bad, 1.0, n)[:, None])
    return out, bad


class Shape:
    """Base class; subclasses implement ``sdf_normal`` and ``tessellate``."""

    name = "shape"

    def sdf(self, points) -> np.ndarray:
        return self.sdf_normal(points)[0]

    def normal(self, points) -> np.ndarray:
        return self.sdf_normal(points)[1]

    def sdf_normal(self, points):
        """Return ``(d, n, degenerate)`` for an (N, 3) array of points."""
        raise NotImplementedError

    def tessellate(self):
        """Return ``(vertices, faces)`` of an outward-oriented watertight mesh."""
        raise NotImplementedError

    def project(self, points, iterations: int = 2) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        for _ in range(iterations):
            d, n, _ = self.sdf_normal(p)
            p = p - d[:, None] * n
        return p

    @property
    def bounding_radius(self) -> float:
        v, _ = self.tessellate()
        return float(np.linalg.norm(v, axis=1).max())

    def describe(self) -> dict:
        raise NotImplementedError


class Sphere(Shape):
    name = "sphere"

    def __init__(self, radius: float, subdivisions: int = 3):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)
        self.subdivisions = subdivisions
        self._mesh = None

    def sdf(self, points):
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        return np.sqrt((p * p).sum(1)) - self.radius

    def sdf_normal(self, points):
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        r = np.linalg.norm(p, axis=1)
        n, bad = _normalize_rows(p)
        return r - self.radius, n, bad

    def project(self, points, iterations: int = 1):
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        n, _ = _normalize_rows(p)
        return n * self.radius

    def tessellate(self):
        if self._mesh is None:
            v, f = icosphere(self.subdivisions)
            self._mesh = (v * self.radius, f)
        return self._mesh

    @property
    def bounding_radius(self):
        return self.radius

    def describe(self):
        return {"type": "sphere", "radius": self.radius}


class Polygon2D:
    """Simple polygon profile given counter-clockwise."""

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=float)
        if polygon_area(v) < 0:
            v = v[::-1]
        self.vertices = v
        self.a = v
        self.b = np.roll(v, -1, axis=0)
        self.e = self.b - self.a
        self.len2 = (self.e ** 2).sum(axis=1)
        if np.any(self.len2 == 0):
            raise ValueError("degenerate polygon edge")
        ln = np.sqrt(self.len2)
        self.edge_normals = np.stack([self.e[:, 1] / ln, -self.e[:, 0] / ln], axis=1)

    def _edge_terms(self, q):
        wx = q[:, :1] - self.a[:, 0]
        wy = q[:, 1:] - self.a[:, 1]
        ex, ey = self.e[:, 0], self.e[:, 1]
        t = np.clip((wx * ex + wy * ey) / self.len2, 0.0, 1.0)
        dx = wx - t * ex
        dy = wy - t * ey
        return dx, dy, dx * dx + dy * dy

    def _inside(self, q):
        ay, by = self.a[:, 1], self.b[:, 1]
        qy, qx = q[:, 1:], q[:, :1]
        straddle = (ay > qy) != (by > qy)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = self.a[:, 0] + (qy - ay) * (self.b[:, 0] - self.a[:, 0]) / (by - ay)
        return (np.count_nonzero(straddle & (qx < xint), axis=1) % 2) == 1

    def distance(self, q):
        """Signed distance only."""
        _, _, dist2 = self._edge_terms(q)
        return np.where(self._inside(q), -1.0, 1.0) * np.sqrt(dist2.min(axis=1))

    def eval(self, q):
        """Signed distance and outward unit gradient for (N, 2) points."""
        dx, dy, dist2 = self._edge_terms(q)
        idx = np.argmin(dist2, axis=1)
        rows = np.arange(q.shape[0])
        dmin = np.sqrt(dist2[rows, idx])
        sign = np.where(self._inside(q), -1.0, 1.0)
        d = sign * dmin

        scale = sign / np.where(dmin > 0, dmin, 1.0)
        g = np.stack([dx[rows, idx] * scale, dy[rows, idx] * scale], axis=1)
        on = dmin <= SURFACE_EPS
        if np.any(on):
            active = dist2[on] <= (dmin[on, None] + SURFACE_EPS) ** 2
            avg = active.astype(float) @ self.edge_normals
            g[on] = avg / np.linalg.norm(avg, axis=1, keepdims=True)
        return d, g

    def triangulate(self):
        return ear_clip(self.vertices)

    def describe(self):
        return {"polygon": self.vertices.tolist()}


class Circle2D:
    def __init__(self, radius: float, segments: int = 64):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)
        self.segments = segments

    def eval(self, q):
        r = np.linalg.norm(q, axis=1)
        safe = np.where(r > 1e-15, r, 1.0)
        g = np.where((r > 1e-15)[:, None], q / safe[:, None], np.array([1.0, 0.0]))
        return r - self.radius, g

    def distance(self, q):
        return np.sqrt(q[:, 0] ** 2 + q[:, 1] ** 2) - self.radius

    @property
    def vertices(self):
        ang = np.arange(self.segments) * 2 * np.pi / self.segments
        return self.radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)

    def triangulate(self):
        m = self.segments
        return np.stack([np.full(m - 2, 0), np.arange(1, m - 1), np.arange(2, m)], axis=1)

    def describe(self):
        return {"radius": self.radius}


class Extrusion(Shape):
    """A 2-D profile in the xy plane extruded symmetrically along z."""

    name = "extrusion"

    def __init__(self, profile, half_height: float, name: str | None = None):
        if half_height <= 0:
            raise ValueError("half_height must be positive")
        self.profile = profile
        self.half_height = float(half_height)
        if name:
            self.name = name
        self._mesh = None

    def sdf(self, points):
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        w0 = self.profile.distance(p[:, :2])
        w1 = np.abs(p[:, 2]) - self.half_height
        return np.minimum(np.maximum(w0, w1), 0.0) + np.hypot(np.maximum(w0, 0.0), np.maximum(w1, 0.0))

    def sdf_normal(self, points):
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        d2, g2 = self.profile.eval(p[:, :2])
        sz = np.where(p[:, 2] >= 0, 1.0, -1.0)
        w0 = d2
        w1 = np.abs(p[:, 2]) - self.half_height
        pos0 = np.maximum(w0, 0.0)
        pos1 = np.maximum(w1, 0.0)
        d = np.minimum(np.maximum(w0, w1), 0.0) + np.sqrt(pos0 ** 2 + pos1 ** 2)

        n = np.empty_like(p)
        outside = d > SURFACE_EPS
        inside = d < -SURFACE_EPS
        on = ~(outside | inside)

        n[outside, :2] = g2[outside] * pos0[outside, None]
        n[outside, 2] = sz[outside] * pos1[outside]

        side = w0 >= w1
        n[inside, :2] = np.where(side[inside, None], g2[inside], 0.0)
        n[inside, 2] = np.where(side[inside], 0.0, sz[inside])

        a0 = w0 >= -SURFACE_EPS
        a1 = w1 >= -SURFACE_EPS
        n[on, :2] = g2[on] * a0[on, None]
        n[on, 2] = sz[on] * a1[on]

        n, bad = _normalize_rows(n)
        return d, n, bad

    def tessellate(self):
        if self._mesh is None:
            self._mesh = extrude_mesh(self.profile.vertices, self.profile.triangulate(), self.half_height)
        return self._mesh

    def describe(self):
        return {"type": "extrusion", "half_height": self.half_height, **self.profile.describe()}


def Box(hx: float, hy: float, hz: float) -> Extrusion:
    """Axis-aligned box with the given half extents."""
    prof = Polygon2D([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
    shape = Extrusion(prof, hz, name="box")
    shape.half_extents = np.array([hx, hy, hz], dtype=float)
    return shape


def Cylinder(radius: float, half_height: float, segments: int = 64) -> Extrusion:
    return Extrusion(Circle2D(radius, segments), half_height, name="cylinder")


def LPrism(width: float, depth: float, arm: float, half_height: float) -> Extrusion:
    """L-shaped footprint (outer ``width`` x ``depth``, arm thickness ``arm``), centered on its bounding box."""
    if not 0 < arm < min(width, depth):
        raise ValueError("arm must be smaller than both outer sides")
    x0, y0 = -width / 2, -depth / 2
    pts = [
        [x0, y0], [x0 + width, y0], [x0 + width, y0 + arm],
        [x0 + arm, y0 + arm], [x0 + arm, y0 + depth], [x0, y0 + depth],
    ]
    return Extrusion(Polygon2D(pts), half_height, name="l_prism")


# --- tessellation helpers -------------------------------------------------


def polygon_area(v) -> float:
    v = np.asarray(v, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def ear_clip(vertices) -> np.ndarray:
    """Triangulate a simple counter-clockwise polygon."""
    v = np.asarray(vertices, dtype=float)
    idx = list(range(len(v)))
    tris = []

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10 * len(v) ** 2:
            raise ValueError("polygon is not simple")
        for k in range(len(idx)):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            a, b, c = v[i0], v[i1], v[i2]
            if cross(a, b, c) <= 0:
                continue
            others = [j for j in idx if j not in (i0, i1, i2)]
            if any(
                cross(a, b, v[j]) >= 0 and cross(b, c, v[j]) >= 0 and cross(c, a, v[j]) >= 0 for j in others
            ):
                continue
            tris.append((i0, i1, i2))
            idx.pop(k)
            break
    tris.append(tuple(idx))
    return np.asarray(tris, dtype=int)


def extrude_mesh(profile_vertices, cap_triangles, half_height):
    pv = np.asarray(profile_vertices, dtype=float)
    m = len(pv)
    bottom = np.column_stack([pv, np.full(m, -half_height)])
    top = np.column_stack([pv, np.full(m, half_height)])
    verts = np.vstack([bottom, top])
    faces = []
    for tri in cap_triangles:
        faces.append([tri[0] + m, tri[1] + m, tri[2] + m])
        faces.append([tri[0], tri[2], tri[1]])
    for i in range(m):
        j = (i + 1) % m
        faces.append([i, j, j + m])
        faces.append([i, j + m, i + m])
    return verts, np.asarray(faces, dtype=int)


def icosphere(subdivisions: int = 2):
    """Unit icosphere with outward winding."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ]
    faces = [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
    verts = [np.asarray(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}
        new_faces = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new_faces
    return np.asarray(verts), np.asarray(faces, dtype=int)


def shape_from_description(desc: dict) -> Shape:
    """Build a primitive from a manifest entry such as ``{"type": "box", "half_extents": [...]}``."""
    kind = desc["type"]
    if kind == "sphere":
        return Sphere(desc["radius"])
    if kind == "box":
        return Box(*desc["half_extents"])
    if kind == "cylinder":
        return Cylinder(desc["radius"], desc["half_height"])
    if kind == "l_prism":
        return LPrism(desc["width"], desc["depth"], desc["arm"], desc["half_height"])
    raise ValueError(f"unknown primitive type {kind!r}")
