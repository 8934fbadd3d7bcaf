"""Continuous-mesh data model: normalization, quantization, canonical ordering,
synthetic mesh generation, surface sampling, and ASCII OBJ I/O."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Shrink factor keeping normalized coordinates strictly below 1.0.
NORMALIZE_EPS = 2.0 ** -20

DEFAULT_RESOLUTION = 1024


class MeshError(ValueError):
    pass


@dataclass
class Mesh:
    """Triangular mesh: float vertex positions plus 0-based face index triples."""

    vertices: np.ndarray  # (n, 3) float64
    faces: np.ndarray     # (m, 3) int64

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if not np.isfinite(self.vertices).all():
            raise MeshError("non-finite vertex coordinates")
        if len(self.faces):
            if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
                raise MeshError("face index out of range")
            a, b, c = self.faces.T
            if np.any((a == b) | (b == c) | (a == c)):
                raise MeshError("degenerate face (repeated vertex index)")

    @property
    def n_faces(self) -> int:
        return len(self.faces)


@dataclass
class QuantizedMesh:
    """Mesh with vertex coordinates as integer bins in [0, resolution)."""

    vertices: np.ndarray  # (n, 3) int64 bins
    faces: np.ndarray     # (m, 3) int64
    resolution: int = DEFAULT_RESOLUTION

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.int64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.resolution < 2:
            raise MeshError("resolution must be >= 2")
        if len(self.vertices) and (
            self.vertices.min() < 0 or self.vertices.max() >= self.resolution
        ):
            raise MeshError("quantized component outside [0, resolution)")
        if len(self.faces) and (
            self.faces.min() < 0 or self.faces.max() >= len(self.vertices)
        ):
            raise MeshError("face index out of range")

    @property
    def n_faces(self) -> int:
        return len(self.faces)


@dataclass
class PointCloud:
    points: np.ndarray   # (k, 3) float64
    normals: np.ndarray  # (k, 3) float64, unit length

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if len(self.points) != len(self.normals):
            raise MeshError("points/normals length mismatch")
        if len(self.normals):
            norms = np.linalg.norm(self.normals, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise MeshError("normals must be unit length")


def normalize_mesh(m: Mesh) -> Mesh:
    """Rescale into [0,1)^3: uniform scale, longest bbox edge -> 1 - eps,
    bbox midpoint -> (0.5, 0.5, 0.5)."""
    if len(m.vertices) == 0:
        raise MeshError("empty mesh")
    lo = m.vertices.min(axis=0)
    hi = m.vertices.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise MeshError("degenerate extent")
    scale = (1.0 - NORMALIZE_EPS) / extent
    mid = (lo + hi) / 2.0
    verts = (m.vertices - mid) * scale + 0.5
    return Mesh(verts, m.faces.copy())


def quantize(m: Mesh, resolution: int = DEFAULT_RESOLUTION) -> QuantizedMesh:
    """Bin each component with floor(c * V), merge duplicate integer vertices,
    drop faces that collapse. Input must already be normalized into [0,1)^3."""
    if resolution < 2:
        raise MeshError("resolution must be >= 2")
    bins = np.floor(m.vertices * resolution).astype(np.int64)
    np.clip(bins, 0, resolution - 1, out=bins)
    uniq, remap = np.unique(bins, axis=0, return_inverse=True)
    # keep first-occurrence order of vertices instead of np.unique's sort
    first = np.full(len(uniq), len(bins), dtype=np.int64)
    np.minimum.at(first, remap, np.arange(len(bins)))
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    verts = uniq[order]
    faces = rank[remap[m.faces]]
    if len(faces):
        a, b, c = faces.T
        keep = (a != b) & (b != c) & (a != c)
        faces = faces[keep]
    return QuantizedMesh(verts, faces, resolution)


def dequantize(q: QuantizedMesh) -> Mesh:
    """Map each bin to its center (b + 0.5) / V."""
    verts = (q.vertices.astype(np.float64) + 0.5) / q.resolution
    return Mesh(verts, q.faces.copy())


def canonical_order(q: QuantizedMesh) -> QuantizedMesh:
    """Deterministic ordering: vertices sorted by (z, y, x), faces rotated so the
    lowest vertex index leads (winding preserved), faces sorted lexicographically,
    duplicate face triples dropped."""
    v = q.vertices
    if len(v) == 0:
        return QuantizedMesh(v.copy(), q.faces.copy(), q.resolution)
    order = np.lexsort((v[:, 0], v[:, 1], v[:, 2]))
    rank = np.empty(len(v), dtype=np.int64)
    rank[order] = np.arange(len(v))
    verts = v[order]
    faces = rank[q.faces]
    if len(faces):
        rot = np.argmin(faces, axis=1)
        idx = (rot[:, None] + np.arange(3)[None, :]) % 3
        faces = np.take_along_axis(faces, idx, axis=1)
        faces = np.unique(faces, axis=0)  # lexicographic sort + dedupe
    return QuantizedMesh(verts, faces, q.resolution)


def face_areas_normals(m: Mesh):
    tri = m.vertices[m.faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    double_area = np.linalg.norm(cross, axis=1)
    areas = double_area / 2.0
    safe = np.where(double_area > 0, double_area, 1.0)
    normals = cross / safe[:, None]
    return areas, normals


def sample_surface(m: Mesh, count: int, seed: int) -> PointCloud:
    """Area-weighted surface sampling; each point carries its face normal."""
    areas, normals = face_areas_normals(m)
    total = areas.sum()
    if total <= 0.0:
        raise MeshError("zero total surface area")
    rng = np.random.default_rng(seed)
    face_idx = rng.choice(len(areas), size=count, p=areas / total)
    u = rng.random(count)
    v = rng.random(count)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    tri = m.vertices[m.faces[face_idx]]
    pts = tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])
    return PointCloud(pts, normals[face_idx])


# ---------------------------------------------------------------------------
# synthetic meshes

_BOX_FACES = np.array([
    (0, 2, 1), (0, 3, 2), (4, 5, 6), (4, 6, 7),
    (0, 1, 5), (0, 5, 4), (1, 2, 6), (1, 6, 5),
    (2, 3, 7), (2, 7, 6), (3, 0, 4), (3, 4, 7),
], dtype=np.int64)


def _axis_scales(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.5, 1.5, size=3)


def _box(rng, params):
    s = _axis_scales(rng)
    corners = np.array([
        (0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
        (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1),
    ], dtype=np.float64)
    return Mesh(corners * s, _BOX_FACES)


def _pyramid(rng, params):
    s = _axis_scales(rng)
    verts = np.array([
        (0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (0.5, 0.5, 1.0),
    ], dtype=np.float64) * s
    faces = np.array([
        (0, 2, 1), (0, 3, 2),
        (0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4),
    ], dtype=np.int64)
    return Mesh(verts, faces)


def _prism(rng, params):
    s = _axis_scales(rng)
    base = np.array([(0, 0), (1, 0), (0.5, 1)], dtype=np.float64)
    verts = np.concatenate([
        np.column_stack([base, np.zeros(3)]),
        np.column_stack([base, np.ones(3)]),
    ]) * s
    faces = np.array([
        (0, 2, 1), (3, 4, 5),
        (0, 1, 4), (0, 4, 3),
        (1, 2, 5), (1, 5, 4),
        (2, 0, 3), (2, 3, 5),
    ], dtype=np.int64)
    return Mesh(verts, faces)


def _icosphere(rng, params):
    subdiv = int(params.get("subdiv", 1))
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(p) for p in verts]
    for _ in range(subdiv):
        cache = {}
        new_faces = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                p = np.array(verts[i]) + np.array(verts[j])
                p /= np.linalg.norm(p)
                cache[key] = len(verts)
                verts.append(tuple(p))
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
        faces = new_faces
    s = _axis_scales(rng)
    return Mesh(np.array(verts) * s, np.array(faces, dtype=np.int64))


def _grid_relief(rng, params):
    n = int(params.get("n", 4))
    if n < 1:
        raise MeshError("grid-relief needs n >= 1")
    xs, ys = np.meshgrid(np.linspace(0, 1, n + 1), np.linspace(0, 1, n + 1), indexing="ij")
    heights = rng.uniform(0.0, 0.4, size=(n + 1, n + 1))
    verts = np.column_stack([xs.ravel(), ys.ravel(), heights.ravel()])
    faces = []
    for i in range(n):
        for j in range(n):
            a = i * (n + 1) + j
            b = a + 1
            c = a + (n + 1)
            d = c + 1
            faces += [(a, c, b), (b, c, d)]
    return Mesh(verts, np.array(faces, dtype=np.int64))


_GENERATORS = {
    "box": _box,
    "pyramid": _pyramid,
    "prism": _prism,
    "icosphere": _icosphere,
    "grid-relief": _grid_relief,
}

SYNTHETIC_KINDS = tuple(_GENERATORS)


def gen_synthetic(kind: str, params: dict | None = None, seed: int = 0) -> Mesh:
    """Deterministic synthetic mesh; the seed drives per-axis scaling and, for
    grid-relief, vertex heights."""
    if kind not in _GENERATORS:
        raise MeshError(f"unsupported synthetic kind: {kind!r}")
    rng = np.random.default_rng(seed)
    return _GENERATORS[kind](rng, params or {})


# ---------------------------------------------------------------------------
# OBJ I/O

class ObjError(ValueError):
    pass


def read_obj(data: bytes | str) -> Mesh:
    """Parse ASCII OBJ 'v'/'f' records. Polygons are fan-triangulated; negative
    indices are relative to the vertices seen so far."""
    if isinstance(data, bytes):
        data = data.decode("ascii", errors="replace")
    verts = []
    faces = []
    for lineno, raw in enumerate(data.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise ObjError(f"line {lineno}: vertex needs 3 coordinates")
            try:
                verts.append([float(x) for x in parts[1:4]])
            except ValueError:
                raise ObjError(f"line {lineno}: malformed vertex record") from None
        elif tag == "f":
            if len(parts) < 4:
                raise ObjError(f"line {lineno}: face needs >= 3 vertices")
            idx = []
            for tok in parts[1:]:
                head = tok.split("/", 1)[0]
                try:
                    i = int(head)
                except ValueError:
                    raise ObjError(f"line {lineno}: malformed face record") from None
                if i == 0:
                    raise ObjError(f"line {lineno}: OBJ indices are 1-based")
                if i < 0:
                    i = len(verts) + i
                else:
                    i = i - 1
                if i < 0 or i >= len(verts):
                    raise ObjError(f"line {lineno}: face references missing vertex")
                idx.append(i)
            for k in range(1, len(idx) - 1):  # fan triangulation
                faces.append((idx[0], idx[k], idx[k + 1]))
        # other record types (vn, vt, o, g, s, mtllib, usemtl, ...) ignored
    return Mesh(
        np.array(verts, dtype=np.float64).reshape(-1, 3),
        np.array(faces, dtype=np.int64).reshape(-1, 3),
    )


def write_obj(m: Mesh) -> bytes:
    """Emit 'v x y z' (8 significant digits) and 'f a b c' lines."""
    lines = []
    for x, y, z in m.vertices:
        lines.append(f"v {x:.8g} {y:.8g} {z:.8g}")
    for a, b, c in m.faces:
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    return ("\n".join(lines) + "\n").encode("ascii")
