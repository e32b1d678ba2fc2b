"""Triangle-mesh core: OBJ I/O, derived planes, and ray intersection.

Mesh-frame convention used throughout the package: +x points to the
subject's left, +y up, +z out of the face. Distances are in mesh units
unless stated otherwise.
"""

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

# Relative cutoffs, scaled by the mesh bounding-box diagonal so behaviour
# is independent of the units the mesh happens to be expressed in.
DEGENERATE_AREA_REL = 1e-12
RAY_DET_EPS_REL = 1e-9

_LEAF_SIZE = 8


class MeshError(ValueError):
    """Invalid mesh topology or geometry, or a malformed OBJ input."""


@dataclass
class Mesh:
    """Immutable triangle mesh with optional per-vertex RGB colors."""

    vertices: np.ndarray                 # (V, 3) float64
    triangles: np.ndarray                # (T, 3) int64 indices into vertices
    vertex_colors: np.ndarray | None = None  # (V, 3) float64 in [0, 1]
    bbox_diag: float = field(init=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError("vertices must be an (V, 3) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must be an (T, 3) array")
        if len(self.triangles) == 0:
            raise MeshError("mesh has no triangles")
        if len(self.vertices) == 0:
            raise MeshError("mesh has no vertices")
        if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
            raise MeshError("triangle vertex index out of range")
        if self.vertex_colors is not None:
            self.vertex_colors = np.ascontiguousarray(self.vertex_colors, dtype=np.float64)
            if self.vertex_colors.shape != self.vertices.shape:
                raise MeshError("vertex_colors needs exactly one RGB row per vertex")
        extent = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        self.bbox_diag = float(np.linalg.norm(extent))
        if self.bbox_diag == 0.0:
            raise MeshError("mesh is degenerate (zero bounding-box diagonal)")
        areas = triangle_areas(self.vertices, self.triangles)
        bad = np.nonzero(areas <= DEGENERATE_AREA_REL * self.bbox_diag ** 2)[0]
        if bad.size:
            raise MeshError(f"degenerate (zero-area) triangle at index {int(bad[0])}")

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)


@dataclass(frozen=True)
class Plane:
    """Oriented plane n.x + d = 0 with unit normal n."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise MeshError("plane normal must be unit length")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.normal + self.offset


@dataclass(frozen=True)
class Ray:
    """Ray with unit direction, in whatever frame the caller works in."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise MeshError("ray direction must be unit length")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class Hit:
    """Nearest ray-mesh intersection."""

    triangle_id: int
    point: np.ndarray
    distance: float
    barycentric: np.ndarray  # weights for the triangle's three vertices


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p0 = vertices[triangles[:, 0]]
    e1 = vertices[triangles[:, 1]] - p0
    e2 = vertices[triangles[:, 2]] - p0
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


def vertex_normals(mesh: Mesh) -> np.ndarray:
    """Area-weighted vertex normals; isolated vertices fall back to +z."""
    p0 = mesh.vertices[mesh.triangles[:, 0]]
    e1 = mesh.vertices[mesh.triangles[:, 1]] - p0
    e2 = mesh.vertices[mesh.triangles[:, 2]] - p0
    face = np.cross(e1, e2)  # length = 2 * area, so this is area weighting
    normals = np.zeros_like(mesh.vertices)
    for k in range(3):
        np.add.at(normals, mesh.triangles[:, k], face)
    lengths = np.linalg.norm(normals, axis=1)
    zero = lengths == 0.0
    normals[zero] = (0.0, 0.0, 1.0)
    lengths[zero] = 1.0
    return normals / lengths[:, None]


def vertex_adjacency(mesh: Mesh) -> list[np.ndarray]:
    """Sorted neighbor lists over mesh edges, one array per vertex."""
    pairs = np.concatenate([
        mesh.triangles[:, [0, 1]],
        mesh.triangles[:, [1, 2]],
        mesh.triangles[:, [2, 0]],
    ])
    pairs = np.concatenate([pairs, pairs[:, ::-1]])
    pairs = np.unique(pairs, axis=0)
    neighbors = [np.empty(0, dtype=np.int64)] * len(mesh.vertices)
    starts = np.searchsorted(pairs[:, 0], np.arange(len(mesh.vertices) + 1))
    for v in range(len(mesh.vertices)):
        neighbors[v] = pairs[starts[v]:starts[v + 1], 1]
    return neighbors


# ---------------------------------------------------------------------------
# OBJ subset I/O: `v x y z [r g b]` and `f i j k ...` (1-based, /vt/vn
# suffixes stripped, polygons fan-triangulated). Everything else is skipped.
# ---------------------------------------------------------------------------

def parse_obj(source) -> Mesh:
    """Parse an OBJ byte/text stream into a Mesh.

    Raises MeshError with a line number for malformed `v`/`f` lines or
    out-of-range face indices.
    """
    if isinstance(source, bytes):
        text = source.decode("ascii")
    elif isinstance(source, str):
        text = source
    else:
        data = source.read()
        text = data.decode("ascii") if isinstance(data, bytes) else data

    vertices: list[tuple[float, ...]] = []
    colors: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    face_lines: list[int] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        key = fields[0]
        if key == "v":
            vals = fields[1:]
            if len(vals) not in (3, 6):
                raise MeshError(f"line {lineno}: vertex needs 3 or 6 floats")
            try:
                nums = [float(v) for v in vals]
            except ValueError:
                raise MeshError(f"line {lineno}: bad float in vertex") from None
            vertices.append(tuple(nums[:3]))
            if len(nums) == 6:
                colors.append(tuple(nums[3:]))
            elif colors:
                raise MeshError(f"line {lineno}: mixed colored and uncolored vertices")
        elif key == "f":
            idx = []
            for token in fields[1:]:
                head = token.split("/", 1)[0]
                try:
                    i = int(head)
                except ValueError:
                    raise MeshError(f"line {lineno}: bad face index {token!r}") from None
                if i <= 0:
                    raise MeshError(f"line {lineno}: face indices must be positive")
                idx.append(i - 1)
            if len(idx) < 3:
                raise MeshError(f"line {lineno}: face needs at least 3 indices")
            for k in range(1, len(idx) - 1):
                faces.append((idx[0], idx[k], idx[k + 1]))
                face_lines.append(lineno)
        # vn/vt/usemtl/etc. are intentionally ignored

    if not vertices:
        raise MeshError("OBJ stream contains no vertices")
    if not faces:
        raise MeshError("OBJ stream contains no faces")
    tri = np.array(faces, dtype=np.int64)
    over = np.nonzero(tri.max(axis=1) >= len(vertices))[0]
    if over.size:
        raise MeshError(f"line {face_lines[int(over[0])]}: face index out of range")
    if colors and len(colors) != len(vertices):
        raise MeshError("vertex color count does not match vertex count")
    return Mesh(
        vertices=np.array(vertices, dtype=np.float64),
        triangles=tri,
        vertex_colors=np.array(colors, dtype=np.float64) if colors else None,
    )


def serialize_obj(mesh: Mesh, colors: np.ndarray | None = None) -> str:
    """Emit the OBJ subset with 9-significant-digit coordinates."""
    if colors is None:
        colors = mesh.vertex_colors
    lines = []
    if colors is None:
        for x, y, z in mesh.vertices:
            lines.append(f"v {x:.9g} {y:.9g} {z:.9g}")
    else:
        for (x, y, z), (r, g, b) in zip(mesh.vertices, colors):
            lines.append(f"v {x:.9g} {y:.9g} {z:.9g} {r:.9g} {g:.9g} {b:.9g}")
    for a, b, c in mesh.triangles + 1:
        lines.append(f"f {a} {b} {c}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Derived planes
# ---------------------------------------------------------------------------

def fit_symmetry_plane(first_points: np.ndarray, second_points: np.ndarray) -> Plane:
    """Mirror plane from paired points lying on opposite sides.

    The normal is the least-squares common direction of the pair difference
    vectors; the plane passes through the mean of the pair midpoints. The
    normal is oriented so the first pair's first point has positive signed
    distance.
    """
    a = np.asarray(first_points, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(second_points, dtype=np.float64).reshape(-1, 3)
    if len(a) != len(b):
        raise MeshError("mirrored point lists differ in length")
    if len(a) < 3:
        raise MeshError("need at least 3 mirrored pairs")
    diffs = a - b
    scale = max(np.abs(np.concatenate([a, b])).max(), 1.0)
    _, svals, vt = np.linalg.svd(diffs, full_matrices=False)
    if svals[0] <= 1e-12 * scale:
        raise MeshError("mirrored pairs are degenerate (coincident points)")
    normal = vt[0] / np.linalg.norm(vt[0])
    offset = -float(normal @ ((a + b) / 2.0).mean(axis=0))
    if normal @ a[0] + offset < 0.0:
        normal, offset = -normal, -offset
    return Plane(normal, offset)


def fit_bilateral_plane(mesh: Mesh, landmark_pairs) -> Plane:
    """Symmetry plane through mirrored mesh-vertex index pairs."""
    pairs = np.asarray(landmark_pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= len(mesh.vertices)):
        raise MeshError("landmark pair index out of range")
    return fit_symmetry_plane(mesh.vertices[pairs[:, 0]], mesh.vertices[pairs[:, 1]])


def back_plane(mesh: Mesh, frontal_axis=(0.0, 0.0, 1.0)) -> Plane:
    """Plane through the vertex centroid facing away from the gaze axis."""
    axis = np.asarray(frontal_axis, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(axis)
    if norm == 0.0:
        raise MeshError("frontal axis must be non-zero")
    normal = -axis / norm
    return Plane(normal, -float(normal @ mesh.centroid))


# ---------------------------------------------------------------------------
# Ray intersection. A single Moller-Trumbore kernel backs both the BVH and
# the exhaustive path so the two return bit-identical hits.
# ---------------------------------------------------------------------------

def _intersect_triangles(v0, e1, e2, origin, direction, eps_det):
    """Double-sided Moller-Trumbore over a triangle batch.

    Returns (t, u, v, valid); hits require t >= 0 and barycentrics in range.
    """
    pvec = np.cross(direction[None, :], e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    valid = np.abs(det) >= eps_det
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(valid, 1.0 / np.where(valid, det, 1.0), 0.0)
    tvec = origin[None, :] - v0
    u = np.einsum("ij,ij->i", tvec, pvec) * inv
    qvec = np.cross(tvec, e1)
    v = (qvec @ direction) * inv
    t = np.einsum("ij,ij->i", e2, qvec) * inv
    valid &= (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t >= 0.0)
    return t, u, v, valid


def _select_hit(t, u, v, valid, ids):
    """Nearest valid hit; equal distances break toward the lowest id."""
    if not valid.any():
        return None
    t_valid = np.where(valid, t, np.inf)
    tmin = t_valid.min()
    pool = np.nonzero(t_valid == tmin)[0]
    k = pool[np.argmin(ids[pool])]
    return float(t[k]), float(u[k]), float(v[k]), int(ids[k])


class BVH:
    """Static median-split bounding-volume hierarchy over mesh triangles.

    Nodes live in flat arrays; leaves reference contiguous runs of a
    triangle permutation so leaf tests stay vectorized.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.eps_det = RAY_DET_EPS_REL * mesh.bbox_diag

        tris = mesh.triangles
        p0 = mesh.vertices[tris[:, 0]]
        p1 = mesh.vertices[tris[:, 1]]
        p2 = mesh.vertices[tris[:, 2]]
        lo = np.minimum(np.minimum(p0, p1), p2)
        hi = np.maximum(np.maximum(p0, p1), p2)
        centers = (lo + hi) / 2.0

        order = np.arange(len(tris))
        bounds_min, bounds_max = [], []
        left, right, start, count = [], [], [], []

        def build(lo_i: int, hi_i: int) -> int:
            node = len(bounds_min)
            idx = order[lo_i:hi_i]
            bounds_min.append(lo[idx].min(axis=0))
            bounds_max.append(hi[idx].max(axis=0))
            left.append(-1)
            right.append(-1)
            start.append(lo_i)
            count.append(hi_i - lo_i)
            if hi_i - lo_i > _LEAF_SIZE:
                axis = int(np.argmax(bounds_max[node] - bounds_min[node]))
                key = np.lexsort((idx, centers[idx, axis]))
                order[lo_i:hi_i] = idx[key]
                mid = (lo_i + hi_i) // 2
                count[node] = 0
                left[node] = build(lo_i, mid)
                right[node] = build(mid, hi_i)
            return node

        build(0, len(tris))
        self.bounds_min = np.array(bounds_min)
        self.bounds_max = np.array(bounds_max)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.start = np.array(start, dtype=np.int64)
        self.count = np.array(count, dtype=np.int64)
        self.tri_ids = order
        # leaf-order triangle data for the intersection kernel
        self.v0 = p0[order]
        self.e1 = p1[order] - p0[order]
        self.e2 = p2[order] - p0[order]

    def _slab_entry(self, node: int, o, inv_d, d) -> float:
        """Ray/AABB entry distance, or inf when the box is missed."""
        t_near, t_far = 0.0, math.inf
        bmin = self.bounds_min[node]
        bmax = self.bounds_max[node]
        for k in range(3):
            if d[k] == 0.0:
                if o[k] < bmin[k] or o[k] > bmax[k]:
                    return math.inf
                continue
            t0 = (bmin[k] - o[k]) * inv_d[k]
            t1 = (bmax[k] - o[k]) * inv_d[k]
            if t0 > t1:
                t0, t1 = t1, t0
            if t0 > t_near:
                t_near = t0
            if t1 < t_far:
                t_far = t1
            if t_near > t_far:
                return math.inf
        return t_near


def build_bvh(mesh: Mesh) -> BVH:
    return BVH(mesh)


def ray_intersect(bvh: BVH, ray: Ray) -> Hit | None:
    """Nearest front-or-back-facing hit with deterministic tie-breaking."""
    o = ray.origin
    d = ray.direction
    of = (float(o[0]), float(o[1]), float(o[2]))
    df = (float(d[0]), float(d[1]), float(d[2]))
    inv = tuple(1.0 / c if c != 0.0 else math.inf for c in df)

    best = None  # (t, u, v, tri_id)
    stack = [0]
    while stack:
        node = stack.pop()
        entry = bvh._slab_entry(node, of, inv, df)
        if entry == math.inf or (best is not None and entry > best[0]):
            continue
        n = bvh.count[node]
        if n > 0:
            s = bvh.start[node]
            cand = _select_hit(*_intersect_triangles(
                bvh.v0[s:s + n], bvh.e1[s:s + n], bvh.e2[s:s + n],
                o, d, bvh.eps_det), bvh.tri_ids[s:s + n])
            if cand is not None:
                if best is None or cand[0] < best[0] or (
                        cand[0] == best[0] and cand[3] < best[3]):
                    best = cand
        else:
            stack.append(int(bvh.right[node]))
            stack.append(int(bvh.left[node]))
    if best is None:
        return None
    return _make_hit(bvh.mesh, best, o, d)


def ray_intersect_brute(mesh: Mesh, ray: Ray) -> Hit | None:
    """Exhaustive nearest-hit search; reference path for the BVH."""
    tris = mesh.triangles
    p0 = mesh.vertices[tris[:, 0]]
    e1 = mesh.vertices[tris[:, 1]] - p0
    e2 = mesh.vertices[tris[:, 2]] - p0
    eps = RAY_DET_EPS_REL * mesh.bbox_diag
    cand = _select_hit(
        *_intersect_triangles(p0, e1, e2, ray.origin, ray.direction, eps),
        np.arange(len(tris)))
    if cand is None:
        return None
    return _make_hit(mesh, cand, ray.origin, ray.direction)


def _make_hit(mesh: Mesh, cand, origin, direction) -> Hit:
    t, u, v, tri_id = cand
    return Hit(
        triangle_id=tri_id,
        point=origin + t * direction,
        distance=t,
        barycentric=np.array([1.0 - u - v, u, v]),
    )
