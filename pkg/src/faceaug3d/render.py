"""Software rendering of colored meshes: z-buffered Gouraud rasterization
with a four-spot light rig and an emission/diffuse mix shader.

Shading happens in the mesh frame. Because the light rig is rigidly
attached to the mesh, this is identical to shading in the camera frame
with the rig co-transformed by the pose, which is the behaviour the
augmentation pipeline needs.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .meshes import Mesh, vertex_normals
from .pose import Camera, RigidPose
from .texture import ColoredMesh

LIGHT_KEYS = ("top", "left", "right", "bottom")

DEFAULT_EMISSION_WEIGHT = 0.6
DEFAULT_AMBIENT = 0.55
DEFAULT_INTENSITY = 1.2
DEFAULT_CONE_HALF_ANGLE_DEG = 40.0
DEFAULT_FALLOFF = 1.0
DEFAULT_RIG_RADIUS_SCALE = 2.0


class RenderError(ValueError):
    """Invalid render inputs."""


@dataclass(frozen=True)
class SpotLight:
    position: np.ndarray        # mesh frame
    aim: np.ndarray             # unit vector toward the mesh centroid
    intensity: float = DEFAULT_INTENSITY
    cone_half_angle_deg: float = DEFAULT_CONE_HALF_ANGLE_DEG
    falloff: float = DEFAULT_FALLOFF

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64).reshape(3)
        a = np.asarray(self.aim, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(a)
        if norm == 0.0:
            raise RenderError("spot aim must be non-zero")
        if self.intensity < 0.0:
            raise RenderError("spot intensity must be >= 0")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "aim", a / norm)


@dataclass(frozen=True)
class LightRig:
    """Exactly four spots keyed top/left/right/bottom, in the mesh frame."""

    lights: dict

    def __post_init__(self):
        if tuple(sorted(self.lights)) != tuple(sorted(LIGHT_KEYS)):
            raise RenderError(f"rig must hold exactly the keys {LIGHT_KEYS}")

    def transformed(self, pose: RigidPose) -> "LightRig":
        """Rig carried along by the same rigid transform as the mesh."""
        moved = {}
        for key, ls in self.lights.items():
            moved[key] = SpotLight(
                position=pose.transform(ls.position),
                aim=pose.rotate(ls.aim),
                intensity=ls.intensity,
                cone_half_angle_deg=ls.cone_half_angle_deg,
                falloff=ls.falloff,
            )
        return LightRig(moved)


@dataclass(frozen=True)
class RenderConfig:
    emission_weight: float = DEFAULT_EMISSION_WEIGHT  # 1 = pure albedo
    ambient: float = DEFAULT_AMBIENT
    background_rgb: tuple = (0.0, 0.0, 0.0)
    background_depth: float = math.inf

    def __post_init__(self):
        if not 0.0 <= self.emission_weight <= 1.0:
            raise RenderError("emission_weight must lie in [0, 1]")


@dataclass
class RenderOutput:
    image: np.ndarray          # (H, W, 3) float in [0, 1]
    depth: np.ndarray          # (H, W); +inf where background shows
    coverage_mask: np.ndarray  # (H, W) bool, True where the mesh won


def make_light_rig(mesh: Mesh,
                   intensity: float = DEFAULT_INTENSITY,
                   cone_half_angle_deg: float = DEFAULT_CONE_HALF_ANGLE_DEG,
                   falloff: float = DEFAULT_FALLOFF,
                   radius_scale: float = DEFAULT_RIG_RADIUS_SCALE) -> LightRig:
    """Four spots around the head at radius_scale * bbox_diag, aimed at the
    vertex centroid. 'left' sits on the -x side, 'right' on +x."""
    c = mesh.centroid
    r = radius_scale * mesh.bbox_diag
    if r == 0.0:
        raise RenderError("mesh bounding box is degenerate")
    offsets = {
        "top": np.array([0.0, r, 0.0]),
        "bottom": np.array([0.0, -r, 0.0]),
        "left": np.array([-r, 0.0, 0.0]),
        "right": np.array([r, 0.0, 0.0]),
    }
    lights = {}
    for key, off in offsets.items():
        lights[key] = SpotLight(position=c + off, aim=-off,
                                intensity=intensity,
                                cone_half_angle_deg=cone_half_angle_deg,
                                falloff=falloff)
    return LightRig(lights)


def shade_vertices(albedo: np.ndarray, normals: np.ndarray, points: np.ndarray,
                   light: SpotLight | None, config: RenderConfig) -> np.ndarray:
    """Emission/diffuse mix per vertex, clamped to [0, 1].

    color = w * albedo + (1 - w) * albedo * (ambient + lambert * spot * I)
    where the spot factor is cos(angle off the aim axis) ** falloff inside
    the cone and 0 outside. With no light the diffuse term is ambient only.
    """
    a = np.asarray(albedo, dtype=np.float64)
    w = config.emission_weight
    diffuse = np.full(len(a), config.ambient)
    if light is not None:
        n = np.asarray(normals, dtype=np.float64)
        p = np.asarray(points, dtype=np.float64)
        to_light = light.position[None, :] - p
        dist = np.linalg.norm(to_light, axis=1)
        dist[dist == 0.0] = 1.0
        l_dir = to_light / dist[:, None]
        lambert = np.maximum(0.0, np.einsum("ij,ij->i", n, l_dir))
        cos_axis = np.einsum("ij,j->i", -l_dir, light.aim)
        cone = math.cos(math.radians(light.cone_half_angle_deg))
        spot = np.where(cos_axis >= cone,
                        np.maximum(0.0, cos_axis) ** light.falloff, 0.0)
        diffuse = diffuse + lambert * spot * light.intensity
    out = w * a + (1.0 - w) * a * diffuse[:, None]
    return np.clip(out, 0.0, 1.0)


def shade_vertex(albedo, normal, point, light: SpotLight | None,
                 config: RenderConfig) -> np.ndarray:
    """Single-vertex convenience wrapper around shade_vertices."""
    return shade_vertices(np.asarray(albedo, dtype=np.float64)[None, :],
                          np.asarray(normal, dtype=np.float64)[None, :],
                          np.asarray(point, dtype=np.float64)[None, :],
                          light, config)[0]


def select_random_light(rng) -> str:
    """Uniform draw over the four rig keys; rng is a seed or a Generator."""
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return LIGHT_KEYS[int(gen.integers(len(LIGHT_KEYS)))]


def rasterize(cm: ColoredMesh, pose: RigidPose, camera: Camera,
              light: str | None = None, config: RenderConfig | None = None,
              rig: LightRig | None = None,
              background: np.ndarray | None = None) -> RenderOutput:
    """Orthographic z-buffer render of the colored mesh.

    Parameters
    ----------
    light : one of LIGHT_KEYS to toggle a single spot on, or None.
    rig : light rig in the mesh frame; built with defaults when omitted.
    background : optional (H, W, 3) image painted at background depth;
        falls back to config.background_rgb. Pixels whose interpolated
        depth is not in front of config.background_depth show background.

    The render is deterministic: depth ties at a pixel resolve toward the
    lowest triangle id.
    """
    config = config or RenderConfig()
    w, h = camera.image_width, camera.image_height

    image = np.empty((h, w, 3))
    if background is not None:
        bg = np.asarray(background, dtype=np.float64)
        if bg.shape[:2] != (h, w):
            bg = _resize_nearest(bg, h, w)
        image[:] = bg
    else:
        image[:] = np.asarray(config.background_rgb, dtype=np.float64)
    depth_buf = np.full((h, w), math.inf)
    coverage = np.zeros((h, w), dtype=bool)

    mesh = cm.mesh
    cam_pts = pose.transform(mesh.vertices)
    uv = camera.project(cam_pts)
    depth = camera.depths(cam_pts)

    active = rig.lights[light] if (rig is not None and light is not None) else (
        make_light_rig(mesh).lights[light] if light is not None else None)
    shaded = shade_vertices(cm.colors, vertex_normals(mesh), mesh.vertices,
                            active, config)

    tris = mesh.triangles
    tu = uv[:, 0][tris]   # (T, 3)
    tv = uv[:, 1][tris]
    td = depth[tris]

    # candidate pixels: integer grid inside each triangle's clipped bbox
    x0 = np.ceil(tu.min(axis=1)).astype(np.int64).clip(0, w - 1)
    x1 = np.floor(tu.max(axis=1)).astype(np.int64).clip(0, w - 1)
    y0 = np.ceil(tv.min(axis=1)).astype(np.int64).clip(0, h - 1)
    y1 = np.floor(tv.max(axis=1)).astype(np.int64).clip(0, h - 1)
    onscreen = (tu.max(axis=1) >= 0) & (tu.min(axis=1) <= w - 1) & \
               (tv.max(axis=1) >= 0) & (tv.min(axis=1) <= h - 1)
    nx = np.where(onscreen, x1 - x0 + 1, 0)
    ny = np.where(onscreen, y1 - y0 + 1, 0)
    counts = nx * ny
    total = int(counts.sum())
    if total == 0:
        return RenderOutput(image=image, depth=depth_buf, coverage_mask=coverage)

    tri_of = np.repeat(np.arange(len(tris)), counts)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    k = np.arange(total) - offsets[tri_of]
    px = x0[tri_of] + k % nx[tri_of]
    py = y0[tri_of] + k // nx[tri_of]

    # signed-area barycentrics (handles both windings after normalization)
    ax, ay = tu[tri_of, 0], tv[tri_of, 0]
    bx, by = tu[tri_of, 1], tv[tri_of, 1]
    cx_, cy_ = tu[tri_of, 2], tv[tri_of, 2]
    area = (bx - ax) * (cy_ - ay) - (by - ay) * (cx_ - ax)
    fx = px.astype(np.float64)
    fy = py.astype(np.float64)
    w0 = (bx - fx) * (cy_ - fy) - (by - fy) * (cx_ - fx)
    w1 = (cx_ - fx) * (ay - fy) - (cy_ - fy) * (ax - fx)
    w2 = (ax - fx) * (by - fy) - (ay - fy) * (bx - fx)
    with np.errstate(divide="ignore", invalid="ignore"):
        nonzero = area != 0.0
        inv = np.where(nonzero, 1.0 / np.where(nonzero, area, 1.0), 0.0)
    w0 *= inv
    w1 *= inv
    w2 *= inv
    inside = nonzero & (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
    if not inside.any():
        return RenderOutput(image=image, depth=depth_buf, coverage_mask=coverage)

    tri_of = tri_of[inside]
    px, py = px[inside], py[inside]
    w0, w1, w2 = w0[inside], w1[inside], w2[inside]
    frag_depth = w0 * td[tri_of, 0] + w1 * td[tri_of, 1] + w2 * td[tri_of, 2]

    behind = frag_depth >= config.background_depth
    if behind.any():
        keep = ~behind
        tri_of, px, py = tri_of[keep], px[keep], py[keep]
        w0, w1, w2, frag_depth = w0[keep], w1[keep], w2[keep], frag_depth[keep]
        if len(tri_of) == 0:
            return RenderOutput(image=image, depth=depth_buf, coverage_mask=coverage)

    pix = py * w + px
    order = np.lexsort((tri_of, frag_depth, pix))
    pix_sorted = pix[order]
    first = np.ones(len(pix_sorted), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    win = order[first]

    sc = shaded[tris]  # (T, 3 verts, 3 rgb)
    color = (w0[win, None] * sc[tri_of[win], 0]
             + w1[win, None] * sc[tri_of[win], 1]
             + w2[win, None] * sc[tri_of[win], 2])
    image[py[win], px[win]] = np.clip(color, 0.0, 1.0)
    depth_buf[py[win], px[win]] = frag_depth[win]
    coverage[py[win], px[win]] = True
    return RenderOutput(image=image, depth=depth_buf, coverage_mask=coverage)


def _resize_nearest(img: np.ndarray, h: int, w: int) -> np.ndarray:
    sy = (np.arange(h) * img.shape[0] / h).astype(np.int64)
    sx = (np.arange(w) * img.shape[1] / w).astype(np.int64)
    return img[sy][:, sx]
