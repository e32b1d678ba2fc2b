"""Bake per-vertex RGB from a source image onto an aligned mesh.

Each vertex is projected orthographically into the image and takes the
color of its nearest pixel. Vertices landing outside the raster are filled
afterwards by breadth-first propagation over mesh edges, so rendered crops
never show uncolored fringes.
"""

from collections import deque
from dataclasses import dataclass

import numpy as np

from .meshes import Mesh, vertex_adjacency
from .pose import Camera, RigidPose


class TextureError(ValueError):
    """Baking could not associate the mesh with the image."""


@dataclass
class ColoredMesh:
    """Mesh plus baked colors; textured_mask marks true source samples."""

    mesh: Mesh
    colors: np.ndarray          # (V, 3) in [0, 1]
    textured_mask: np.ndarray   # (V,) bool

    def __post_init__(self):
        self.colors = np.asarray(self.colors, dtype=np.float64)
        self.textured_mask = np.asarray(self.textured_mask, dtype=bool)
        if self.colors.shape != self.mesh.vertices.shape:
            raise TextureError("colors must have one RGB row per vertex")
        if self.textured_mask.shape != (len(self.mesh.vertices),):
            raise TextureError("textured_mask must have one flag per vertex")


def _round_half_away(values: np.ndarray) -> np.ndarray:
    return np.copysign(np.floor(np.abs(values) + 0.5), values).astype(np.int64)


def bake_vertex_colors(mesh: Mesh, image: np.ndarray, pose: RigidPose,
                       camera: Camera) -> ColoredMesh:
    """Transfer source-pixel RGB onto mesh vertices under the given pose.

    The pose must align the mesh to the image's camera frame. No occlusion
    test is performed: hidden vertices take the pixel in front of them,
    and downstream view constraints keep such regions from being shown.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] == 0 or img.shape[1] == 0:
        raise TextureError("image must be a non-empty (H, W, 3) raster")
    h, w = img.shape[:2]

    uv = camera.project(pose.transform(mesh.vertices))
    iu = _round_half_away(uv[:, 0])
    iv = _round_half_away(uv[:, 1])
    inside = (iu >= 0) & (iu < w) & (iv >= 0) & (iv < h)
    if not inside.any():
        raise TextureError("no vertex projects inside the image; check pose/scale")

    colors = np.zeros((len(mesh.vertices), 3))
    colors[inside] = img[iv[inside], iu[inside]]
    colors = np.clip(colors, 0.0, 1.0)

    if not inside.all():
        _fill_untextured(mesh, colors, inside)
    return ColoredMesh(mesh=mesh, colors=colors, textured_mask=inside)


def _fill_untextured(mesh: Mesh, colors: np.ndarray, textured: np.ndarray) -> None:
    """BFS color propagation from textured vertices, in-place.

    Seeds are visited in vertex-id order and adjacency lists are sorted,
    so the fill is deterministic. Vertices in components without any
    textured vertex keep black.
    """
    neighbors = vertex_adjacency(mesh)
    done = textured.copy()
    queue = deque(int(v) for v in np.nonzero(textured)[0])
    while queue:
        cur = queue.popleft()
        for nb in neighbors[cur]:
            if not done[nb]:
                done[nb] = True
                colors[nb] = colors[cur]
                queue.append(int(nb))
