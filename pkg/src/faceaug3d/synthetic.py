"""Procedural face-like test mesh with exact bilateral symmetry.

The head is a superellipsoid with nose/brow/lip displacements, built as an
x >= 0 half grid that is mirrored vertex-for-vertex and triangle-for-
triangle, so the vertex set is closed under x negation exactly and the two
halves render as mirror images. 68 landmark vertices are designated at
fixed parametric grid positions following the common 68-point scheme.
"""

import math
from dataclasses import dataclass

import numpy as np

from .annotate import MIRRORED_PAIRS_68
from .meshes import Mesh, Plane, back_plane

# superellipsoid half-axes (x: half face width, y: half height, z: depth)
_AX, _AY, _AZ = 0.72, 1.0, 0.80
_EXP = 2.5

_NOSE_AMP = 0.35 * _AZ
_NOSE_SIGMA_X = 0.14
_NOSE_SIGMA_Y = 0.18
_NOSE_ROW_FRAC = 0.44
_BROW_AMP = 0.05 * _AZ
_BROW_ROW_FRAC = 0.66
_LIP_AMP = 0.04 * _AZ
_LIP_ROW_FRAC = 0.20


@dataclass
class SyntheticHead:
    mesh: Mesh
    landmark_vertex_ids: np.ndarray   # (68,) vertex indices
    bilateral: Plane                  # x = 0, normal toward subject's right
    back: Plane

    @property
    def landmark_points(self) -> np.ndarray:
        return self.mesh.vertices[self.landmark_vertex_ids]

    @property
    def nose_apex_vertex(self) -> int:
        return int(self.landmark_vertex_ids[30])


# (landmark id) -> (row fraction bottom->top, signed column fraction).
# Negative column fractions are on the subject's right (mesh -x).
def _landmark_layout() -> list[tuple[float, float]]:
    layout: list[tuple[float, float]] = []
    # jaw 0-16: silhouette arc from right ear over the chin to the left ear
    for i in range(17):
        t = i / 16.0
        c = math.cos(t * math.pi)
        layout.append((0.02 + 0.50 * c * c, -0.55 * c))
    # brows 17-26
    for cf in (-0.38, -0.30, -0.22, -0.15, -0.08):
        layout.append((0.68, cf))
    for cf in (0.08, 0.15, 0.22, 0.30, 0.38):
        layout.append((0.68, cf))
    # nose bridge 27-30 down the midline; 30 is the apex row
    for rf in (0.62, 0.56, 0.50, _NOSE_ROW_FRAC):
        layout.append((rf, 0.0))
    # nostril line 31-35
    for cf in (-0.10, -0.05, 0.0, 0.05, 0.10):
        layout.append((0.36, cf))
    # right eye 36-41 (outer corner, upper lid x2, inner corner, lower lid x2)
    layout += [(0.575, -0.30), (0.60, -0.26), (0.60, -0.20),
               (0.575, -0.16), (0.55, -0.20), (0.55, -0.26)]
    # left eye 42-47, mirror correspondence of the right eye
    layout += [(0.575, 0.16), (0.60, 0.20), (0.60, 0.26),
               (0.575, 0.30), (0.55, 0.26), (0.55, 0.20)]
    # outer lips 48-59
    layout += [(0.22, -0.16), (0.25, -0.10), (0.26, -0.04), (0.265, 0.0),
               (0.26, 0.04), (0.25, 0.10), (0.22, 0.16), (0.17, 0.10),
               (0.155, 0.04), (0.15, 0.0), (0.155, -0.04), (0.17, -0.10)]
    # inner lips 60-67
    layout += [(0.21, -0.12), (0.225, -0.05), (0.23, 0.0), (0.225, 0.05),
               (0.21, 0.12), (0.195, 0.05), (0.19, 0.0), (0.195, -0.05)]
    return layout


def _superellipsoid_radius(u: np.ndarray) -> np.ndarray:
    term = (np.abs(u[..., 0] / _AX) ** _EXP
            + np.abs(u[..., 1] / _AY) ** _EXP
            + np.abs(u[..., 2] / _AZ) ** _EXP)
    return term ** (-1.0 / _EXP)


def generate_head(resolution: int = 36) -> SyntheticHead:
    """Deterministic symmetric head mesh; resolution >= 8.

    resolution sets both the interior latitude row count and the azimuth
    steps per half, giving roughly 4 * resolution**2 triangles.
    """
    if resolution < 8:
        raise ValueError("resolution must be >= 8")
    n_lat = resolution
    n_half = resolution

    phis = -math.pi / 2 + math.pi * (np.arange(n_lat) + 1) / (n_lat + 1)
    thetas = math.pi * np.arange(n_half + 1) / n_half

    th, ph = np.meshgrid(thetas, phis)            # (n_lat, n_half + 1)
    u = np.stack([np.cos(ph) * np.sin(th), np.sin(ph), np.cos(ph) * np.cos(th)],
                 axis=-1)
    rho = _superellipsoid_radius(u)
    pts = rho[..., None] * u
    pts[:, 0, 0] = 0.0            # exact seam at theta = 0
    pts[:, n_half, 0] = 0.0       # exact seam at theta = pi

    # feature displacements along +z, gated to the frontal hemisphere
    nose_row = int(round(_NOSE_ROW_FRAC * (n_lat - 1)))
    y_nose = pts[nose_row, 0, 1]
    gate = np.maximum(0.0, np.cos(th)) ** 2
    x, y = pts[..., 0], pts[..., 1]
    bump = _NOSE_AMP * np.exp(-(x / _NOSE_SIGMA_X) ** 2
                              - ((y - y_nose) / _NOSE_SIGMA_Y) ** 2)
    y_brow = _AY * math.sin(-math.pi / 2 + math.pi * (_BROW_ROW_FRAC * (n_lat - 1) + 1) / (n_lat + 1))
    bump = bump + _BROW_AMP * np.exp(-((y - y_brow) / 0.10) ** 2 - (x / 0.45) ** 2)
    y_lip = _AY * math.sin(-math.pi / 2 + math.pi * (_LIP_ROW_FRAC * (n_lat - 1) + 1) / (n_lat + 1))
    bump = bump + _LIP_AMP * np.exp(-((y - y_lip) / 0.08) ** 2 - (x / 0.30) ** 2)
    pts[..., 2] += gate * bump

    # vertex table: half grid, then mirrored interior columns, then poles
    half_count = n_lat * (n_half + 1)

    def half_id(row: int, col: int) -> int:
        return row * (n_half + 1) + col

    def mirror_id(row: int, col: int) -> int:
        if col == 0 or col == n_half:
            return half_id(row, col)
        return half_count + row * (n_half - 1) + (col - 1)

    mirrored = pts[:, 1:n_half, :].copy()
    mirrored[..., 0] = -mirrored[..., 0]

    rho_pole = _superellipsoid_radius(np.array([0.0, 1.0, 0.0]))
    bottom_pole = np.array([0.0, -rho_pole, 0.0])
    top_pole = np.array([0.0, rho_pole, 0.0])
    vertices = np.concatenate([
        pts.reshape(-1, 3),
        mirrored.reshape(-1, 3),
        bottom_pole[None, :],
        top_pole[None, :],
    ])
    p_bottom = len(vertices) - 2
    p_top = len(vertices) - 1

    triangles: list[tuple[int, int, int]] = []
    for i in range(n_lat - 1):
        for j in range(n_half):
            v00 = half_id(i, j)
            v01 = half_id(i, j + 1)
            v10 = half_id(i + 1, j)
            v11 = half_id(i + 1, j + 1)
            triangles.append((v00, v01, v11))
            triangles.append((v00, v11, v10))
            m00 = mirror_id(i, j)
            m01 = mirror_id(i, j + 1)
            m10 = mirror_id(i + 1, j)
            m11 = mirror_id(i + 1, j + 1)
            triangles.append((m00, m11, m01))
            triangles.append((m00, m10, m11))
    for j in range(n_half):
        triangles.append((p_bottom, half_id(0, j + 1), half_id(0, j)))
        triangles.append((p_bottom, mirror_id(0, j), mirror_id(0, j + 1)))
        last = n_lat - 1
        triangles.append((p_top, half_id(last, j), half_id(last, j + 1)))
        triangles.append((p_top, mirror_id(last, j + 1), mirror_id(last, j)))

    mesh = Mesh(vertices=vertices, triangles=np.array(triangles, dtype=np.int64))

    # designated landmark vertices
    ids = np.zeros(68, dtype=np.int64)
    for lm, (rf, cf) in enumerate(_landmark_layout()):
        row = min(n_lat - 1, max(0, int(round(rf * (n_lat - 1)))))
        col = min(n_half - 1, max(0, int(round(abs(cf) * n_half))))
        ids[lm] = mirror_id(row, col) if cf < 0 else half_id(row, col)
    # pin the nose tip to the apex row on the front meridian
    ids[30] = half_id(nose_row, 0)

    apex = int(np.argmax(mesh.vertices[:, 2]))
    zmax = mesh.vertices[:, 2].max()
    if apex != ids[30] or np.count_nonzero(mesh.vertices[:, 2] == zmax) != 1:
        raise RuntimeError("head construction lost the strict nose apex")

    for r_idx, l_idx in MIRRORED_PAIRS_68:
        pr, pl = mesh.vertices[ids[r_idx]], mesh.vertices[ids[l_idx]]
        if not (pr[0] == -pl[0] and pr[1] == pl[1] and pr[2] == pl[2]):
            raise RuntimeError(f"landmark pair ({r_idx}, {l_idx}) is not mirrored")

    bilateral = Plane(np.array([-1.0, 0.0, 0.0]), 0.0)
    return SyntheticHead(
        mesh=mesh,
        landmark_vertex_ids=ids,
        bilateral=bilateral,
        back=back_plane(mesh, (0.0, 0.0, 1.0)),
    )
