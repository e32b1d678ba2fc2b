"""Annotation lifecycle for synthesized views.

Covers lifting 2D landmarks onto the mesh, per-view visibility, projection
into new views, identity/attribute label propagation, 5-point alignment
crops, and the in-plane similarity transform used as the 2D augmentation
baseline.

Landmark indices follow the common 68-point scheme: jaw 0-16 running from
the subject's right to left, brows 17-26, nose 27-35, eyes 36-47, mouth
48-67.
"""

from dataclasses import dataclass, field

import numpy as np

from .meshes import BVH, Ray, ray_intersect
from .pose import Camera, RigidPose

# Mirrored landmark index pairs, subject-right landmark first. With this
# ordering the fitted bilateral normal points to the subject's right,
# which is the orientation the view-admissibility gate expects.
MIRRORED_PAIRS_68 = (
    (0, 16), (1, 15), (2, 14), (3, 13), (4, 12), (5, 11), (6, 10), (7, 9),
    (17, 26), (18, 25), (19, 24), (20, 23), (21, 22),
    (31, 35), (32, 34),
    (36, 45), (37, 44), (38, 43), (39, 42), (40, 47), (41, 46),
    (48, 54), (49, 53), (50, 52), (59, 55), (58, 56),
    (60, 64), (61, 63), (67, 65),
)

MIDLINE_68 = (8, 27, 28, 29, 30, 33, 51, 57, 62, 66)

# right eye outer corner, left eye outer corner, nose tip, mouth corners
FIVE_POINT_DEFAULT = (36, 45, 30, 48, 54)

DEFAULT_VISIBILITY_TAU = 2e-3  # fraction of the mesh bbox diagonal


class AnnotationError(ValueError):
    """Annotation propagation failed for a record."""


@dataclass
class AnnotatedFace:
    """One dataset record: an image reference plus all its labels."""

    image_ref: str
    landmarks68: np.ndarray          # (68, 2) pixels
    bbox: tuple                      # (x, y, w, h) pixels
    identity: str
    age: float | str | None = None
    gender: str | None = None
    yaw_deg: float | None = None
    pitch_deg: float | None = None
    five_points: tuple = FIVE_POINT_DEFAULT
    is_synthetic: bool = False
    light_id: str | None = None
    mesh_ref: str | None = None
    mesh_landmarks: tuple | None = None   # 68 mesh vertex ids, when known
    visibility68: np.ndarray | None = None
    source_image: str | None = None       # provenance for synthetic records

    def __post_init__(self):
        self.landmarks68 = np.asarray(self.landmarks68, dtype=np.float64).reshape(-1, 2)
        if self.visibility68 is not None:
            self.visibility68 = np.asarray(self.visibility68, dtype=bool)

    def validate(self, image_width: int | None = None,
                 image_height: int | None = None) -> None:
        """Check schema invariants; raises AnnotationError."""
        if self.landmarks68.shape != (68, 2):
            raise AnnotationError("expected exactly 68 landmarks")
        fp = tuple(int(i) for i in self.five_points)
        if len(set(fp)) != 5 or min(fp) < 0 or max(fp) >= 68:
            raise AnnotationError("five_points must be 5 distinct indices into the 68")
        if image_width is not None and image_height is not None:
            mx, my = 0.2 * image_width, 0.2 * image_height
            x, y = self.landmarks68[:, 0], self.landmarks68[:, 1]
            if (x.min() < -mx or x.max() >= image_width + mx
                    or y.min() < -my or y.max() >= image_height + my):
                raise AnnotationError("landmarks outside the image by more than 20%")
        bw, bh = self.bbox[2], self.bbox[3]
        if bw <= 0 or bh <= 0:
            raise AnnotationError("bbox must have positive size")


@dataclass
class Landmark3DSet:
    """68 mesh-frame landmark positions with lift status and 2D sources."""

    points: np.ndarray      # (68, 3) mesh frame
    hit: np.ndarray         # (68,) bool, False where the lift ray missed
    source_2d: np.ndarray   # (68, 2) original pixel locations

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.hit = np.asarray(self.hit, dtype=bool)
        self.source_2d = np.asarray(self.source_2d, dtype=np.float64).reshape(-1, 2)


@dataclass(frozen=True)
class VisibilityConfig:
    tau: float = DEFAULT_VISIBILITY_TAU

    def __post_init__(self):
        if not self.tau > 0.0:
            raise AnnotationError("visibility tau must be positive")


def _view_direction_mesh(pose: RigidPose) -> np.ndarray:
    """Unit mesh-frame direction of rays traveling from camera into scene."""
    return pose.rotation.T @ np.array([0.0, 0.0, -1.0])


def _ray_through_point(point_mesh: np.ndarray, pose: RigidPose, bvh: BVH) -> Ray:
    """View ray through a mesh-frame point, started well outside the mesh."""
    d = _view_direction_mesh(pose)
    c = bvh.mesh.centroid
    back = float(np.linalg.norm(point_mesh - c)) + 2.0 * bvh.mesh.bbox_diag
    return Ray(origin=point_mesh - back * d, direction=d)


def lift_landmarks_to_3d(landmarks_2d: np.ndarray, bvh: BVH, pose: RigidPose,
                         camera: Camera) -> Landmark3DSet:
    """Cast each landmark's view ray onto the mesh.

    Landmarks whose ray misses (typical for jaw-contour points sitting just
    off the silhouette) are flagged; more than 50% misses raises, since
    that indicates a failed alignment.
    """
    lms = np.asarray(landmarks_2d, dtype=np.float64).reshape(-1, 2)
    plane_xy = camera.pixels_to_plane(lms)
    d = _view_direction_mesh(pose)
    c = bvh.mesh.centroid
    points = np.zeros((len(lms), 3))
    hit = np.zeros(len(lms), dtype=bool)
    for i, (x, y) in enumerate(plane_xy):
        on_line = pose.inverse_transform(np.array([x, y, 0.0]))
        back = float(np.linalg.norm(on_line - c)) + 2.0 * bvh.mesh.bbox_diag
        h = ray_intersect(bvh, Ray(origin=on_line - back * d, direction=d))
        if h is not None:
            points[i] = h.point
            hit[i] = True
    if hit.sum() * 2 < len(lms):
        raise AnnotationError(
            f"only {int(hit.sum())}/{len(lms)} landmark rays hit the mesh; "
            "pose alignment likely failed")
    return Landmark3DSet(points=points, hit=hit, source_2d=lms)


def landmark_visibility(point_mesh: np.ndarray, bvh: BVH, q: RigidPose,
                        camera: Camera,
                        cfg: VisibilityConfig = VisibilityConfig()) -> bool:
    """True when the view ray toward the point first meets the mesh within
    tau * bbox_diag of it. A clean miss (silhouette grazing) counts visible."""
    p = np.asarray(point_mesh, dtype=np.float64).reshape(3)
    h = ray_intersect(bvh, _ray_through_point(p, q, bvh))
    if h is None:
        return True
    return float(np.linalg.norm(h.point - p)) <= cfg.tau * bvh.mesh.bbox_diag


def project_landmarks(l3: Landmark3DSet, q: RigidPose, camera: Camera,
                      bvh: BVH,
                      cfg: VisibilityConfig = VisibilityConfig()):
    """Project lifted landmarks into the view given by q.

    Returns (points (68, 2) pixels, visible (68,) bool). Landmarks that
    never lifted reuse their source 2D location shifted by the 2D motion
    of their nearest successfully lifted neighbor, and are marked occluded.
    """
    n = len(l3.points)
    out = np.zeros((n, 2))
    visible = np.zeros(n, dtype=bool)

    hit_ids = np.nonzero(l3.hit)[0]
    if hit_ids.size:
        projected = camera.project(q.transform(l3.points[hit_ids]))
        out[hit_ids] = projected
        for row, i in enumerate(hit_ids):
            visible[i] = landmark_visibility(l3.points[i], bvh, q, camera, cfg)
        deltas = projected - l3.source_2d[hit_ids]
    miss_ids = np.nonzero(~l3.hit)[0]
    for i in miss_ids:
        if hit_ids.size:
            gaps = np.linalg.norm(l3.source_2d[hit_ids] - l3.source_2d[i], axis=1)
            nb = int(np.argmin(gaps))  # ties resolve to the lowest id
            out[i] = l3.source_2d[i] + deltas[nb]
        else:
            out[i] = l3.source_2d[i]
        visible[i] = False
    return out, visible


def propagate_labels(src: AnnotatedFace, yaw_offset_deg: float,
                     pitch_offset_deg: float,
                     light_id: str | None = None) -> AnnotatedFace:
    """Labels for a synthesized view: identity/age/gender copied verbatim,
    pose labels shifted by the view offsets."""
    return AnnotatedFace(
        image_ref=src.image_ref,
        landmarks68=src.landmarks68.copy(),
        bbox=tuple(src.bbox),
        identity=src.identity,
        age=src.age,
        gender=src.gender,
        yaw_deg=None if src.yaw_deg is None else src.yaw_deg + yaw_offset_deg,
        pitch_deg=None if src.pitch_deg is None else src.pitch_deg + pitch_offset_deg,
        five_points=tuple(src.five_points),
        is_synthetic=True,
        light_id=light_id,
        mesh_ref=src.mesh_ref,
        mesh_landmarks=src.mesh_landmarks,
        visibility68=None,
        source_image=src.image_ref,
    )


# ---------------------------------------------------------------------------
# 2D similarity machinery: 5-point alignment and the in-plane baseline.
# ---------------------------------------------------------------------------

def make_alignment_template(size: int = 112) -> np.ndarray:
    """Canonical 5-point layout on a size x size crop: eyes at 30%/70%
    width and 40% height, nose mid-face, mouth corners at 80% height."""
    return np.array([
        [0.30, 0.40],
        [0.70, 0.40],
        [0.50, 0.60],
        [0.35, 0.80],
        [0.65, 0.80],
    ]) * float(size)


def estimate_similarity(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Least-squares 2D similarity (scale/rotation/translation) src -> dst
    as a 3x3 homogeneous matrix. Raises on degenerate (collinear) input."""
    s = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    d = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if len(s) != len(d) or len(s) < 2:
        raise AnnotationError("need at least two point pairs")
    # unknowns (a, b, tx, ty) for [[a, -b, tx], [b, a, ty]]
    n = len(s)
    a_mat = np.zeros((2 * n, 4))
    a_mat[0::2, 0] = s[:, 0]
    a_mat[0::2, 1] = -s[:, 1]
    a_mat[0::2, 2] = 1.0
    a_mat[1::2, 0] = s[:, 1]
    a_mat[1::2, 1] = s[:, 0]
    a_mat[1::2, 3] = 1.0
    rhs = d.reshape(-1)
    sol, _, rank, _ = np.linalg.lstsq(a_mat, rhs, rcond=None)
    if rank < 4:
        raise AnnotationError("similarity is underdetermined (collinear points)")
    a, b, tx, ty = sol
    if a * a + b * b == 0.0:
        raise AnnotationError("degenerate similarity (zero scale)")
    return np.array([[a, -b, tx], [b, a, ty], [0.0, 0.0, 1.0]])


def transform_points(matrix: np.ndarray, points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return pts @ matrix[:2, :2].T + matrix[:2, 2]


def warp_image(image: np.ndarray, matrix: np.ndarray,
               output_hw: tuple[int, int]) -> np.ndarray:
    """Apply a forward 2D transform to an image via inverse-mapped bilinear
    sampling; out-of-bounds samples are black."""
    img = np.asarray(image, dtype=np.float64)
    h_out, w_out = output_hw
    inv = np.linalg.inv(matrix)
    xs, ys = np.meshgrid(np.arange(w_out, dtype=np.float64),
                         np.arange(h_out, dtype=np.float64))
    src_x = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    src_y = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]

    h_in, w_in = img.shape[:2]
    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    fx = src_x - x0
    fy = src_y - y0

    def sample(yy, xx):
        ok = (xx >= 0) & (xx < w_in) & (yy >= 0) & (yy < h_in)
        vals = np.zeros(xx.shape + (img.shape[2],))
        vals[ok] = img[yy[ok], xx[ok]]
        return vals

    out = ((1 - fx)[..., None] * (1 - fy)[..., None] * sample(y0, x0)
           + fx[..., None] * (1 - fy)[..., None] * sample(y0, x0 + 1)
           + (1 - fx)[..., None] * fy[..., None] * sample(y0 + 1, x0)
           + fx[..., None] * fy[..., None] * sample(y0 + 1, x0 + 1))
    return out


def align_5pt(image: np.ndarray, points5: np.ndarray,
              template: np.ndarray | None = None,
              output_size: int = 112) -> np.ndarray:
    """Warp the image so its five landmarks land on the canonical template."""
    if template is None:
        template = make_alignment_template(output_size)
    m = estimate_similarity(points5, template)
    return warp_image(image, m, (output_size, output_size))


def similarity_about_center(image_hw: tuple[int, int], rotation_deg: float,
                            translation=(0.0, 0.0)) -> np.ndarray:
    """Rotation about the image center followed by a translation, as a
    3x3 homogeneous pixel-space matrix."""
    h, w = image_hw
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    th = np.radians(rotation_deg)
    c, s = np.cos(th), np.sin(th)
    tx, ty = translation
    m = np.array([
        [c, -s, cx - c * cx + s * cy + tx],
        [s, c, cy - s * cx - c * cy + ty],
        [0.0, 0.0, 1.0],
    ])
    return m


def similarity_2d_augment(image: np.ndarray, landmarks: np.ndarray,
                          rotation_deg: float = 0.0,
                          translation=(0.0, 0.0)):
    """In-plane rotate + translate an image and its landmarks together.

    This is the 2D baseline augmentation; the same matrix moves pixels and
    landmark coordinates, so structure is preserved exactly.
    """
    m = similarity_about_center(image.shape[:2], rotation_deg, translation)
    if rotation_deg == 0.0 and tuple(translation) == (0.0, 0.0):
        new_img = np.asarray(image, dtype=np.float64).copy()
    else:
        new_img = warp_image(image, m, image.shape[:2])
    return new_img, transform_points(m, landmarks)
