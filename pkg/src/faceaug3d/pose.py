"""Rigid pose handling: estimation, yaw/pitch composition, admissibility.

Conventions (fixed package-wide):

* Mesh frame: +x subject's left, +y up, +z out of the face.
* Camera frame: +x image-right, +y image-up, +z toward the viewer. The
  viewing direction constant is (0, 0, 1); view rays travel along -z.
* A frontal face therefore has rotation ~ identity, and depth is -z.
* Pixels: u along columns (rightward), v along rows (downward), origin at
  the top-left pixel center.
* Angles are degrees at every interface and radians only inside formulas.
"""

import math
from dataclasses import dataclass

import numpy as np

from .meshes import Plane

VIEWING_DIRECTION = np.array([0.0, 0.0, 1.0])
DEFAULT_PITCH_CAP_DEG = 45.0

_ORTHO_TOL = 1e-9


class PoseError(ValueError):
    """Pose estimation or composition failed."""


@dataclass(frozen=True)
class RigidPose:
    """Similarity transform mesh -> camera: X_cam = scale * R @ X + t."""

    rotation: np.ndarray         # (3, 3) proper orthonormal
    translation: np.ndarray      # (3,) camera units
    scale: float = 1.0

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.abs(r @ r.T - np.eye(3)).max() > _ORTHO_TOL:
            raise PoseError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise PoseError("rotation must have determinant +1")
        if not self.scale > 0.0:
            raise PoseError("scale must be positive")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "scale", float(self.scale))

    @staticmethod
    def identity() -> "RigidPose":
        return RigidPose(np.eye(3), np.zeros(3), 1.0)

    def transform(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * (pts @ self.rotation.T) + self.translation

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def inverse_transform(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return ((pts - self.translation) / self.scale) @ self.rotation

    def to_dict(self) -> dict:
        yaw, pitch, roll = euler_from_rotation(self.rotation)
        t = self.translation
        return {
            "yaw_deg": yaw, "pitch_deg": pitch, "roll_deg": roll,
            "tx": float(t[0]), "ty": float(t[1]), "tz": float(t[2]),
            "scale": self.scale,
        }

    @staticmethod
    def from_dict(d: dict) -> "RigidPose":
        r = rotation_from_euler(d["yaw_deg"], d["pitch_deg"], d["roll_deg"])
        return RigidPose(r, np.array([d["tx"], d["ty"], d["tz"]]), d["scale"])


@dataclass(frozen=True)
class Camera:
    """Orthographic camera; image size in pixels, viewing direction (0,0,1)."""

    image_width: int
    image_height: int
    pixel_scale: float = 1.0  # camera units per pixel

    def __post_init__(self):
        if self.image_width <= 0 or self.image_height <= 0:
            raise PoseError("camera image size must be positive")
        if not self.pixel_scale > 0.0:
            raise PoseError("pixel_scale must be positive")

    @property
    def center(self) -> tuple[float, float]:
        return (self.image_width - 1) / 2.0, (self.image_height - 1) / 2.0

    def project(self, points_cam: np.ndarray) -> np.ndarray:
        """Camera-frame points -> (u, v) pixels (v grows downward)."""
        pts = np.asarray(points_cam, dtype=np.float64)
        cx, cy = self.center
        uv = np.empty(pts.shape[:-1] + (2,))
        uv[..., 0] = cx + pts[..., 0] / self.pixel_scale
        uv[..., 1] = cy - pts[..., 1] / self.pixel_scale
        return uv

    def depths(self, points_cam: np.ndarray) -> np.ndarray:
        """Depth = -z: smaller is nearer the viewer."""
        return -np.asarray(points_cam, dtype=np.float64)[..., 2]

    def pixels_to_plane(self, pixels: np.ndarray) -> np.ndarray:
        """Pixels -> camera-plane (x, y) coordinates."""
        px = np.asarray(pixels, dtype=np.float64)
        cx, cy = self.center
        xy = np.empty(px.shape)
        xy[..., 0] = (px[..., 0] - cx) * self.pixel_scale
        xy[..., 1] = (cy - px[..., 1]) * self.pixel_scale
        return xy


@dataclass(frozen=True)
class EulerOffsets:
    """Yaw/pitch view offsets in degrees, each limited to [-90, 90]."""

    yaw: float
    pitch: float = 0.0

    def __post_init__(self):
        if not (-90.0 <= self.yaw <= 90.0 and -90.0 <= self.pitch <= 90.0):
            raise PoseError("yaw and pitch offsets must lie in [-90, 90] degrees")
        object.__setattr__(self, "yaw", float(self.yaw))
        object.__setattr__(self, "pitch", float(self.pitch))


def rotation_x(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_y(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_z(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_from_euler(yaw_deg: float, pitch_deg: float, roll_deg: float = 0.0) -> np.ndarray:
    """R = Ry(yaw) @ Rx(pitch) @ Rz(roll), all right-handed."""
    return rotation_y(yaw_deg) @ rotation_x(pitch_deg) @ rotation_z(roll_deg)


def euler_from_rotation(r: np.ndarray) -> tuple[float, float, float]:
    """Inverse of rotation_from_euler; (yaw, pitch, roll) in degrees."""
    r = np.asarray(r, dtype=np.float64)
    sp = -r[1, 2]
    sp = min(1.0, max(-1.0, sp))
    pitch = math.asin(sp)
    if abs(sp) < 1.0 - 1e-12:
        yaw = math.atan2(r[0, 2], r[2, 2])
        roll = math.atan2(r[1, 0], r[1, 1])
    else:
        # gimbal lock: fold roll into yaw
        yaw = math.atan2(-r[2, 0], r[0, 0])
        roll = 0.0
    return math.degrees(yaw), math.degrees(pitch), math.degrees(roll)


def compose_rotation(offsets: EulerOffsets) -> RigidPose:
    """Pure rotation pose for a yaw/pitch offset (yaw outermost)."""
    r = rotation_y(offsets.yaw) @ rotation_x(offsets.pitch)
    return RigidPose(r, np.zeros(3), 1.0)


def apply_offsets(base: RigidPose, offsets: EulerOffsets) -> RigidPose:
    """Total pose for a view: the offset rotates the mesh in its own frame
    before the base alignment is applied."""
    r = base.rotation @ compose_rotation(offsets).rotation
    return RigidPose(r, base.translation, base.scale)


def estimate_pose(landmarks_2d: np.ndarray, landmarks_3d: np.ndarray,
                  camera: Camera) -> tuple[RigidPose, float]:
    """Scaled-orthographic pose from 2D pixel / 3D mesh correspondences.

    Solves the linear least-squares system for the 2x3 projection block,
    then factors it into scale and a proper rotation via SVD. Returns the
    pose and the reprojection RMS in pixels. The depth translation is
    unobservable under orthography and is fixed at 0.

    Raises PoseError for fewer than 4 points or a rank-deficient
    configuration (e.g. all 3D points coplanar).
    """
    x2 = camera.pixels_to_plane(np.asarray(landmarks_2d, dtype=np.float64).reshape(-1, 2))
    x3 = np.asarray(landmarks_3d, dtype=np.float64).reshape(-1, 3)
    if len(x2) != len(x3):
        raise PoseError("2D and 3D landmark counts differ")
    if len(x2) < 4:
        raise PoseError("need at least 4 correspondences")

    a = np.concatenate([x3, np.ones((len(x3), 1))], axis=1)
    sol, _, rank, _ = np.linalg.lstsq(a, x2, rcond=None)
    if rank < 4:
        raise PoseError("rank-deficient correspondence configuration")
    m = sol[:3].T          # (2, 3): scaled top rows of the rotation
    t2 = sol[3]

    u, svals, vt = np.linalg.svd(m, full_matrices=False)
    scale = float(svals.mean())
    if scale <= 0.0:
        raise PoseError("degenerate projection (zero scale)")
    top = u @ vt
    r = np.vstack([top, np.cross(top[0], top[1])])

    pose = RigidPose(r, np.array([t2[0], t2[1], 0.0]), scale)
    residual = scale * (x3 @ top.T) + t2 - x2
    rms = float(np.sqrt((residual ** 2).sum(axis=1).mean())) / camera.pixel_scale
    return pose, rms


def check_rotation_admissible(q: RigidPose, bilateral: Plane, back: Plane) -> bool:
    """Gate on the candidate total pose keeping untextured regions hidden.

    Both plane normals are rotated into the camera frame (rotation only;
    translation and scale never act on normals) and tested against the
    viewing direction:

        cross(R n_bilateral, view).y >= 0    and    dot(R n_back, view) <= 0
    """
    n_bil = q.rotation @ bilateral.normal
    n_back = q.rotation @ back.normal
    side = np.cross(n_bil, VIEWING_DIRECTION)[1]
    facing = float(n_back @ VIEWING_DIRECTION)
    return bool(side >= 0.0) and bool(facing <= 0.0)


def admissible_offset_set(base: RigidPose, planes: tuple[Plane, Plane],
                          candidates, pitch_cap_deg: float = DEFAULT_PITCH_CAP_DEG):
    """Filter offset candidates, preserving order.

    Drops offsets whose |pitch| exceeds the cap, then applies
    check_rotation_admissible to the composed total pose.
    """
    bilateral, back = planes
    kept = []
    for off in candidates:
        if abs(off.pitch) > pitch_cap_deg:
            continue
        if check_rotation_admissible(apply_offsets(base, off), bilateral, back):
            kept.append(off)
    return kept
