"""Procedural paired gray/depth faces rendered from one shared geometry.

Each subject is a seeded parametric head: an ellipsoid cranium, a wedge-shaped
nose and two spherical eye-socket depressions, expressed as a signed distance
field. Depth comes from sphere tracing the field through a pinhole camera; the
gray image is Lambertian shading of the very same surface under a fixed light,
so gray determines depth up to the shading model.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass
from typing import List, Tuple

import numpy as np

from .samples import FaceSample

FAR_PLANE_MM = 1800.0
BACKGROUND_GRAY = 20
FOCAL_PER_PIXEL = 2.8  # focal length in pixels per image pixel of width
MAX_ANGLE_DEG = 30.0
N_SEQUENCES = 5
LIGHT_DIR = np.array([-0.35, -0.45, -1.0]) / np.linalg.norm([-0.35, -0.45, -1.0])
MARCH_STEPS = 128
HIT_EPS = 0.05
STEP_SCALE = 0.6
GRAZE_EPS = 0.5
# head distance range; narrow so apparent head size tracks true head size
DISTANCE_MM = (870.0, 930.0)


@dataclass(frozen=True)
class SubjectGeometry:
    # cranium semi-axes, mm
    head_x: float
    head_y: float
    head_z: float
    # nose: protrusion, half-angle of the wedge (deg), top / bottom y
    nose_len: float
    nose_angle: float
    nose_top: float
    nose_bottom: float
    # eye sockets: half spacing, height, sphere radius, dip depth
    eye_dx: float
    eye_y: float
    eye_r: float
    eye_depth: float
    albedo: float

    def vector(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


def subject_geometry(seed: int, subject_id: int) -> SubjectGeometry:
    """Geometry of one subject; independent of how many subjects are generated."""
    rng = np.random.default_rng([seed, subject_id, 0])
    u = rng.uniform
    return SubjectGeometry(
        head_x=u(62, 88),
        head_y=u(85, 115),
        head_z=u(78, 100),
        nose_len=u(10, 34),
        nose_angle=u(22, 45),
        nose_top=u(-28, -8),
        nose_bottom=u(18, 38),
        eye_dx=u(24, 38),
        eye_y=u(-30, -12),
        eye_r=u(9, 17),
        eye_depth=u(3, 10),
        albedo=u(0.7, 1.0),
    )


def rotation(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Head-to-camera rotation: yaw about y, then pitch about x, then roll about z (degrees)."""
    a, b, c = np.radians([yaw, pitch, roll])
    ry = np.array([[np.cos(a), 0, np.sin(a)], [0, 1, 0], [-np.sin(a), 0, np.cos(a)]])
    rx = np.array([[1, 0, 0], [0, np.cos(b), -np.sin(b)], [0, np.sin(b), np.cos(b)]])
    rz = np.array([[np.cos(c), -np.sin(c), 0], [np.sin(c), np.cos(c), 0], [0, 0, 1]])
    return ry @ rx @ rz


def _smin(a, b, k):
    h = np.clip(0.5 + 0.5 * (b - a) / k, 0.0, 1.0)
    return b * (1 - h) + a * h - k * h * (1 - h)


def _smax(a, b, k):
    return -_smin(-a, -b, k)


class HeadField:
    """Signed distance field of one head in head-local coordinates (x right, y down, -z toward the viewer)."""

    def __init__(self, g: SubjectGeometry):
        self.g = g
        self.radii = np.array([g.head_x, g.head_y, g.head_z])
        # nose ridge from top (flush with the face) to tip (protruding)
        top_z = self._front_z(0.0, g.nose_top)
        bottom_z = self._front_z(0.0, g.nose_bottom) - g.nose_len
        self.ridge_top = np.array([0.0, g.nose_top, top_z])
        ridge = np.array([0.0, g.nose_bottom, bottom_z]) - self.ridge_top
        ridge /= np.linalg.norm(ridge)
        beta = np.radians(g.nose_angle)
        normals = []
        for side in (1.0, -1.0):
            spread = np.array([side * np.sin(beta), 0.0, np.cos(beta)])
            n = np.cross(ridge, spread)
            if n[0] * side < 0:
                n = -n
            normals.append(n / np.linalg.norm(n))
        self.side_normals = np.stack(normals)
        self.nose_back = self._front_z(0.0, 0.0) + 25.0
        self.eyes = []
        for side in (1.0, -1.0):
            x = side * g.eye_dx
            surf = self._front_z(x, g.eye_y)
            self.eyes.append(np.array([x, g.eye_y, surf - g.eye_r + g.eye_depth]))

    def _front_z(self, x: float, y: float) -> float:
        rx, ry, rz = self.radii
        s = max(1.0 - (x / rx) ** 2 - (y / ry) ** 2, 0.0)
        return -rz * np.sqrt(s)

    def __call__(self, q: np.ndarray) -> np.ndarray:
        g = self.g
        k0 = np.linalg.norm(q / self.radii, axis=-1)
        k1 = np.linalg.norm(q / self.radii**2, axis=-1)
        d_head = k0 * (k0 - 1.0) / np.maximum(k1, 1e-9)

        rel = q - self.ridge_top
        planes = [rel @ n for n in self.side_normals]
        planes.append(g.nose_top - q[..., 1])
        planes.append(q[..., 1] - g.nose_bottom)
        planes.append(q[..., 2] - self.nose_back)
        d_nose = np.max(np.stack(planes), axis=0)

        d = _smin(d_head, d_nose, 4.0)
        for c in self.eyes:
            d_eye = np.linalg.norm(q - c, axis=-1) - g.eye_r
            d = _smax(d, -d_eye, 2.0)
        return d


def render(
    g: SubjectGeometry, pose: Tuple[float, float, float], center_mm: np.ndarray, size: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Sphere-trace one frame; returns (gray uint8, depth uint16 mm)."""
    field = HeadField(g)
    rot = rotation(*pose)
    f = FOCAL_PER_PIXEL * size
    c = size / 2.0
    v, u = np.mgrid[0:size, 0:size].astype(np.float64)
    dirs = np.stack([(u + 0.5 - c) / f, (v + 0.5 - c) / f, np.ones_like(u)], axis=-1).reshape(-1, 3)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    def local(p):
        return (p - center_mm) @ rot  # rot^T applied to row vectors

    t = np.full(dirs.shape[0], center_mm[2] - 250.0)
    hit = np.zeros(dirs.shape[0], dtype=bool)
    for _ in range(MARCH_STEPS):
        d = field(local(dirs * t[:, None]))
        hit |= d < HIT_EPS
        t = np.where(hit, t, t + STEP_SCALE * d)
        if hit.all() or np.all(hit | (t > center_mm[2] + 300.0)):
            break
    # grazing rays near silhouettes converge slowly; accept them when close
    hit |= field(local(dirs * t[:, None])) < GRAZE_EPS

    depth = np.full(dirs.shape[0], FAR_PLANE_MM)
    gray = np.full(dirs.shape[0], float(BACKGROUND_GRAY))
    if hit.any():
        p = dirs[hit] * t[hit, None]
        depth[hit] = p[:, 2]
        q = local(p)
        e = 0.25
        grad = np.stack(
            [field(q + e * axis) - field(q - e * axis) for axis in np.eye(3)],
            axis=-1,
        )
        n_local = grad / np.maximum(np.linalg.norm(grad, axis=1, keepdims=True), 1e-12)
        n_cam = n_local @ rot.T
        lambert = np.clip(n_cam @ LIGHT_DIR, 0.0, 1.0)
        gray[hit] = 255.0 * (0.12 + 0.85 * g.albedo * lambert)
    depth_img = np.rint(depth).reshape(size, size).astype(np.uint16)
    gray_img = np.clip(np.rint(gray), 0, 255).reshape(size, size).astype(np.uint8)
    return gray_img, depth_img


def frame_pose(rng, sequence: int, max_angle: float) -> Tuple[float, float, float]:
    """Sequences 1-3 vary yaw, pitch, roll one at a time; 4-5 vary all three."""
    pose = [0.0, 0.0, 0.0]
    if sequence <= 3:
        pose[sequence - 1] = rng.uniform(-max_angle, max_angle)
    else:
        pose = list(rng.uniform(-max_angle, max_angle, 3))
    return tuple(float(a) for a in pose)


def synth_face_dataset(
    n_subjects: int, n_frames_per_subject: int, size: int, seed: int, max_angle: float = MAX_ANGLE_DEG
) -> List[FaceSample]:
    """Deterministic synthetic dataset ordered by (subject, sequence, frame).

    Subjects are numbered from 1; frames are spread evenly over five sequences.
    """
    if size % 16:
        raise ValueError(f"image size must be divisible by 16, got {size}")
    if n_subjects < 1 or n_frames_per_subject < 1:
        raise ValueError("need at least one subject and one frame")
    f = FOCAL_PER_PIXEL * size
    samples = []
    for sid in range(1, n_subjects + 1):
        geom = subject_geometry(seed, sid)
        rng = np.random.default_rng([seed, sid, 1])
        for frame in range(n_frames_per_subject):
            seq = 1 + frame * N_SEQUENCES // n_frames_per_subject
            pose = frame_pose(rng, seq, max_angle)
            z = rng.uniform(*DISTANCE_MM)
            offset = rng.uniform(-0.06, 0.06, 2) * size
            center = np.array([offset[0] * z / f, offset[1] * z / f, z])
            gray, depth = render(geom, pose, center, size)
            head_xy = (size / 2.0 + offset[0], size / 2.0 + offset[1])
            samples.append(FaceSample(gray, depth, sid, seq, frame, head_xy, pose))
    return samples


def synth_focal(size: int) -> float:
    """Focal length in pixels of the synthetic camera at the given image size."""
    return FOCAL_PER_PIXEL * size
