"""Pinhole depth camera over plant cylinders and the ground plane, plus sensor noise.

Depth is the Euclidean distance along the (unit) pixel ray to the nearest
surface, clamped to [0, max_range]; pixels with no hit in range read
max_range. Plants render as two vertical cylinders (trunk and canopy);
collision elsewhere uses the trunk only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .world import PlantInstance, VineyardWorld

IMAGE_SIZE = 112
MAX_RANGE = 5.0


@dataclass(frozen=True)
class CameraParams:
    """Intrinsics and mounting of the depth camera."""

    width: int = IMAGE_SIZE
    height: int = IMAGE_SIZE
    hfov: float = math.radians(87.0)
    vfov: float = math.radians(58.0)
    mount_forward: float = 0.2
    mount_up: float = 0.3
    max_range: float = MAX_RANGE
    render_ground: bool = True

    def __post_init__(self):
        if self.width != IMAGE_SIZE or self.height != IMAGE_SIZE:
            raise ValueError(f"image must be {IMAGE_SIZE}x{IMAGE_SIZE}")


@dataclass(frozen=True)
class NoiseSpec:
    """Two-part depth noise: uniform plus depth-proportional, both scaled by factor."""

    uniform_amp: float = 0.5
    proportional_amp: float = 0.5
    factor: float = 1.0

    def __post_init__(self):
        if self.factor < 0:
            raise ValueError("noise factor must be >= 0")

    def scaled(self, factor: float) -> "NoiseSpec":
        return NoiseSpec(self.uniform_amp, self.proportional_amp, factor)


_ray_cache: dict[tuple[int, int, float, float], np.ndarray] = {}


def pixel_rays(params: CameraParams) -> np.ndarray:
    """(H*W, 3) unit ray directions in the camera frame (x fwd, y left, z up).

    Column index grows to the right (negative y), row index grows downward
    (negative z); rays pass through pixel centers.
    """
    key = (params.width, params.height, params.hfov, params.vfov)
    cached = _ray_cache.get(key)
    if cached is not None:
        return cached
    w, h = params.width, params.height
    tan_u = math.tan(params.hfov / 2.0)
    tan_v = math.tan(params.vfov / 2.0)
    j = (np.arange(w) + 0.5 - w / 2.0) / (w / 2.0) * tan_u
    i = (np.arange(h) + 0.5 - h / 2.0) / (h / 2.0) * tan_v
    jj, ii = np.meshgrid(j, i)
    d = np.stack([np.ones_like(jj), -jj, -ii], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    d = np.ascontiguousarray(d.reshape(-1, 3))
    d.setflags(write=False)
    _ray_cache[key] = d
    return d


def camera_rotation(yaw: float, pitch: float) -> np.ndarray:
    """World-from-camera rotation; positive pitch tilts the optical axis down."""
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rot_pitch = np.array([[cp, 0.0, -sp], [0.0, 1.0, 0.0], [sp, 0.0, cp]])
    rot_yaw = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    return rot_yaw @ rot_pitch


def camera_pose_from_robot(x: float, y: float, yaw: float, params: CameraParams,
                           pitch_disturbance: float = 0.0,
                           ) -> tuple[np.ndarray, float, float]:
    """Camera origin, yaw and pitch for a robot pose plus the mount offset."""
    ox = x + params.mount_forward * math.cos(yaw)
    oy = y + params.mount_forward * math.sin(yaw)
    return np.array([ox, oy, params.mount_up]), yaw, pitch_disturbance


@numba.njit(cache=True)
def _cast_kernel(dirs, ox, oy, oz, cxs, cys, rads, zlo, zhi, max_range,
                 render_ground, out):  # pragma: no cover - exercised via render_depth
    n_px = dirs.shape[0]
    n_cyl = cxs.shape[0]
    for p in range(n_px):
        dx = dirs[p, 0]
        dy = dirs[p, 1]
        dz = dirs[p, 2]
        best = max_range
        if render_ground and dz < -1e-12:
            tg = -oz / dz
            if 0.0 < tg < best:
                best = tg
        a = dx * dx + dy * dy
        if a > 1e-14:
            for n in range(n_cyl):
                relx = ox - cxs[n]
                rely = oy - cys[n]
                b = dx * relx + dy * rely
                c = relx * relx + rely * rely - rads[n] * rads[n]
                if b >= 0.0 and c >= 0.0:
                    continue
                disc = b * b - a * c
                if disc <= 0.0:
                    continue
                sq = math.sqrt(disc)
                t = (-b - sq) / a
                if t <= 0.0 or not (zlo[n] <= oz + t * dz <= zhi[n]):
                    t = (-b + sq) / a
                    if t <= 0.0 or not (zlo[n] <= oz + t * dz <= zhi[n]):
                        continue
                if t < best:
                    best = t
        out[p] = best
    return out


def scene_cylinders(world: VineyardWorld, center: tuple[float, float], reach: float,
                    ) -> tuple[np.ndarray, ...]:
    """Flat cylinder arrays (trunk + canopy per plant) within reach of center."""
    idx = world.nearby_plant_indices(center, reach)
    n = len(idx)
    cxs = np.empty(2 * n)
    cys = np.empty(2 * n)
    rads = np.empty(2 * n)
    zlo = np.empty(2 * n)
    zhi = np.empty(2 * n)
    for k, i in enumerate(idx):
        p = world.plants[i]
        cxs[2 * k] = cxs[2 * k + 1] = p.position[0]
        cys[2 * k] = cys[2 * k + 1] = p.position[1]
        rads[2 * k] = p.trunk_radius
        zlo[2 * k] = 0.0
        zhi[2 * k] = p.height
        rads[2 * k + 1] = p.canopy_half_width
        zlo[2 * k + 1] = p.canopy_base
        zhi[2 * k + 1] = p.height
    return cxs, cys, rads, zlo, zhi


def render_depth(world: VineyardWorld, x: float, y: float, yaw: float,
                 params: CameraParams, pitch_disturbance: float = 0.0) -> np.ndarray:
    """Render one (H, W) float64 depth frame from the robot pose."""
    origin, cam_yaw, cam_pitch = camera_pose_from_robot(
        x, y, yaw, params, pitch_disturbance)
    rot = camera_rotation(cam_yaw, cam_pitch)
    dirs = pixel_rays(params) @ rot.T
    reach = params.max_range + params.mount_forward + 1.0
    cxs, cys, rads, zlo, zhi = scene_cylinders(world, (float(origin[0]), float(origin[1])), reach)
    out = np.empty(dirs.shape[0])
    _cast_kernel(np.ascontiguousarray(dirs), float(origin[0]), float(origin[1]),
                 float(origin[2]), cxs, cys, rads, zlo, zhi,
                 params.max_range, params.render_ground, out)
    return out.reshape(params.height, params.width)


def ray_cylinder_distance(origin, direction, center, radius: float,
                          z_top: float, z_base: float = 0.0) -> Optional[float]:
    """Closed-form first intersection of a unit ray with a bounded vertical cylinder.

    Returns the smallest positive root of the infinite-cylinder quadratic
    whose hit height lies in [z_base, z_top], or None. Side surface only
    (no caps); a tangent (zero-discriminant) graze counts as a miss.
    """
    ox, oy, oz = float(origin[0]), float(origin[1]), float(origin[2])
    dx, dy, dz = float(direction[0]), float(direction[1]), float(direction[2])
    relx, rely = ox - float(center[0]), oy - float(center[1])
    a = dx * dx + dy * dy
    if a <= 1e-14:
        return None
    b = dx * relx + dy * rely
    c = relx * relx + rely * rely - radius * radius
    disc = b * b - a * c
    if disc <= 0.0:
        return None
    sq = math.sqrt(disc)
    for t in ((-b - sq) / a, (-b + sq) / a):
        if t > 0.0 and z_base <= oz + t * dz <= z_top:
            return t
    return None


def ray_plant_distance(origin, direction, plant: PlantInstance) -> Optional[float]:
    """Nearest hit on a plant's trunk or canopy cylinder, if any."""
    hits = [
        ray_cylinder_distance(origin, direction, plant.position,
                              plant.trunk_radius, plant.height),
        ray_cylinder_distance(origin, direction, plant.position,
                              plant.canopy_half_width, plant.height,
                              z_base=plant.canopy_base),
    ]
    hits = [h for h in hits if h is not None]
    return min(hits) if hits else None


def apply_noise(img: np.ndarray, spec: NoiseSpec, rng: np.random.Generator,
                max_range: float = MAX_RANGE) -> np.ndarray:
    """Perturb a depth image: uniform term plus a term proportional to depth.

    d -> clamp(d + k*n1 + k*n2*(d/max_range), 0, max_range) with n1, n2 drawn
    independently per pixel from U(-amp, amp).
    """
    if spec.factor == 0.0:
        return img.copy()
    n1 = rng.uniform(-spec.uniform_amp, spec.uniform_amp, size=img.shape)
    n2 = rng.uniform(-spec.proportional_amp, spec.proportional_amp, size=img.shape)
    noisy = img + spec.factor * n1 + spec.factor * n2 * (img / max_range)
    return np.clip(noisy, 0.0, max_range)


def write_pgm16(img: np.ndarray, path: str, max_range: float = MAX_RANGE) -> None:
    """Debug dump: 16-bit portable greymap, depth quantized over [0, max_range]."""
    q = np.round(np.clip(img, 0.0, max_range) / max_range * 65535.0).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode("ascii"))
        f.write(q.tobytes())


def read_pgm16(path: str, max_range: float = MAX_RANGE) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise ValueError("not a binary PGM file")
        dims = f.readline().split()
        maxval = int(f.readline())
        if maxval != 65535:
            raise ValueError("expected 16-bit PGM")
        w, h = int(dims[0]), int(dims[1])
        q = np.frombuffer(f.read(w * h * 2), dtype=">u2").reshape(h, w)
    return q.astype(np.float64) / 65535.0 * max_range
