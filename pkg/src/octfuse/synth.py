"""Synthetic depth datasets with exact geometry.

Renders z-depth maps of a sphere sitting inside the reconstruction volume,
seen from cameras on a surrounding orbit. A large enclosing background
sphere gives every pixel a finite depth, so all empty space inside the
volume is genuinely observed as empty; the only unobservable region is the
interior of the target sphere. Camera focal lengths are chosen so the whole
volume lies inside every frustum.

Depths are exact ray/sphere intersections, so meshes reconstructed from
these datasets can be judged against the analytic surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .volume import (Camera, RangeImage, VolumeDomain, look_at,
                     save_dataset, save_ground_truth)

__all__ = [
    "SphereScene",
    "fibonacci_directions",
    "render_sphere_depth",
    "orbit_camera",
    "coverage_focal",
    "make_sphere_dataset",
]


@dataclass(frozen=True)
class SphereScene:
    """A target sphere enclosed by a distant background sphere.

    The background must enclose every camera; a non-positive
    ``background_radius`` disables it, leaving miss rays at depth 0.
    """

    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 0.06
    background_radius: float = 0.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")
        if 0 < self.background_radius <= self.radius:
            raise ValueError("background must enclose the target sphere")


def fibonacci_directions(n: int) -> np.ndarray:
    """``n`` roughly uniform unit vectors (golden-angle spiral on the sphere)."""
    if n < 1:
        raise ValueError("need at least one direction")
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - 2.0 * (i + 0.5) / n
    rho = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = i * math.pi * (3.0 - math.sqrt(5.0))
    return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])


def _sphere_roots(o, d, center, radius):
    """Ray/sphere intersection parameters for rays x = o + t d (t in units
    of |d|). Returns (hit mask, near t, far t)."""
    oc = o - np.asarray(center, dtype=np.float64)
    a = np.sum(d * d, axis=-1)
    b = 2.0 * np.sum(d * oc, axis=-1)
    c = float(np.dot(oc, oc)) - radius * radius
    disc = b * b - 4.0 * a * c
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    near = (-b - sq) / (2.0 * a)
    far = (-b + sq) / (2.0 * a)
    return hit, near, far


def render_sphere_depth(cam: Camera, scene: SphereScene) -> RangeImage:
    """Exact z-depth of the scene as seen by ``cam``.

    Depth is the camera-frame z of the first surface along each pixel ray;
    rays that miss everything get 0.
    """
    center = np.asarray(scene.center, dtype=np.float64)
    if float(np.linalg.norm(cam.center - center)) <= scene.radius:
        raise ValueError("camera lies inside the target sphere")
    u = (np.arange(cam.width, dtype=np.float64) - cam.cx) / cam.fx
    v = (np.arange(cam.height, dtype=np.float64) - cam.cy) / cam.fy
    d_cam = np.empty((cam.height, cam.width, 3), dtype=np.float64)
    d_cam[..., 0] = u[None, :]
    d_cam[..., 1] = v[:, None]
    d_cam[..., 2] = 1.0
    # z-depth equals the ray parameter because the camera-frame direction
    # has unit z component
    d = d_cam @ cam.rotation.T
    o = cam.center

    hit, near, _ = _sphere_roots(o, d, center, scene.radius)
    depth = np.where(hit & (near > 0.0), near, 0.0)

    if scene.background_radius > 0:
        if float(np.linalg.norm(cam.center - center)) >= scene.background_radius:
            raise ValueError("camera lies outside the background sphere")
        bhit, _, bfar = _sphere_roots(o, d, center, scene.background_radius)
        background = np.where(bhit & (bfar > 0.0), bfar, 0.0)
        depth = np.where(depth > 0.0, depth, background)
    return RangeImage(depth.astype(np.float32))


def coverage_focal(half_pixels: float, target_distance: float,
                   cover_radius: float, margin: float = 1.05) -> float:
    """Focal length putting a ball of ``cover_radius`` around the view
    target inside the image half-width, with an angular safety margin."""
    if cover_radius >= target_distance:
        raise ValueError("camera orbit must stay outside the covered ball")
    ang = margin * math.asin(cover_radius / target_distance)
    if ang >= math.pi / 2:
        raise ValueError("cannot cover the volume: camera too close")
    return half_pixels / math.tan(ang)


def orbit_camera(direction, target, orbit: float, fx: float, fy: float,
                 width: int, height: int) -> Camera:
    """Camera at ``target + orbit * direction`` looking at ``target``."""
    direction = np.asarray(direction, dtype=np.float64)
    direction = direction / np.linalg.norm(direction)
    position = np.asarray(target, dtype=np.float64) + orbit * direction
    rot = look_at(position, target)
    return Camera(fx, fy, (width - 1) / 2.0, (height - 1) / 2.0,
                  width, height, rot, position)


def make_sphere_dataset(out_dir, *, n_views: int = 31,
                        width: int = 320, height: int = 320,
                        orbit: float = 0.4,
                        radius: float = 0.06,
                        resolution: int = 128,
                        voxel_size: float = 0.002,
                        background_radius: float = 1.2,
                        margin: float = 1.05):
    """Generate and save a complete sphere dataset.

    The domain is centered on the sphere. Writes depth frames, poses,
    shared intrinsics, the domain description and the analytic ground
    truth; returns (domain, cameras, images, scene).
    """
    half = resolution * voxel_size / 2.0
    # clearance for the default truncation plus visibility bands (24 mm)
    if radius + 0.024 > half:
        raise ValueError("sphere too large for the domain")
    center = (0.0, 0.0, 0.0)
    dom = VolumeDomain((-half, -half, -half), voxel_size, resolution)
    scene = SphereScene(center=center, radius=radius,
                        background_radius=background_radius)

    cover = half * math.sqrt(3.0)
    fx = coverage_focal(min(width, height) / 2.0 - 1.0, orbit, cover, margin)
    if background_radius > 0 and orbit >= background_radius:
        raise ValueError("orbit must stay inside the background sphere")

    cameras = []
    images = []
    corners = np.array([[dom.origin[0] + sx * dom.extent,
                         dom.origin[1] + sy * dom.extent,
                         dom.origin[2] + sz * dom.extent]
                        for sx in (0, 1) for sy in (0, 1) for sz in (0, 1)])
    for direction in fibonacci_directions(n_views):
        cam = orbit_camera(direction, center, orbit, fx, fx, width, height)
        for corner in corners:
            xc = cam.world_to_cam(corner)
            if xc[2] <= 0:
                raise RuntimeError("volume corner behind a camera")
            uu = cam.fx * xc[0] / xc[2] + cam.cx
            vv = cam.fy * xc[1] / xc[2] + cam.cy
            if not (0 <= uu < cam.width and 0 <= vv < cam.height):
                raise RuntimeError("volume corner outside a frustum")
        cameras.append(cam)
        images.append(render_sphere_depth(cam, scene))

    out = Path(out_dir)
    save_dataset(out, dom, cameras, images)
    save_ground_truth(out / "ground_truth.txt", center, radius)
    return dom, cameras, images, scene
