"""Per-view truncated signed distance fields and binary observation weights.

For a world point x seen by camera i, the raw signed distance is the
line-of-sight difference between the measured surface distance and the
point's own distance from the projection center:

    phi(x) = D(pixel(x)) * ray_norm(pixel) - |x - C|

where D stores z-depth and ray_norm converts it to Euclidean distance along
the pixel ray. phi is truncated to [-1, +1] in units of the band half-width
delta. A voxel carries weight 1 when it was observed no deeper than eta
behind the measured surface, and 0 otherwise; unobserved voxels are stored
as -1 (assumed solid) so the weight field alone gates the data term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .volume import Camera, RangeImage, VolumeDomain, project

__all__ = [
    "ViewTsdf",
    "signed_distance",
    "truncate",
    "visibility_weight",
    "build_view_tsdf",
]


@dataclass
class ViewTsdf:
    """Dense truncated signed distance field and weight grid of one view."""

    f: np.ndarray        # (N, N, N) float32 in [-1, +1]
    w: np.ndarray        # (N, N, N) uint8 in {0, 1}
    delta: float         # truncation band half-width, meters
    eta: float           # visibility cut behind the surface, meters

    @property
    def nbytes_per_voxel(self) -> int:
        return self.f.itemsize + self.w.itemsize


def signed_distance(x, img: RangeImage, cam: Camera):
    """Line-of-sight signed distance of a world point, or None if unobserved.

    Positive in front of the measured surface, negative behind it.
    """
    uv = project(x, cam)
    if uv is None:
        return None
    pu = min(int(math.floor(uv[0] + 0.5)), cam.width - 1)
    pv = min(int(math.floor(uv[1] + 0.5)), cam.height - 1)
    z = float(img.depth[pv, pu])
    if z <= 0:
        return None
    du = (pu - cam.cx) / cam.fx
    dv = (pv - cam.cy) / cam.fy
    surface_dist = z * math.sqrt(1.0 + du * du + dv * dv)
    return surface_dist - float(np.linalg.norm(np.asarray(x, float) - cam.center))


def truncate(phi: float, delta: float) -> float:
    """Scale by the band half-width and clamp to [-1, +1]."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if phi > delta:
        return 1.0
    if phi < -delta:
        return -1.0
    return phi / delta


def visibility_weight(phi, eta: float) -> int:
    """1 for observed voxels down to eta behind the surface, else 0."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    if phi is None or phi < -eta:
        return 0
    return 1


def build_view_tsdf(img: RangeImage, cam: Camera, dom: VolumeDomain,
                    delta: float, eta: float) -> ViewTsdf:
    """Evaluate the truncated distance and weight at every voxel center."""
    if delta <= 0 or eta <= 0:
        raise ValueError("delta and eta must be positive")
    n = dom.resolution
    xs = dom.axis_centers(0)[:, None, None] - cam.translation[0]
    ys = dom.axis_centers(1)[None, :, None] - cam.translation[1]
    zs = dom.axis_centers(2)[None, None, :] - cam.translation[2]
    r = cam.rotation
    # camera coordinates of all voxel centers (columns of R are camera axes)
    xc = xs * r[0, 0] + ys * r[1, 0] + zs * r[2, 0]
    yc = xs * r[0, 1] + ys * r[1, 1] + zs * r[2, 1]
    zc = xs * r[0, 2] + ys * r[1, 2] + zs * r[2, 2]

    in_front = zc > 0
    zc_safe = np.where(in_front, zc, 1.0)
    u = cam.fx * xc / zc_safe + cam.cx
    v = cam.fy * yc / zc_safe + cam.cy
    in_image = in_front & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)

    pu = np.clip(np.floor(u + 0.5), 0, cam.width - 1).astype(np.intp)
    pv = np.clip(np.floor(v + 0.5), 0, cam.height - 1).astype(np.intp)
    depth = img.depth[pv, pu].astype(np.float64)
    observed = in_image & (depth > 0)

    norms = cam.pixel_ray_norms()[pv, pu]
    dist = np.sqrt(xc * xc + yc * yc + zc * zc)
    phi = depth * norms - dist

    f = np.clip(phi / delta, -1.0, 1.0)
    w = observed & (phi >= -eta)
    f = np.where(w, f, -1.0).astype(np.float32)
    return ViewTsdf(f=f, w=w.astype(np.uint8), delta=float(delta), eta=float(eta))
