"""Reconstruction-volume geometry, pinhole cameras, range images, dataset I/O.

World coordinates are metric (meters). The reconstruction volume is an
axis-aligned cube of ``resolution`` voxels per axis; grid samples live at
voxel centers. Depth images store the camera-frame z coordinate of the
surface point seen through each pixel, with 0 marking invalid samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "VolumeDomain",
    "Camera",
    "RangeImage",
    "project",
    "backproject",
    "voxel_center",
    "look_at",
    "read_pfm",
    "write_pfm",
    "save_dataset",
    "load_dataset",
    "save_ground_truth",
    "load_ground_truth",
]


@dataclass(frozen=True)
class VolumeDomain:
    """Axis-aligned cubic reconstruction volume.

    ``origin`` is the minimum corner, ``voxel_size`` the metric edge length of
    one voxel and ``resolution`` the voxel count per axis (a power of two).
    """

    origin: tuple[float, float, float]
    voxel_size: float
    resolution: int

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        n = self.resolution
        if n < 1 or (n & (n - 1)) != 0:
            raise ValueError(f"resolution must be a power of two, got {n}")
        object.__setattr__(self, "origin", tuple(float(c) for c in self.origin))

    @property
    def depth(self) -> int:
        """Octree depth whose finest level matches the voxel grid."""
        return self.resolution.bit_length() - 1

    @property
    def extent(self) -> float:
        return self.resolution * self.voxel_size

    def axis_centers(self, axis: int) -> np.ndarray:
        o = self.origin[axis]
        return o + (np.arange(self.resolution) + 0.5) * self.voxel_size

    def world_to_index(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.floor((x - np.asarray(self.origin)) / self.voxel_size).astype(np.int64)


def voxel_center(idx, dom: VolumeDomain) -> np.ndarray:
    """World position of the center of voxel ``idx`` (integer triple)."""
    idx = np.asarray(idx)
    if np.any(idx < 0) or np.any(idx >= dom.resolution):
        raise ValueError(f"voxel index {idx!r} outside [0, {dom.resolution})")
    return np.asarray(dom.origin) + (idx + 0.5) * dom.voxel_size


class Camera:
    """Pinhole camera with a rigid camera-to-world pose.

    :param fx, fy: focal lengths in pixels.
    :param cx, cy: principal point in pixels.
    :param width, height: image size in pixels.
    :param rotation: 3x3 camera-to-world rotation.
    :param translation: camera center in world coordinates.
    """

    def __init__(self, fx, fy, cx, cy, width, height, rotation, translation):
        self.fx = float(fx)
        self.fy = float(fy)
        self.cx = float(cx)
        self.cy = float(cy)
        self.width = int(width)
        self.height = int(height)
        self.rotation = np.asarray(rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(translation, dtype=np.float64).reshape(3)
        r = self.rotation
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9):
            raise ValueError("camera rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("camera rotation must have determinant +1")

    @property
    def center(self) -> np.ndarray:
        """Projection center in world coordinates."""
        return self.translation

    def pose_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def world_to_cam(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (x - self.translation) @ self.rotation

    def pixel_ray_norms(self) -> np.ndarray:
        """Per-pixel length of the ray direction ((u-cx)/fx, (v-cy)/fy, 1).

        Multiplying a z-depth by this factor yields the Euclidean distance
        from the camera center to the surface point behind that pixel.
        """
        u = (np.arange(self.width) - self.cx) / self.fx
        v = (np.arange(self.height) - self.cy) / self.fy
        return np.sqrt(1.0 + u[None, :] ** 2 + v[:, None] ** 2)


def project(x, cam: Camera):
    """Project a world point into continuous pixel coordinates.

    Returns ``(u, v)`` or ``None`` when the point lies behind the camera or
    outside the image.
    """
    xc = cam.world_to_cam(x)
    z = xc[2]
    if z <= 0:
        return None
    u = cam.fx * xc[0] / z + cam.cx
    v = cam.fy * xc[1] / z + cam.cy
    if u < 0 or u >= cam.width or v < 0 or v >= cam.height:
        return None
    return (u, v)


def backproject(u, v, z, cam: Camera) -> np.ndarray:
    """World point at z-depth ``z`` behind pixel ``(u, v)``."""
    d = np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])
    return cam.translation + cam.rotation @ (d * z)


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world rotation looking from ``position`` toward ``target``.

    The camera z axis points at the target; the image y axis is aligned
    against ``up`` as far as possible. Falls back to the x axis when the
    viewing direction is parallel to ``up``.
    """
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward = forward / np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    if abs(float(np.dot(forward, up)) / np.linalg.norm(up)) > 0.999:
        up = np.array([1.0, 0.0, 0.0])
    right = np.cross(forward, up)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.column_stack([right, down, forward])


class RangeImage:
    """A single depth frame; z-depth in meters, 0 marks invalid pixels."""

    def __init__(self, depth):
        d = np.asarray(depth, dtype=np.float32)
        if d.ndim != 2:
            raise ValueError("depth must be a 2-D array")
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise ValueError("depths must be finite and non-negative")
        self.depth = d

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    def valid_mask(self) -> np.ndarray:
        return self.depth > 0


# --- portable float map (PFM), little-endian single channel ---------------

def write_pfm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 2:
        raise ValueError("only single-channel images are supported")
    h, w = image.shape
    with open(path, "wb") as fp:
        fp.write(b"Pf\n")
        fp.write(f"{w} {h}\n".encode("ascii"))
        fp.write(b"-1.0\n")
        # scanlines run bottom to top
        fp.write(np.ascontiguousarray(image[::-1]).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fp:
        if fp.readline().strip() != b"Pf":
            raise ValueError(f"{path}: not a single-channel PFM file")
        w, h = (int(t) for t in fp.readline().split())
        scale = float(fp.readline())
        data = np.frombuffer(fp.read(4 * w * h), dtype="<f4" if scale < 0 else ">f4")
        if data.size != w * h:
            raise ValueError(f"{path}: truncated PFM payload")
    return data.reshape(h, w)[::-1].copy()


# --- dataset directory layout ---------------------------------------------

def save_dataset(out_dir, dom: VolumeDomain, cameras, images) -> None:
    """Write a fusion dataset: intrinsics, per-frame depth + pose, domain.

    All cameras must share intrinsics and image size; the layout stores them
    once.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if len(cameras) != len(images):
        raise ValueError("camera/image count mismatch")
    c0 = cameras[0]
    for c in cameras:
        same = (c.fx == c0.fx and c.fy == c0.fy and c.cx == c0.cx
                and c.cy == c0.cy and c.width == c0.width and c.height == c0.height)
        if not same:
            raise ValueError("all cameras must share intrinsics")
    with open(out / "intrinsics.txt", "w") as fp:
        fp.write(f"{c0.fx:.17g} {c0.fy:.17g} {c0.cx:.17g} {c0.cy:.17g} "
                 f"{c0.width} {c0.height}\n")
    ox, oy, oz = dom.origin
    with open(out / "domain.txt", "w") as fp:
        fp.write(f"{ox:.17g} {oy:.17g} {oz:.17g} {dom.voxel_size:.17g} "
                 f"{dom.resolution}\n")
    for i, (cam, img) in enumerate(zip(cameras, images)):
        write_pfm(out / f"frame_{i:04d}.pfm", img.depth)
        with open(out / f"frame_{i:04d}.pose.txt", "w") as fp:
            for row in cam.pose_matrix():
                fp.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_dataset(data_dir):
    """Read a dataset directory back into (domain, cameras, images)."""
    root = Path(data_dir)
    intr = root / "intrinsics.txt"
    if not intr.is_file():
        raise FileNotFoundError(f"{intr}: no intrinsics found")
    fx, fy, cx, cy, w, h = (float(t) for t in intr.read_text().split())
    ox, oy, oz, sv, n = (float(t) for t in (root / "domain.txt").read_text().split())
    dom = VolumeDomain((ox, oy, oz), sv, int(n))
    cameras, images = [], []
    for pfm_path in sorted(root.glob("frame_????.pfm")):
        pose_path = pfm_path.with_suffix("").with_suffix(".pose.txt")
        if not pose_path.is_file():
            raise FileNotFoundError(f"{pose_path}: missing pose for {pfm_path.name}")
        m = np.array([float(t) for t in pose_path.read_text().split()]).reshape(4, 4)
        if not np.allclose(m[3], [0, 0, 0, 1], atol=1e-12):
            raise ValueError(f"{pose_path}: bottom row must be 0 0 0 1")
        cameras.append(Camera(fx, fy, cx, cy, int(w), int(h), m[:3, :3], m[:3, 3]))
        images.append(RangeImage(read_pfm(pfm_path)))
    if not cameras:
        raise FileNotFoundError(f"{root}: no frames found")
    return dom, cameras, images


def save_ground_truth(path, center, radius: float) -> None:
    cx, cy, cz = (float(c) for c in center)
    with open(path, "w") as fp:
        fp.write(f"{cx:.17g} {cy:.17g} {cz:.17g} {float(radius):.17g}\n")


def load_ground_truth(path):
    cx, cy, cz, r = (float(t) for t in Path(path).read_text().split())
    return np.array([cx, cy, cz]), r
