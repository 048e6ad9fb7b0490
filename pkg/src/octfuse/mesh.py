"""Zero-isosurface extraction and mesh comparison.

The extractor walks all 2x2x2 voxel-center cubes of a dense scalar grid,
classifies each against the generated case tables, and emits one vertex per
crossed grid edge (shared between cubes, so the triangulation is indexed
and watertight wherever the surface closes inside the grid). A cube emits
geometry only when all eight of its corners are observed, which keeps
unobserved regions from growing fictitious surface.

Vertices interpolate the zero crossing linearly along their grid edge;
triangle normals point toward positive values, i.e. out of the solid.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from ._mctables import EDGE_AXIS, EDGE_CELL_OFFSET, TRI_COUNT, TRI_TABLE
from .volume import VolumeDomain

__all__ = [
    "TriMesh",
    "extract_zero_surface",
    "marching_cubes",
    "MeshDiff",
    "vertex_diff",
    "sphere_distances",
    "signed_volume",
    "write_ply",
    "read_ply",
]


@dataclass
class TriMesh:
    """Indexed triangle mesh, optionally with one scalar per vertex."""

    vertices: np.ndarray
    faces: np.ndarray
    quality: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int32).reshape(-1, 3)
        if self.quality is not None:
            self.quality = np.asarray(self.quality, dtype=np.float64).reshape(-1)
            if self.quality.shape[0] != self.vertices.shape[0]:
                raise ValueError("one quality value per vertex required")

    @property
    def vertex_count(self) -> int:
        return self.vertices.shape[0]

    @property
    def face_count(self) -> int:
        return self.faces.shape[0]


def extract_zero_surface(values: np.ndarray,
                         mask: np.ndarray | None = None):
    """Extract the zero level set in grid index coordinates.

    ``values`` is a cubic grid sampled at integer positions; a cube is
    skipped unless ``mask`` (when given) is true at all eight corners.
    Returns (vertices, faces) with vertices in index units.
    """
    v = np.ascontiguousarray(values, dtype=np.float64)
    n = v.shape[0]
    if v.ndim != 3 or v.shape != (n, n, n) or n < 2:
        raise ValueError("values must be a cubic grid with edge >= 2")
    if mask is not None and mask.shape != v.shape:
        raise ValueError("mask shape mismatch")

    inside = v < 0
    m = n - 1
    case = np.zeros((m, m, m), dtype=np.uint8)
    usable = np.ones((m, m, m), dtype=bool)
    for c in range(8):
        ox, oy, oz = (c >> 2) & 1, (c >> 1) & 1, c & 1
        sl = np.s_[ox:ox + m, oy:oy + m, oz:oz + m]
        case |= inside[sl].astype(np.uint8) << c
        if mask is not None:
            usable &= mask[sl]

    active = (TRI_COUNT[case] > 0) & usable
    bx, by, bz = np.nonzero(active)
    if bx.size == 0:
        return (np.zeros((0, 3), dtype=np.float64),
                np.zeros((0, 3), dtype=np.int32))

    cases = case[bx, by, bz]
    counts = TRI_COUNT[cases].astype(np.int64)
    rows = TRI_TABLE[cases]
    cols = np.arange(TRI_TABLE.shape[1], dtype=np.int64)
    sel = cols[None, :] < (3 * counts)[:, None]
    edges = rows[sel].astype(np.int64)
    cube = np.repeat(np.arange(bx.size, dtype=np.int64), 3 * counts)

    off = EDGE_CELL_OFFSET[edges]
    ex = bx[cube] + off[:, 0]
    ey = by[cube] + off[:, 1]
    ez = bz[cube] + off[:, 2]
    axis = EDGE_AXIS[edges]
    key = ((axis * n + ex) * n + ey) * n + ez

    ukey, inverse = np.unique(key, return_inverse=True)
    faces = inverse.reshape(-1, 3).astype(np.int32)

    uz = ukey % n
    uy = (ukey // n) % n
    ux = (ukey // (n * n)) % n
    uax = ukey // (n * n * n)
    v0 = v[ux, uy, uz]
    v1 = v[ux + (uax == 0), uy + (uax == 1), uz + (uax == 2)]
    t = v0 / (v0 - v1)
    verts = np.column_stack([ux + t * (uax == 0),
                             uy + t * (uax == 1),
                             uz + t * (uax == 2)])
    return verts, faces


def marching_cubes(values: np.ndarray, seen: np.ndarray | None,
                   dom: VolumeDomain) -> TriMesh:
    """Extract the implicit surface in world coordinates.

    Grid samples live at voxel centers, so index position i maps to
    origin + (i + 1/2) * voxel_size.
    """
    if values.shape != (dom.resolution,) * 3:
        raise ValueError("grid does not match the domain resolution")
    verts, faces = extract_zero_surface(values, seen)
    world = np.asarray(dom.origin) + (verts + 0.5) * dom.voxel_size
    return TriMesh(world, faces)


# -- comparison -------------------------------------------------------------

@dataclass
class MeshDiff:
    """Symmetric nearest-vertex distance statistics between two meshes."""

    d_ab: np.ndarray
    d_ba: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.concatenate([self.d_ab, self.d_ba]).mean())

    @property
    def std(self) -> float:
        return float(np.concatenate([self.d_ab, self.d_ba]).std())

    @property
    def max(self) -> float:
        return float(np.concatenate([self.d_ab, self.d_ba]).max())


def vertex_diff(a: TriMesh, b: TriMesh) -> MeshDiff:
    if a.vertex_count == 0 or b.vertex_count == 0:
        raise ValueError("cannot compare empty meshes")
    d_ab = cKDTree(b.vertices).query(a.vertices)[0]
    d_ba = cKDTree(a.vertices).query(b.vertices)[0]
    return MeshDiff(d_ab=d_ab, d_ba=d_ba)


def sphere_distances(mesh: TriMesh, center, radius: float) -> np.ndarray:
    """Per-vertex absolute distance to an analytic sphere surface."""
    if mesh.vertex_count == 0:
        raise ValueError("mesh has no vertices")
    r = np.linalg.norm(mesh.vertices - np.asarray(center, dtype=np.float64),
                       axis=1)
    return np.abs(r - radius)


def signed_volume(mesh: TriMesh) -> float:
    """Divergence-theorem volume; positive for outward-oriented closed meshes."""
    a = mesh.vertices[mesh.faces[:, 0]]
    b = mesh.vertices[mesh.faces[:, 1]]
    c = mesh.vertices[mesh.faces[:, 2]]
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


# -- PLY input/output -------------------------------------------------------

def write_ply(path, mesh: TriMesh) -> None:
    """ASCII PLY with double vertex properties and an optional per-vertex
    quality channel."""
    with open(path, "w") as fp:
        fp.write("ply\nformat ascii 1.0\n")
        fp.write(f"element vertex {mesh.vertex_count}\n")
        fp.write("property double x\nproperty double y\nproperty double z\n")
        if mesh.quality is not None:
            fp.write("property double quality\n")
        fp.write(f"element face {mesh.face_count}\n")
        fp.write("property list uchar int vertex_indices\n")
        fp.write("end_header\n")
        if mesh.quality is None:
            for x, y, z in mesh.vertices:
                fp.write(f"{x:.17g} {y:.17g} {z:.17g}\n")
        else:
            for (x, y, z), q in zip(mesh.vertices, mesh.quality):
                fp.write(f"{x:.17g} {y:.17g} {z:.17g} {q:.17g}\n")
        for i, j, k in mesh.faces:
            fp.write(f"3 {i} {j} {k}\n")


def read_ply(path) -> TriMesh:
    """Read the ASCII PLY subset produced by :func:`write_ply`."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    nvert = nface = 0
    vprops: list[str] = []
    i = 1
    element = None
    while i < len(lines):
        parts = lines[i].split()
        i += 1
        if not parts:
            continue
        if parts[0] == "format":
            if parts[1] != "ascii":
                raise ValueError(f"{path}: only ascii PLY is supported")
        elif parts[0] == "element":
            element = parts[1]
            if element == "vertex":
                nvert = int(parts[2])
            elif element == "face":
                nface = int(parts[2])
        elif parts[0] == "property" and element == "vertex":
            if parts[1] == "list":
                raise ValueError(f"{path}: list vertex properties unsupported")
            vprops.append(parts[2])
        elif parts[0] == "end_header":
            break
    else:
        raise ValueError(f"{path}: missing end_header")
    for name in ("x", "y", "z"):
        if name not in vprops:
            raise ValueError(f"{path}: vertex property {name} missing")
    body = lines[i:]
    if len(body) < nvert + nface:
        raise ValueError(f"{path}: truncated body")
    vdata = np.array([[float(t) for t in body[k].split()]
                      for k in range(nvert)], dtype=np.float64)
    vdata = vdata.reshape(nvert, len(vprops)) if nvert else vdata.reshape(0, len(vprops))
    cols = {name: vdata[:, k] for k, name in enumerate(vprops)}
    verts = np.column_stack([cols["x"], cols["y"], cols["z"]])
    quality = cols.get("quality")
    faces = np.zeros((nface, 3), dtype=np.int32)
    for k in range(nface):
        parts = body[nvert + k].split()
        if int(parts[0]) != 3:
            raise ValueError(f"{path}: only triangle faces are supported")
        faces[k] = [int(parts[1]), int(parts[2]), int(parts[3])]
    return TriMesh(verts, faces, quality)
