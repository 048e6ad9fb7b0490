"""Depth-map fusion into an implicit surface on an adaptive octree.

The package fuses range images into a truncated signed distance field by
minimizing a robust data plus total-variation energy. The iterate lives
on an octree that refines near the zero crossing and coarsens where the
field is flat; a dense-grid reference solver and mesh extraction are
included for validation.
"""

from ._backend import name as backend_name
from .fusion import (FusionParams, FuseResult, IterationStats, dense_energy,
                     dense_fuse, fuse, tree_energy)
from .mesh import TriMesh, marching_cubes, read_ply, vertex_diff, write_ply
from .octree import (OctreeField, build_octree, densify, quantization_error,
                     serialize)
from .synth import SphereScene, make_sphere_dataset, render_sphere_depth
from .tsdf import ViewTsdf, build_view_tsdf
from .volume import (Camera, RangeImage, VolumeDomain, load_dataset,
                     save_dataset)

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "FuseResult",
    "FusionParams",
    "IterationStats",
    "OctreeField",
    "RangeImage",
    "SphereScene",
    "TriMesh",
    "ViewTsdf",
    "VolumeDomain",
    "backend_name",
    "build_octree",
    "build_view_tsdf",
    "dense_energy",
    "dense_fuse",
    "densify",
    "fuse",
    "load_dataset",
    "make_sphere_dataset",
    "marching_cubes",
    "quantization_error",
    "read_ply",
    "render_sphere_depth",
    "save_dataset",
    "serialize",
    "tree_energy",
    "vertex_diff",
    "write_ply",
]
