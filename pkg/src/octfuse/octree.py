"""Hierarchical scalar fields stored as pooled octrees.

A field over the reconstruction volume is represented by a complete-children
octree: every node has either no children or exactly eight, and the leaves
tile the volume. Nodes live in flat arrays indexed by integer links, with
children of one parent stored as a contiguous block of eight; freed blocks
are recycled through a free list so restructuring never fragments the pool.

Construction from a dense grid follows the spread rule: a node is subdivided
while the range |max - min| of the dense values inside its subvolume exceeds
a threshold tau (or, when a weight grid is attached, while the weight is not
constant inside it). Leaf values are subvolume means, and inner nodes carry
the mean of their children, so querying any level returns a consistent
averaged view of the field.
"""

from __future__ import annotations

import math
from typing import IO, Iterator

import numpy as np

from . import _backend

__all__ = [
    "OctreeField",
    "full_tree_capacity",
    "spread",
    "build_octree",
    "mean_pyramid",
    "reduce_pyramid",
    "flatten_pyramid",
    "propagate_means",
    "lookup_at_level",
    "densify",
    "split_node",
    "join_node",
    "quantization_error",
    "serialize",
]


def full_tree_capacity(d_max: int) -> int:
    """Node count of a complete octree of depth ``d_max``."""
    return (8 ** (d_max + 1) - 1) // 7


class OctreeField:
    """Pooled octree holding one scalar per node, optionally with weights.

    Arrays:
      value   per-node scalar (float32 or float64)
      weight  optional accumulated view weight (float32)
      child   index of the first of eight contiguous children, -1 for a leaf
      state   int64 triple [pool slots in use, free-list head, live nodes]

    ``snap`` (the pre-restructuring value snapshot) and ``joined`` (in-pass
    coarsening marks) are solver scratch, allocated on demand.
    """

    __slots__ = ("value", "weight", "child", "state", "d_max", "snap", "joined")

    def __init__(self, value, child, state, d_max, weight=None):
        self.value = value
        self.weight = weight
        self.child = child
        self.state = state
        self.d_max = int(d_max)
        self.snap = None
        self.joined = None

    # -- bookkeeping -------------------------------------------------------

    @property
    def capacity(self) -> int:
        return self.value.shape[0]

    @property
    def used(self) -> int:
        return int(self.state[0])

    @property
    def node_count(self) -> int:
        return int(self.state[2])

    @property
    def resolution(self) -> int:
        return 1 << self.d_max

    @property
    def nbytes_per_node(self) -> int:
        n = self.value.itemsize + self.child.itemsize
        if self.weight is not None:
            n += self.weight.itemsize
        if self.snap is not None:
            n += self.snap.itemsize
        return n

    @property
    def nbytes(self) -> int:
        return self.node_count * self.nbytes_per_node

    def ensure_capacity(self, needed: int) -> None:
        if needed <= self.capacity:
            return
        cap = max(needed, 2 * self.capacity)
        self.value = _grown(self.value, cap)
        self.child = _grown(self.child, cap, fill=-1)
        if self.weight is not None:
            self.weight = _grown(self.weight, cap)
        if self.snap is not None:
            self.snap = _grown(self.snap, cap)
        if self.joined is not None:
            self.joined = _grown(self.joined, cap)

    def ensure_scratch(self) -> None:
        """Allocate the snapshot and join-mark arrays used by solver passes."""
        if self.snap is None:
            snap = np.zeros(self.capacity, dtype=np.float64)
            snap[:self.used] = self.value[:self.used]
            self.snap = snap
        if self.joined is None:
            self.joined = np.zeros(self.capacity, dtype=np.uint8)

    def alloc_block(self) -> int:
        """Claim a block of eight child slots, recycling freed blocks first."""
        free = int(self.state[1])
        if free >= 0:
            self.state[1] = self.child[free]
            b = free
        else:
            b = int(self.state[0])
            self.ensure_capacity(b + 8)
            self.state[0] = b + 8
        self.child[b:b + 8] = -1
        self.state[2] += 8
        return b

    def free_block(self, b: int) -> None:
        self.child[b:b + 8] = -1
        self.child[b] = self.state[1]
        self.state[1] = b
        self.state[2] -= 8

    # -- traversal ---------------------------------------------------------

    def locate(self, level: int, cell) -> tuple[int, int]:
        """Deepest node on the path to ``cell`` at ``level``.

        Returns (node index, node level); the node level is smaller than the
        requested one when a leaf subsumes the cell.
        """
        x, y, z = (int(c) for c in cell)
        if not 0 <= level <= self.d_max:
            raise ValueError(f"level {level} outside [0, {self.d_max}]")
        m = 1 << level
        if not (0 <= x < m and 0 <= y < m and 0 <= z < m):
            raise ValueError(f"cell {cell!r} invalid at level {level}")
        node, lvl = 0, 0
        while lvl < level and self.child[node] >= 0:
            s = level - lvl - 1
            sel = (((x >> s) & 1) << 2) | (((y >> s) & 1) << 1) | ((z >> s) & 1)
            node = int(self.child[node]) + sel
            lvl += 1
        return node, lvl

    def leaves(self) -> Iterator[tuple[int, int, int, int, int]]:
        """Yield (node, level, x, y, z) for every leaf, in traversal order."""
        stack = [(0, 0, 0, 0, 0)]
        while stack:
            node, lvl, x, y, z = stack.pop()
            b = int(self.child[node])
            if b < 0:
                yield node, lvl, x, y, z
            else:
                for c in range(7, -1, -1):
                    stack.append((b + c, lvl + 1,
                                  x * 2 + ((c >> 2) & 1),
                                  y * 2 + ((c >> 1) & 1),
                                  z * 2 + (c & 1)))


def _grown(arr, cap, fill=0):
    out = np.empty(cap, dtype=arr.dtype)
    out[:arr.shape[0]] = arr
    out[arr.shape[0]:] = fill
    return out


# -- pyramids --------------------------------------------------------------

def reduce_pyramid(grid: np.ndarray, op: str) -> list[np.ndarray]:
    """Per-level 2x2x2 reductions of a cubic grid, index 0 being the root.

    ``op`` is "mean", "min" or "max". The mean pyramid is the single source
    of subvolume means everywhere in this package, which is what makes
    construction-time quantization errors vanish identically.
    """
    g = np.asarray(grid)
    if op == "mean":
        g = g.astype(np.float64)
    levels = [g]
    while levels[-1].shape[0] > 1:
        a = levels[-1]
        h = a.shape[0] // 2
        blocks = a.reshape(h, 2, h, 2, h, 2)
        levels.append(getattr(blocks, op)(axis=(1, 3, 5)))
    levels.reverse()
    return levels


def mean_pyramid(grid: np.ndarray) -> list[np.ndarray]:
    return reduce_pyramid(grid, "mean")


def flatten_pyramid(levels: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate pyramid levels; returns (flat array, level offsets)."""
    offsets = np.zeros(len(levels), dtype=np.int64)
    total = 0
    for i, lvl in enumerate(levels):
        offsets[i] = total
        total += lvl.size
    flat = np.concatenate([lvl.ravel() for lvl in levels])
    return flat, offsets


# -- construction ----------------------------------------------------------

def spread(field: np.ndarray, level: int, cell) -> float:
    """|max - min| of the dense values inside one cell at ``level``."""
    n = field.shape[0]
    d_max = n.bit_length() - 1
    s = d_max - level
    if s < 0:
        raise ValueError("level finer than the grid")
    x, y, z = (int(c) << s for c in cell)
    w = 1 << s
    sub = field[x:x + w, y:y + w, z:z + w]
    return float(sub.max() - sub.min())


def build_octree(f: np.ndarray, w: np.ndarray | None = None, tau: float = 0.1,
                 dtype=np.float64) -> OctreeField:
    """Octree-ify a dense scalar grid by the spread rule.

    A node splits while the value spread inside it exceeds ``tau`` or, when a
    weight grid ``w`` is given, while the weight is not constant inside it.
    Leaf values are subvolume means; inner nodes hold the mean of their
    children. Pass ``tau=0`` to refine everywhere the field is non-constant
    and a negative ``tau`` to refine every block down to single cells.

    With a weight grid the stored means are weight-weighted: a node's value
    is sum(w*f)/sum(w) over its subvolume (plain mean where no weight).
    Plain means would blend the padding stored in unobserved cells into
    every partially observed block, and the solver reads those block values
    whenever its own tree is coarser than a view tree.
    """
    f = np.asarray(f)
    n = f.shape[0]
    if f.ndim != 3 or f.shape != (n, n, n) or (n & (n - 1)) != 0:
        raise ValueError("field must be cubic with a power-of-two resolution")
    d_max = n.bit_length() - 1

    minf, offs = flatten_pyramid(reduce_pyramid(f.astype(np.float64), "min"))
    maxf, _ = flatten_pyramid(reduce_pyramid(f.astype(np.float64), "max"))
    has_w = w is not None
    if has_w:
        w = np.asarray(w)
        if w.shape != f.shape:
            raise ValueError("weight grid shape mismatch")
        wminf, _ = flatten_pyramid(reduce_pyramid(w.astype(np.uint8), "min"))
        wmaxf, _ = flatten_pyramid(reduce_pyramid(w.astype(np.uint8), "max"))
        wmean_lvls = mean_pyramid(w.astype(np.float64))
        wf_lvls = mean_pyramid(f.astype(np.float64) * w)
        plain_lvls = mean_pyramid(f)
        value_lvls = [np.where(wm > 0, wf / np.where(wm > 0, wm, 1.0), pl)
                      for wm, wf, pl in zip(wmean_lvls, wf_lvls, plain_lvls)]
        meanf, _ = flatten_pyramid(value_lvls)
        wmeanf, _ = flatten_pyramid(wmean_lvls)
    else:
        meanf, _ = flatten_pyramid(mean_pyramid(f))
        wminf = wmaxf = np.zeros(0, dtype=np.uint8)
        wmeanf = np.zeros(0, dtype=np.float64)

    cap = full_tree_capacity(d_max)
    value = np.zeros(cap, dtype=dtype)
    weight = np.zeros(cap, dtype=np.float32) if has_w else None
    child = np.full(cap, -1, dtype=np.int32)
    state = np.array([1, -1, 1], dtype=np.int64)

    kern = _backend.get()
    kern.build_tree(meanf, minf, maxf, offs, has_w, wminf, wmaxf, wmeanf,
                    float(tau), value,
                    weight if has_w else np.zeros(0, dtype=np.float32),
                    child, state, d_max)

    used = int(state[0])
    field = OctreeField(value[:used].copy(), child[:used].copy(),
                        state.copy(), d_max,
                        weight=weight[:used].copy() if has_w else None)
    # weighted trees keep their pyramid values; a plain child-mean pass
    # would reintroduce the padding bias at inner nodes
    if not has_w:
        propagate_means(field)
    return field


def propagate_means(field: OctreeField) -> OctreeField:
    """Recompute every inner value (and weight) as the mean of its children."""
    kern = _backend.get()
    kern.propagate(field.value, field.child)
    if field.weight is not None:
        kern.propagate(field.weight, field.child)
    return field


def lookup_at_level(field: OctreeField, cell, level: int, *,
                    snap: bool = False) -> float:
    """Field value for ``cell`` at ``level``; the subsuming leaf answers when
    the tree is coarser there, the propagated mean when it is finer."""
    node, _ = field.locate(level, cell)
    arr = field.snap if snap else field.value
    return float(arr[node])


def densify(field: OctreeField, *, snap: bool = False) -> np.ndarray:
    """Expand the tree to its dense finest-level grid (float64)."""
    n = field.resolution
    out = np.empty((n, n, n), dtype=np.float64)
    arr = field.snap if snap else field.value
    _backend.get().densify(arr, field.child, field.d_max, out)
    return out


def densify_weight(field: OctreeField) -> np.ndarray:
    if field.weight is None:
        raise ValueError("field carries no weights")
    n = field.resolution
    out = np.empty((n, n, n), dtype=np.float64)
    _backend.get().densify(field.weight, field.child, field.d_max, out)
    return out


# -- restructuring primitives ---------------------------------------------

def split_node(field: OctreeField, level: int, cell) -> int:
    """Subdivide the leaf at (level, cell) into eight children.

    Children start with the parent's value; the parent's pre-split value is
    recorded in the snapshot array. Returns the first-child index.
    """
    node, lvl = field.locate(level, cell)
    if lvl != level or field.child[node] >= 0:
        raise ValueError(f"no leaf at level {level}, cell {tuple(cell)}")
    if level >= field.d_max:
        raise ValueError("cannot split a finest-level leaf")
    field.ensure_scratch()
    field.ensure_capacity(field.used + 8)
    field.snap[node] = field.value[node]
    b = field.alloc_block()
    field.value[b:b + 8] = field.value[node]
    field.snap[b:b + 8] = field.snap[node]
    if field.weight is not None:
        field.weight[b:b + 8] = field.weight[node]
    field.child[node] = b
    return b


def join_node(field: OctreeField, level: int, cell) -> None:
    """Collapse eight leaf children into their parent, storing their mean."""
    node, lvl = field.locate(level, cell)
    b = int(field.child[node])
    if lvl != level or b < 0:
        raise ValueError(f"no inner node at level {level}, cell {tuple(cell)}")
    if np.any(field.child[b:b + 8] >= 0):
        raise ValueError("join requires all eight children to be leaves")
    total = 0.0
    for c in range(8):
        total += float(field.value[b + c])
    field.value[node] = total / 8.0
    if field.weight is not None:
        wt = 0.0
        for c in range(8):
            wt += float(field.weight[b + c])
        field.weight[node] = wt / 8.0
    field.child[node] = -1
    field.free_block(b)


# -- metrics and serialization --------------------------------------------

def quantization_error(field: OctreeField, dense_u: np.ndarray) -> tuple[float, float]:
    """Summed |leaf value - dense subvolume mean| over all leaves.

    Returns the plain sum and a volume-weighted variant where each term is
    scaled by the leaf's share of the domain volume.
    """
    dense_u = np.asarray(dense_u, dtype=np.float64)
    if dense_u.shape != (field.resolution,) * 3:
        raise ValueError("dense grid resolution mismatch")
    pyr = mean_pyramid(dense_u)
    n3 = float(field.resolution ** 3)
    total = 0.0
    weighted = 0.0
    for node, lvl, x, y, z in field.leaves():
        diff = abs(float(field.value[node]) - float(pyr[lvl][x, y, z]))
        total += diff
        weighted += diff * (8.0 ** (field.d_max - lvl)) / n3
    return total, weighted


def serialize(field: OctreeField, fp: IO[str]) -> int:
    """Dump the tree pre-order, one `level cx cy cz is_leaf value weight`
    line per node. Returns the number of lines written."""
    count = 0
    stack = [(0, 0, 0, 0, 0)]
    while stack:
        node, lvl, x, y, z = stack.pop()
        b = int(field.child[node])
        wt = float(field.weight[node]) if field.weight is not None else 0.0
        fp.write(f"{lvl} {x} {y} {z} {int(b < 0)} "
                 f"{float(field.value[node]):.17g} {wt:.17g}\n")
        count += 1
        if b >= 0:
            for c in range(7, -1, -1):
                stack.append((b + c, lvl + 1,
                              x * 2 + ((c >> 2) & 1),
                              y * 2 + ((c >> 1) & 1),
                              z * 2 + (c & 1)))
    return count
