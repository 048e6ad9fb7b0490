"""Variational fusion of per-view truncated signed distances.

The iterate is an implicit surface u over the reconstruction volume,
minimizing a volume-integrated energy with a smoothed-L1 data term against
every view's truncated signed distance and a smoothed total-variation
penalty. Gradient descent runs in Jacobi fashion: each pass snapshots the
current values, computes every update from the snapshot, and restructures
the octree iterate on the fly, splitting leaves whose stepped value lands
near the zero crossing and collapsing saturated constant-sign subtrees.

A dense single-grid solver implementing the same update rule serves as the
reference; at full refinement the octree pass reproduces it cell for cell.

Cell units: all finite differences use the spacing of a finest-level cell
as the unit length, so a node at level L has spacing 2^(d_max - L).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import _backend
from .octree import OctreeField, build_octree, full_tree_capacity
from .tsdf import ViewTsdf

__all__ = [
    "FusionParams",
    "IterationStats",
    "FuseResult",
    "step_scale",
    "build_view_tree",
    "view_arrays",
    "initial_field",
    "fuse",
    "tree_energy",
    "dense_step",
    "dense_energy",
    "dense_fuse",
    "data_term_value",
    "data_term_derivative",
    "smoothness_value",
    "smoothness_flux",
    "write_report",
    "read_report",
]


@dataclass(frozen=True)
class FusionParams:
    """Energy weights, descent schedule and restructuring thresholds.

    delta and eta are metric truncation/visibility bands handed to the
    per-view distance builder; everything else is dimensionless. tau_split
    must stay below tau_join so a leaf split in one pass cannot be joined
    back in the same pass. A negative construction threshold tau refines
    the initial tree to full depth regardless of field content.

    eps bounds the curvature of both robust terms: explicit descent with
    step xi0 contracts only while xi0/eps and 12*lam*xi0/eps stay below 2,
    so eps defaults well above the interface gradient scale times xi0.
    """

    delta: float = 0.004
    eta: float = 0.02
    lam: float = 0.3
    eps: float = 0.25
    gamma: float = 1e-4
    xi0: float = 0.1
    halve_every: int = 20
    iterations: int = 100
    tau: float = 0.1
    tau_split: float = 0.1
    tau_join: float = 0.5
    clamp: bool = True

    def __post_init__(self):
        if self.delta <= 0 or self.eta <= 0:
            raise ValueError("delta and eta must be positive")
        if self.eta < self.delta:
            raise ValueError("eta must not be smaller than delta")
        for name in ("lam", "eps", "gamma", "xi0"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.halve_every < 1 or self.iterations < 0:
            raise ValueError("bad schedule")
        if self.tau_split < 0:
            raise ValueError("tau_split must be non-negative")
        if self.tau_split >= self.tau_join:
            raise ValueError("tau_split must be smaller than tau_join")


@dataclass
class IterationStats:
    iteration: int
    energy: float
    node_count: int
    memory_bytes: int
    splits: int
    joins: int
    wall_ms: float


@dataclass
class FuseResult:
    field: OctreeField
    stats: list[IterationStats] = dc_field(default_factory=list)
    join_log: np.ndarray | None = None

    @property
    def mem_peak_bytes(self) -> int:
        live = self.field.node_count * (self.field.value.itemsize
                                        + self.field.snap.itemsize
                                        + self.field.child.itemsize)
        return max((s.memory_bytes for s in self.stats), default=live)

    @property
    def wall_ms(self) -> float:
        return sum(s.wall_ms for s in self.stats)


def step_scale(t: int, params: FusionParams) -> float:
    """Descent step for pass ``t`` (0-based); halves every ``halve_every``."""
    return params.xi0 * 2.0 ** (-(t // params.halve_every))


# -- view preparation ------------------------------------------------------

def build_view_tree(view: ViewTsdf, tau: float = 0.1) -> OctreeField:
    """Compress one view's distance and weight grids into an octree.

    The weight-constancy split rule guarantees every leaf is either fully
    observed or fully unobserved, so leaf weights are exactly 0 or 1.
    """
    return build_octree(view.f, view.w, tau=tau, dtype=np.float32)


def view_arrays(views: list[OctreeField]) -> tuple[list, list, list]:
    """Pool arrays of the view trees in kernel calling order."""
    for v in views:
        if v.weight is None:
            raise ValueError("view trees must carry weights")
    return ([v.value for v in views], [v.weight for v in views],
            [v.child for v in views])


def initial_field(wf_sum: np.ndarray, w_sum: np.ndarray,
                  gamma: float) -> np.ndarray:
    """Weighted mean of the view distances; unobserved cells start solid."""
    u = np.full(wf_sum.shape, -1.0, dtype=np.float64)
    seen = w_sum > 0
    u[seen] = wf_sum[seen] / (w_sum[seen] + gamma)
    return u


# -- octree solver ---------------------------------------------------------

def _solver_field(u0: OctreeField) -> OctreeField:
    """Copy ``u0`` into a pool sized for a complete tree.

    The descent pass must never reallocate mid-pass (raw pointers in the
    compiled backend), so the solver works at full capacity from the start.
    """
    cap = full_tree_capacity(u0.d_max)
    used = u0.used
    value = np.zeros(cap, dtype=np.float64)
    value[:used] = u0.value[:used]
    child = np.full(cap, -1, dtype=np.int32)
    child[:used] = u0.child[:used]
    f = OctreeField(value, child, u0.state.copy(), u0.d_max)
    f.ensure_scratch()
    return f


def tree_energy(u: OctreeField, views: list[OctreeField],
                params: FusionParams) -> float:
    """Leaf-summed energy of an octree iterate, in finest-cell volume units."""
    vvals, vws, vchilds = view_arrays(views)
    return float(_backend.get().tree_energy(
        u.value, u.child, vvals, vws, vchilds,
        u.d_max, params.lam, params.eps, params.gamma))


def fuse(u0: OctreeField, views: list[OctreeField], params: FusionParams,
         *, log_joins: bool = False, reverse: bool = False) -> FuseResult:
    """Run the full descent schedule on an octree iterate.

    ``u0`` is left untouched. ``log_joins`` records one row per collapse:
    level, cell coordinates, and the eight child values that were merged.
    ``reverse`` flips the traversal order of every pass; results must not
    depend on it.

    Statistics carry one row per completed pass. Energies are evaluated
    after the pass's restructuring and mean re-propagation so serialized
    trees and reported energies always agree.
    """
    if not views:
        raise ValueError("at least one view is required")
    for v in views:
        if v.d_max != u0.d_max:
            raise ValueError("view and iterate depths differ")
    kern = _backend.get()
    u = _solver_field(u0)
    vvals, vws, vchilds = view_arrays(views)

    jbuf = None
    jchunks: list[np.ndarray] = []
    if log_joins:
        jbuf = np.zeros((u.capacity // 8 + 8, 12), dtype=np.float64)

    def footprint() -> int:
        return u.node_count * (u.value.itemsize + u.snap.itemsize
                               + u.child.itemsize)

    stats: list[IterationStats] = []
    for t in range(params.iterations):
        xi = step_scale(t, params)
        t0 = time.perf_counter()
        splits, joins, jrows = kern.iterate_pass(
            u.value, u.snap, u.child, u.joined, u.state,
            vvals, vws, vchilds,
            u.d_max, params.lam, params.eps, params.gamma, xi,
            params.tau_split, params.tau_join,
            params.clamp, reverse, jbuf)
        kern.propagate(u.value, u.child)
        energy = tree_energy_arrays(u, vvals, vws, vchilds, params)
        wall_ms = (time.perf_counter() - t0) * 1e3
        if jbuf is not None:
            if jrows != joins:
                raise RuntimeError("join log truncated")
            if jrows:
                jchunks.append(jbuf[:jrows].copy())
        stats.append(IterationStats(t + 1, energy, u.node_count,
                                    footprint(), splits, joins, wall_ms))
    join_log = None
    if log_joins:
        join_log = (np.vstack(jchunks) if jchunks
                    else np.zeros((0, 12), dtype=np.float64))
    return FuseResult(field=u, stats=stats, join_log=join_log)


def tree_energy_arrays(u: OctreeField, vvals, vws, vchilds,
                       params: FusionParams) -> float:
    return float(_backend.get().tree_energy(
        u.value, u.child, vvals, vws, vchilds,
        u.d_max, params.lam, params.eps, params.gamma))


# -- dense reference solver -------------------------------------------------

def _forward_diffs(u: np.ndarray):
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gz = np.zeros_like(u)
    gx[:-1, :, :] = u[1:, :, :] - u[:-1, :, :]
    gy[:, :-1, :] = u[:, 1:, :] - u[:, :-1, :]
    gz[:, :, :-1] = u[:, :, 1:] - u[:, :, :-1]
    return gx, gy, gz


def _data_accumulate(u, fs, ws, eps2, gamma, *, derivative):
    """Sum the per-view data contributions in view order.

    The octree kernel accumulates views sequentially per cell; doing the
    same here keeps the two solvers bit-comparable at full refinement.
    """
    num = np.zeros_like(u)
    den = np.full_like(u, gamma)
    for f, w in zip(fs, ws):
        wv = w.astype(np.float64)
        d = u - f.astype(np.float64)
        if derivative:
            term = wv * d / np.sqrt(d * d + eps2)
        else:
            term = wv * np.sqrt(d * d + eps2)
        num += np.where(wv != 0.0, term, 0.0)
        den += wv
    return num, den


def dense_step(u: np.ndarray, fs: list[np.ndarray], ws: list[np.ndarray],
               params: FusionParams, xi: float) -> np.ndarray:
    """One Jacobi descent step on a dense grid (unit cell spacing)."""
    eps2 = params.eps * params.eps
    gx, gy, gz = _forward_diffs(u)
    gn = np.sqrt(gx * gx + gy * gy + gz * gz + eps2)
    px, py, pz = gx / gn, gy / gn, gz / gn
    div = (np.diff(px, axis=0, prepend=0.0)
           + np.diff(py, axis=1, prepend=0.0)
           + np.diff(pz, axis=2, prepend=0.0))
    num, den = _data_accumulate(u, fs, ws, eps2, params.gamma,
                                derivative=True)
    un = u + xi * (params.lam * div - num / den)
    if params.clamp:
        np.clip(un, -1.0, 1.0, out=un)
    return un


def dense_energy(u: np.ndarray, fs: list[np.ndarray], ws: list[np.ndarray],
                 params: FusionParams) -> float:
    eps2 = params.eps * params.eps
    gx, gy, gz = _forward_diffs(u)
    smooth = params.lam * np.sqrt(gx * gx + gy * gy + gz * gz + eps2)
    num, den = _data_accumulate(u, fs, ws, eps2, params.gamma,
                                derivative=False)
    return float((num / den + smooth).sum())


def dense_fuse(u0: np.ndarray, fs: list[np.ndarray], ws: list[np.ndarray],
               params: FusionParams) -> tuple[np.ndarray, list[IterationStats]]:
    """Full descent schedule on a dense grid, instrumented like ``fuse``."""
    u = np.array(u0, dtype=np.float64)
    n3 = u.size
    mem = n3 * 2 * u.itemsize
    stats: list[IterationStats] = []
    for t in range(params.iterations):
        xi = step_scale(t, params)
        t0 = time.perf_counter()
        u = dense_step(u, fs, ws, params, xi)
        energy = dense_energy(u, fs, ws, params)
        wall_ms = (time.perf_counter() - t0) * 1e3
        stats.append(IterationStats(t + 1, energy, n3, mem, 0, 0, wall_ms))
    return u, stats


# -- pointwise pieces of the energy (exposed for derivative checks) --------

def data_term_value(u: float, f: np.ndarray, w: np.ndarray,
                    eps: float, gamma: float) -> float:
    """Smoothed-L1 data cost of one cell against per-view samples."""
    f = np.asarray(f, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    num = float((w * np.sqrt((u - f) ** 2 + eps * eps)).sum())
    return num / (gamma + float(w.sum()))


def data_term_derivative(u: float, f: np.ndarray, w: np.ndarray,
                         eps: float, gamma: float) -> float:
    """d/du of ``data_term_value``; what the descent subtracts per cell."""
    f = np.asarray(f, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    d = u - f
    num = float((w * d / np.sqrt(d * d + eps * eps)).sum())
    return num / (gamma + float(w.sum()))


def smoothness_value(g, eps: float) -> float:
    """Smoothed gradient magnitude sqrt(|g|^2 + eps^2)."""
    g = np.asarray(g, dtype=np.float64)
    return float(np.sqrt((g * g).sum() + eps * eps))


def smoothness_flux(g, eps: float) -> np.ndarray:
    """Gradient of ``smoothness_value`` with respect to g."""
    g = np.asarray(g, dtype=np.float64)
    return g / np.sqrt((g * g).sum() + eps * eps)


# -- iteration reports -----------------------------------------------------

REPORT_COLUMNS = ("iter", "energy", "node_count", "memory_bytes",
                  "splits", "joins", "wall_ms")


def write_report(path, stats: list[IterationStats],
                 header: dict | None = None) -> None:
    """Write per-iteration statistics as CSV with a commented header."""
    with open(path, "w") as fp:
        for key, value in (header or {}).items():
            fp.write(f"# {key} = {value}\n")
        fp.write(",".join(REPORT_COLUMNS) + "\n")
        for s in stats:
            fp.write(f"{s.iteration},{s.energy:.17g},{s.node_count},"
                     f"{s.memory_bytes},{s.splits},{s.joins},"
                     f"{s.wall_ms:.3f}\n")


def read_report(path) -> tuple[dict, list[IterationStats]]:
    header: dict[str, str] = {}
    stats: list[IterationStats] = []
    with open(path) as fp:
        for line in fp:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                header[key.strip()] = value.strip()
                continue
            if line.startswith("iter,"):
                if line != ",".join(REPORT_COLUMNS):
                    raise ValueError("unexpected report columns")
                continue
            parts = line.split(",")
            if len(parts) != len(REPORT_COLUMNS):
                raise ValueError(f"bad report row: {line!r}")
            stats.append(IterationStats(
                int(parts[0]), float(parts[1]), int(parts[2]),
                int(parts[3]), int(parts[4]), int(parts[5]),
                float(parts[6])))
    return header, stats
