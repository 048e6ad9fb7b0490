"""Command line interface: dataset synthesis, fusion runs, mesh comparison.

Exit codes: 0 success, 1 runtime failure (missing or unreadable inputs,
I/O errors), 2 usage or configuration errors. Identical inputs and
configuration produce byte-identical meshes and reports (wall-clock
columns excepted).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import _backend, fusion, mesh, octree, synth, tsdf, volume
from .fusion import FusionParams

__all__ = ["main", "entry", "UsageError", "parse_config_file"]


class UsageError(Exception):
    """Bad arguments or configuration; maps to exit code 2."""


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# public config key -> (FusionParams field, converter)
CONFIG_KEYS = {
    "delta": ("delta", float),
    "eta": ("eta", float),
    "lambda": ("lam", float),
    "eps": ("eps", float),
    "gamma": ("gamma", float),
    "xi0": ("xi0", float),
    "halve_every": ("halve_every", int),
    "iterations": ("iterations", int),
    "tau": ("tau", float),
    "tau_s": ("tau_split", float),
    "tau_j": ("tau_join", float),
    "clamp": ("clamp", _parse_bool),
}

_FIELD_TO_PUBLIC = {field: key for key, (field, _) in CONFIG_KEYS.items()}


def parse_config_file(path) -> dict[str, str]:
    """Read `key = value` lines; `#` starts a comment, blanks are skipped."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected `key = value`")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def merged_params(args) -> tuple[FusionParams, dict]:
    """Resolve fusion parameters: flags over config file over defaults.

    Returns the parameters and the effective public-key mapping echoed
    into report headers.
    """
    fields: dict = {}
    if getattr(args, "fine_scale", False):
        fields["delta"] = 1e-4
    if getattr(args, "config", None):
        for key, text in parse_config_file(args.config).items():
            if key not in CONFIG_KEYS:
                raise UsageError(f"unknown config key: {key}")
            field, conv = CONFIG_KEYS[key]
            try:
                fields[field] = conv(text)
            except ValueError as exc:
                raise UsageError(f"bad value for {key}: {text!r}") from exc
    for field in _FIELD_TO_PUBLIC:
        flag_value = getattr(args, field, None)
        if flag_value is not None:
            fields[field] = flag_value
    try:
        params = FusionParams(**fields)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    public = {pub: getattr(params, field)
              for field, pub in _FIELD_TO_PUBLIC.items()}
    return params, public


# -- commands ---------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.views < 1:
        raise UsageError("--views must be at least 1")
    if args.image_size < 16:
        raise UsageError("--image-size must be at least 16")
    resolution = args.resolution
    voxel = args.voxel_size
    if args.fine_scale:
        if args.resolution == DEFAULT_RESOLUTION:
            resolution = 256
        if args.voxel_size == DEFAULT_VOXEL:
            voxel = 0.001
    try:
        dom, cams, _, _ = synth.make_sphere_dataset(
            args.out, n_views=args.views,
            width=args.image_size, height=args.image_size,
            orbit=args.orbit, radius=args.radius,
            resolution=resolution, voxel_size=voxel,
            background_radius=args.background)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(f"dataset {args.out} views {len(cams)} resolution {dom.resolution} "
          f"voxel_size {dom.voxel_size:.17g}")
    return 0


def cmd_fuse(args) -> int:
    params, public = merged_params(args)
    dom, cams, imgs = volume.load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    want_oct = args.mode in ("octree", "both")
    want_dense = args.mode in ("dense", "both")
    n = dom.resolution

    wf_sum = np.zeros((n, n, n), dtype=np.float64)
    w_sum = np.zeros((n, n, n), dtype=np.float64)
    trees: list[octree.OctreeField] = []
    fs: list[np.ndarray] = []
    ws: list[np.ndarray] = []
    for cam, img in zip(cams, imgs):
        vt = tsdf.build_view_tsdf(img, cam, dom, params.delta, params.eta)
        wf_sum += vt.f.astype(np.float64) * vt.w
        w_sum += vt.w
        if want_oct:
            trees.append(fusion.build_view_tree(vt, params.tau))
        if want_dense:
            fs.append(vt.f)
            ws.append(vt.w)
    u0_grid = fusion.initial_field(wf_sum, w_sum, params.gamma)
    seen = w_sum > 0

    header = {
        "mode": args.mode,
        "data": str(args.data),
        "backend": _backend.name(),
        "views": len(cams),
        "resolution": n,
        "voxel_size": f"{dom.voxel_size:.17g}",
    }
    header.update((k, public[k]) for k in CONFIG_KEYS)

    result = None
    mesh_oct = None
    if want_oct:
        u0 = octree.build_octree(u0_grid, tau=params.tau)
        result = fusion.fuse(u0, trees, params,
                             log_joins=args.join_log is not None)
        mesh_oct = mesh.marching_cubes(octree.densify(result.field), seen, dom)
        mesh.write_ply(out / "P_octree.ply", mesh_oct)
        if args.dump_tree:
            with open(out / "tree_octree.txt", "w") as fp:
                octree.serialize(result.field, fp)
        if args.join_log is not None:
            with open(args.join_log, "w") as fp:
                for row in (result.join_log if result.join_log is not None
                            else ()):
                    fp.write(" ".join(f"{v:.17g}" for v in row) + "\n")

    u_dense = None
    dense_stats = None
    mesh_dense = None
    if want_dense:
        u_dense, dense_stats = fusion.dense_fuse(u0_grid, fs, ws, params)
        mesh_dense = mesh.marching_cubes(u_dense, seen, dom)
        mesh.write_ply(out / "P_dense.ply", mesh_dense)
        if args.dump_dense:
            np.save(args.dump_dense, u_dense)

    if want_oct:
        oct_header = dict(header)
        if u_dense is not None:
            qsum, qvw = octree.quantization_error(result.field, u_dense)
            oct_header["quantization_error_sum"] = f"{qsum:.17g}"
            oct_header["quantization_error_volume_weighted"] = f"{qvw:.17g}"
        fusion.write_report(out / "report_octree.csv", result.stats,
                            oct_header)
        view_bytes = sum(t.nbytes for t in trees)
        print(f"octree {result.field.node_count} "
              f"{result.mem_peak_bytes + view_bytes} {result.wall_ms:.1f}")
    if want_dense:
        fusion.write_report(out / "report_dense.csv", dense_stats, header)
        dense_bytes = (n ** 3 * 16
                       + sum(f.nbytes + w.nbytes for f, w in zip(fs, ws)))
        dense_wall = sum(s.wall_ms for s in dense_stats)
        print(f"dense {n ** 3} {dense_bytes} {dense_wall:.1f}")
    if want_oct and want_dense:
        diff = mesh.vertex_diff(mesh_oct, mesh_dense)
        print(f"octree_vs_dense {diff.mean:.17g} {diff.std:.17g} "
              f"{diff.max:.17g}")
        qsum, qvw = octree.quantization_error(result.field, u_dense)
        print(f"quantization_error {qsum:.17g} volume_weighted {qvw:.17g}")
    return 0


def cmd_compare(args) -> int:
    if (args.mesh_b is None) == (args.ground_truth is None):
        raise UsageError("give exactly one of --mesh-b or --ground-truth")
    a = mesh.read_ply(args.mesh_a)
    if args.ground_truth is not None:
        center, radius = volume.load_ground_truth(args.ground_truth)
        dists = mesh.sphere_distances(a, center, radius)
        mean, std, dmax = (float(dists.mean()), float(dists.std()),
                           float(dists.max()))
        quality = dists
    else:
        b = mesh.read_ply(args.mesh_b)
        diff = mesh.vertex_diff(a, b)
        mean, std, dmax = diff.mean, diff.std, diff.max
        quality = diff.d_ab
    if args.out_ply:
        mesh.write_ply(args.out_ply, mesh.TriMesh(a.vertices, a.faces,
                                                  quality))
    if args.out_csv:
        with open(args.out_csv, "w") as fp:
            fp.write("index,distance\n")
            for i, d in enumerate(quality):
                fp.write(f"{i},{d:.17g}\n")
    print(f"{mean:.17g} {std:.17g} {dmax:.17g}")
    return 0


# -- argument parsing -------------------------------------------------------

DEFAULT_RESOLUTION = 128
DEFAULT_VOXEL = 0.002


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="octfuse",
        description="Fuse depth maps into an implicit surface on an octree.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic sphere dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--views", type=int, default=31)
    p.add_argument("--image-size", type=int, default=320)
    p.add_argument("--orbit", type=float, default=0.4)
    p.add_argument("--radius", type=float, default=0.06)
    p.add_argument("--resolution", type=int, default=DEFAULT_RESOLUTION)
    p.add_argument("--voxel-size", type=float, default=DEFAULT_VOXEL)
    p.add_argument("--background", type=float, default=1.2,
                   help="background sphere radius; 0 disables")
    p.add_argument("--fine-scale", action="store_true",
                   help="fine capture scale (1 mm voxels, N=256)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fuse", help="fuse a dataset into meshes and reports")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mode", choices=("octree", "dense", "both"),
                   default="octree")
    p.add_argument("--config", help="config file with `key = value` lines")
    p.add_argument("--delta", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--xi0", type=float)
    p.add_argument("--halve-every", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--tau-s", dest="tau_split", type=float)
    p.add_argument("--tau-j", dest="tau_join", type=float)
    p.add_argument("--clamp", type=_parse_bool)
    p.add_argument("--fine-scale", action="store_true",
                   help="fine capture scale (0.1 mm truncation band)")
    p.add_argument("--dump-tree", action="store_true",
                   help="write the final iterate tree as text")
    p.add_argument("--dump-dense", help="write the final dense grid (.npy)")
    p.add_argument("--join-log", help="write one line per join")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("compare", help="distance statistics between meshes")
    p.add_argument("--mesh-a", required=True)
    p.add_argument("--mesh-b")
    p.add_argument("--ground-truth",
                   help="sphere description file for the analytic oracle")
    p.add_argument("--out-ply", help="write mesh A colored by distance")
    p.add_argument("--out-csv", help="write per-vertex distances")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main(sys.argv[1:]))
