"""Time the compiled kernels against the pure Python fallback.

Runs the same small fusion workload through both backends and prints a table
of per-stage wall times.  Usage:

    python3 benchmarks/bench_backends.py [--resolution 32] [--views 6]
                                         [--iterations 10]
"""

import argparse
import tempfile
import time

import numpy as np

from octfuse import _backend, _pykernels, fusion, octree, synth, tsdf


def build_workload(resolution, views):
    with tempfile.TemporaryDirectory() as d:
        dom, cams, imgs, _ = synth.make_sphere_dataset(
            d, n_views=views, width=96, height=96, resolution=resolution,
            voxel_size=0.256 / resolution)
    params = fusion.FusionParams()
    tsdfs = [tsdf.build_view_tsdf(img, cam, dom, params.delta, params.eta)
             for cam, img in zip(cams, imgs)]
    wf = np.zeros((resolution,) * 3)
    w = np.zeros((resolution,) * 3)
    for t in tsdfs:
        wf += t.f.astype(np.float64) * t.w
        w += t.w
    u0 = fusion.initial_field(wf, w, params.gamma)
    return dom, tsdfs, u0, params


def time_backend(module, tsdfs, u0, params, iterations):
    _backend._kernels = module if module is not _pykernels else None
    out = {}
    t0 = time.perf_counter()
    trees = [fusion.build_view_tree(t, params.tau) for t in tsdfs]
    out["view tree build"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    field = octree.build_octree(u0, tau=params.tau)
    out["iterate build"] = time.perf_counter() - t0

    p = fusion.FusionParams(**{**params.__dict__, "iterations": iterations})
    t0 = time.perf_counter()
    result = fusion.fuse(field, trees, p)
    out["solve"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    octree.densify(result.field)
    out["densify"] = time.perf_counter() - t0
    return out, result.field.node_count


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--resolution", type=int, default=32)
    ap.add_argument("--views", type=int, default=6)
    ap.add_argument("--iterations", type=int, default=10)
    args = ap.parse_args()

    dom, tsdfs, u0, params = build_workload(args.resolution, args.views)

    backends = [("pure", _pykernels)]
    try:
        from octfuse import _kernels
        backends.insert(0, ("compiled", _kernels))
    except ImportError:
        print("compiled kernels not built; timing the fallback only")

    results = {}
    for name, module in backends:
        results[name], nodes = time_backend(module, tsdfs, u0, params,
                                            args.iterations)
    _backend._kernels = None if backends[0][0] == "pure" else backends[0][1]

    stages = list(next(iter(results.values())))
    width = max(len(s) for s in stages)
    header = f"{'stage':<{width}}" + "".join(f"  {n:>10}" for n in results)
    if len(results) == 2:
        header += "   speedup"
    print(f"{args.views} views at {args.resolution}^3, "
          f"{args.iterations} iterations, {nodes} final nodes")
    print(header)
    for stage in stages:
        row = f"{stage:<{width}}"
        for name in results:
            row += f"  {results[name][stage] * 1e3:>8.1f}ms"
        if len(results) == 2:
            pure_t = results["pure"][stage]
            comp_t = results["compiled"][stage]
            row += f"  {pure_t / comp_t:>7.1f}x"
        print(row)


if __name__ == "__main__":
    main()
