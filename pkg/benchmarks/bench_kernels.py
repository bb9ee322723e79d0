"""Benchmark the jitted kernels against the pure-numpy fallback.

Runs the tile rasterizer (forward + backward) and the volume renderer in
the current process (numba path by default), then re-runs the identical
workload in a subprocess with ``VOXSPLAT_NO_NUMBA=1`` and compares both
timings and outputs (to 1e-12; the two code paths differ by a couple of
ulps from FMA contraction in the jitted code).

Usage: python3 benchmarks/bench_kernels.py [--splats N] [--size PX] [--repeat K]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _workload(splats, size, repeat):
    sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "tests"))
    from oracles import random_scene

    from voxsplat import dvr
    from voxsplat.gaussians import orbit_camera
    from voxsplat.rasterizer import rasterize_backward, rasterize_forward
    from voxsplat.shading import LightConfig

    rng = np.random.default_rng(0)
    geom = random_scene(rng, splats)
    colors = rng.uniform(0, 1, size=(splats, 3))
    cam = orbit_camera(np.zeros(3), 3.0, 0.3, 0.8, np.pi / 3, size, size)
    w = {"color": rng.normal(size=(size, size, 3)),
         "alpha": rng.normal(size=(size, size))}

    vol = dvr.make_shells_volume((32, 32, 32))
    tf = dvr.TransferFunction1D.basic_bump(0.4, 0.7, (0.8, 0.3, 0.2), 0.8)
    vcam = orbit_camera(np.zeros(3), 40.0, 0.3, 0.8, np.pi / 3, size, size)

    results = {}
    outputs = {}

    def bench(name, fn):
        fn()  # warmup / jit compile
        times = []
        for _ in range(repeat):
            t0 = time.perf_counter()
            out = fn()
            times.append(time.perf_counter() - t0)
        results[name] = min(times)
        outputs[name] = [np.asarray(a, dtype=np.float64) for a in out]

    def forward():
        out, _ = rasterize_forward(geom, colors, cam, dtype=np.float64)
        return out.color, out.alpha

    def backward():
        _, state = rasterize_forward(geom, colors, cam, dtype=np.float64)
        g = rasterize_backward(state, w)
        return g["d_mu"], g["d_o_logit"], g["d_colors"]

    def volume():
        img = dvr.render_view(vol, tf, vcam, LightConfig())
        return (img,)

    bench("rasterize_forward", forward)
    bench("rasterize_forward+backward", backward)
    bench("dvr_render_view", volume)
    return results, outputs


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--splats", type=int, default=2000)
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--emit-json", action="store_true",
                    help="Print results as JSON and exit (subprocess mode).")
    args = ap.parse_args()

    results, outputs = _workload(args.splats, args.size, args.repeat)
    if args.emit_json:
        print(json.dumps({
            "times": results,
            "outputs": {k: [a.reshape(-1).tolist() for a in v]
                        for k, v in outputs.items()},
        }))
        return

    from voxsplat._accel import USE_NUMBA
    here = "numba" if USE_NUMBA else "numpy fallback"
    env = dict(os.environ,
               VOXSPLAT_NO_NUMBA="0" if not USE_NUMBA else "1")
    other = "numpy fallback" if USE_NUMBA else "numba"
    proc = subprocess.run(
        [sys.executable, os.path.abspath(__file__), "--emit-json",
         "--splats", str(args.splats), "--size", str(args.size),
         "--repeat", str(args.repeat)],
        env=env, capture_output=True, text=True, check=True)
    remote = json.loads(proc.stdout.strip().splitlines()[-1])

    print(f"{args.splats} splats, {args.size}x{args.size}, "
          f"best of {args.repeat}:")
    print(f"{'kernel':<28} {here:>12} {other:>16} {'speedup':>9}")
    for name, t in results.items():
        t2 = remote["times"][name]
        print(f"{name:<28} {t * 1e3:>10.1f}ms {t2 * 1e3:>14.1f}ms "
              f"{t2 / t:>8.1f}x")
    ok = all(
        np.allclose(mine.reshape(-1), np.array(theirs), atol=1e-12, rtol=0)
        for name, arrs in outputs.items()
        for mine, theirs in zip(arrs, remote["outputs"][name]))
    print(f"outputs match across paths (atol 1e-12): {ok}")
    if not ok:
        sys.exit(1)


if __name__ == "__main__":
    main()
