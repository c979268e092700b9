#!/usr/bin/env python3
"""Compare the numba and numpy compositing backends on a large scene.

Usage: python benchmarks/bench_render.py [--gaussians 100000] [--size 800]
       [--repeats 3] [--skip-numpy]
"""

import argparse
import time

import numpy as np

from segwild.render import build_plan, render_arrays
from segwild.types import Camera, GaussianScene


def make_scene(n, seed=42):
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return GaussianScene(
        positions=np.concatenate([rng.uniform(-1.5, 1.5, (n, 2)),
                                  rng.uniform(3.0, 5.0, (n, 1))], axis=1),
        rotations=q,
        scales=rng.uniform(0.004, 0.02, (n, 3)),
        opacities=rng.uniform(0.2, 0.95, n),
        colors=rng.uniform(0, 1, (n, 3)),
        affinities=np.zeros((n, 2)),
    )


def timed(plan, payload, backend, repeats):
    best = np.inf
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = render_arrays(plan, payload, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, result


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--gaussians", type=int, default=100_000)
    parser.add_argument("--size", type=int, default=800)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--skip-numpy", action="store_true",
                        help="skip the (slow) pure-numpy fallback")
    args = parser.parse_args()

    scene = make_scene(args.gaussians)
    cam = Camera(fx=1.125 * args.size, fy=1.125 * args.size,
                 cx=args.size / 2, cy=args.size / 2,
                 width=args.size, height=args.size,
                 R=np.eye(3), t=np.zeros(3))

    t0 = time.perf_counter()
    plan = build_plan(scene, cam)
    plan_s = time.perf_counter() - t0
    print(f"scene: {args.gaussians} Gaussians at {args.size}x{args.size}, "
          f"{plan.tile_items.shape[0]} tile pairs (plan {plan_s * 1e3:.0f} ms)")

    render_arrays(plan, scene.colors, backend="numba")  # compile
    t_numba, out_numba = timed(plan, scene.colors, "numba", args.repeats)
    pix_per_s = args.size * args.size / t_numba
    print(f"numba : {t_numba * 1e3:8.1f} ms  ({pix_per_s / 1e6:.1f} Mpix/s)")

    if not args.skip_numpy:
        t_numpy, out_numpy = timed(plan, scene.colors, "numpy",
                                   max(1, args.repeats - 2))
        print(f"numpy : {t_numpy * 1e3:8.1f} ms  (x{t_numpy / t_numba:.1f} "
              f"slower)")
        diff = max(float(np.max(np.abs(out_numpy[0] - out_numba[0]))),
                   float(np.max(np.abs(out_numpy[1] - out_numba[1]))))
        print(f"backend agreement: max |diff| = {diff:.2e}")


if __name__ == "__main__":
    main()
