#!/usr/bin/env python3
"""Benchmark the integrator across synthetic scenes and configurations.

Sweeps component thresholds and reweighting modes over the analytic test
scenes, reporting error, the per-decomposition lower bound, problem size,
iteration count, and wall time. The pixel-level reference solver can be
included for comparison.

Example:
    python scripts/synthetic_benchmark.py --size 128 --merge-freq 5
"""

import argparse
import sys
import time

import numpy as np

from normint.continuity import WeightParams
from normint.geometry import depth_from_logdepth
from normint.metrics import evaluate, min_theoretical_made
from normint.pipeline import run_pipeline, run_pixel_baseline
from normint.solver import SolveSettings
from normint.synth import SceneSpec, render_scene

HEADER = (
    f"{'scene':<16} {'theta':>6} {'mode':>5} {'comps':>7} {'iters':>5} "
    f"{'MADE':>10} {'MADE/z':>9} {'minMADE':>10} {'time':>7}"
)


def run_one(scene, theta_deg, mode, settings):
    nmap, intr = scene.normal_map, scene.intrinsics
    weights = WeightParams(reweighting_mode=mode)
    theta = None if theta_deg is None else float(np.deg2rad(theta_deg))
    start = time.perf_counter()
    res = run_pipeline(nmap, intr, theta, settings, weights)
    elapsed = time.perf_counter() - start
    pred = depth_from_logdepth(res.log_depth)
    report = evaluate(pred, scene.depth, scene.mask)
    lower = min_theoretical_made(
        depth_from_logdepth(res.filled), scene.depth, res.partition0, scene.mask
    )
    return {
        "comps": res.partition0.component_count,
        "iters": res.iterations,
        "made": report.made,
        "made_rel": report.made / scene.mean_depth,
        "min_made": lower,
        "time": elapsed,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--scenes", nargs="+", default=[
        "slanted_plane", "sphere_patch", "sine_relief", "sphere_on_plane",
    ])
    ap.add_argument("--thetas", nargs="+", default=["none", "2.0", "3.5", "5.0"],
                    help="degrees or 'none' (per-pixel components)")
    ap.add_argument("--modes", nargs="+", default=["soft", "off"],
                    choices=["soft", "hard", "off"])
    ap.add_argument("--merge-freq", type=int, default=None)
    ap.add_argument("--with-baseline", action="store_true",
                    help="also run the per-pixel reference solver")
    args = ap.parse_args(argv)

    settings = SolveSettings(freq_merging=args.merge_freq)
    print(HEADER)
    print("-" * len(HEADER))
    for kind in args.scenes:
        scene = render_scene(SceneSpec(kind, args.size, args.size))
        for theta_txt in args.thetas:
            theta = None if theta_txt.lower() == "none" else float(theta_txt)
            for mode in args.modes:
                row = run_one(scene, theta, mode, settings)
                print(
                    f"{kind:<16} {theta_txt:>6} {mode:>5} {row['comps']:>7} "
                    f"{row['iters']:>5} {row['made']:>10.3e} "
                    f"{row['made_rel']:>9.2e} {row['min_made']:>10.3e} "
                    f"{row['time']:>6.2f}s"
                )
        if args.with_baseline:
            for mode in args.modes:
                start = time.perf_counter()
                res = run_pixel_baseline(
                    scene.normal_map, scene.intrinsics,
                    settings, WeightParams(reweighting_mode=mode),
                )
                elapsed = time.perf_counter() - start
                report = evaluate(
                    depth_from_logdepth(res.log_depth), scene.depth, scene.mask
                )
                print(
                    f"{kind:<16} {'px':>6} {mode:>5} "
                    f"{scene.normal_map.valid_count:>7} {res.iterations:>5} "
                    f"{report.made:>10.3e} "
                    f"{report.made / scene.mean_depth:>9.2e} {'-':>10} "
                    f"{elapsed:>6.2f}s"
                )
    return 0


if __name__ == "__main__":
    sys.exit(main())
