"""Command-line interface: ``synth``, ``integrate``, ``decompose``, ``eval``.

Exit codes: 0 success, 1 data error (bad file, degenerate input), 2 usage
error. Diagnostics are emitted as JSON lines, one record per pipeline stage
or iteration.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fileio
from .continuity import CONTINUITY_MODELS, REWEIGHTING_MODES, WeightParams
from .errors import NormintError
from .geometry import NormalMap, depth_from_logdepth
from .graph import build_pixel_graph, form_components
from .metrics import evaluate
from .pipeline import run_pipeline, run_pixel_baseline
from .solver import SolveSettings
from .synth import SCENE_KINDS, SceneSpec, perturb_normals, render_scene


@dataclass(frozen=True)
class RunConfig:
    """Complete runtime configuration of an integration run.

    Mirrors the constraints of :class:`SolveSettings` and
    :class:`WeightParams` (validated on conversion).
    """

    theta_c_deg: float | None = 3.5  # None = per-pixel components
    connectivity: int = 8
    reweighting: str = "soft"
    k: float = 2.0
    outlier_low: float = 1e-5
    outlier_high: float = 1e-3
    delta_e_max: float = 1e-3
    max_iters: int = 150
    alignment_iters: int = 2
    merge_freq: int | None = None
    continuity_model: str = "milano"
    workers: int = 4
    gauge_depth: float | None = None
    flip_normals: bool = False
    seed: int = 0

    @property
    def theta_c(self) -> float | None:
        if self.theta_c_deg is None:
            return None
        return float(np.deg2rad(self.theta_c_deg))

    def solve_settings(self) -> SolveSettings:
        return SolveSettings(
            delta_e_max=self.delta_e_max,
            max_iters=self.max_iters,
            alignment_iters=self.alignment_iters,
            freq_merging=self.merge_freq,
            worker_count=self.workers,
        )

    def weight_params(self) -> WeightParams:
        return WeightParams(
            k=self.k,
            outlier_low=self.outlier_low,
            outlier_high=self.outlier_high,
            reweighting_mode=self.reweighting,
        )


def _theta_deg(text: str) -> float | None:
    """Angle threshold in degrees, or 'none' for per-pixel components."""
    if text.lower() == "none":
        return None
    return float(text)


def _merge_freq(text: str) -> int | None:
    if text.lower() == "off":
        return None
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("merge frequency must be >= 1")
    return value


def _default_workers() -> int:
    env = os.environ.get("NORMINT_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 4


def _add_integration_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--normals", required=True, help="normal map (.pfm or 16-bit .png)")
    p.add_argument("--mask", help="optional validity mask PNG")
    p.add_argument("--intrinsics", required=True, help="intrinsics JSON")
    p.add_argument("--output", required=True, help="output depth PFM")
    p.add_argument("--theta-c", type=_theta_deg, default=3.5, metavar="DEG|none",
                   help="component angle threshold in degrees, or 'none' (default 3.5)")
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=8)
    p.add_argument("--reweighting", choices=REWEIGHTING_MODES, default="soft")
    p.add_argument("--k", type=float, default=2.0, help="bilateral sigmoid sharpness")
    p.add_argument("--outlier-low", type=float, default=1e-5)
    p.add_argument("--outlier-high", type=float, default=1e-3)
    p.add_argument("--delta-e-max", type=float, default=1e-3)
    p.add_argument("--max-iters", type=int, default=150)
    p.add_argument("--alignment-iters", type=int, default=2)
    p.add_argument("--merge-freq", type=_merge_freq, default=None, metavar="N|off")
    p.add_argument("--continuity-model", choices=CONTINUITY_MODELS, default="milano")
    p.add_argument("--workers", type=int, default=_default_workers())
    p.add_argument("--flip-normals", action="store_true",
                   help="negate input normals (opposite orientation convention)")
    p.add_argument("--gauge-depth", type=float, default=None,
                   help="fix the median output depth to this value")
    p.add_argument("--diagnostics", help="write per-iteration JSONL here")
    p.add_argument("--pixel-baseline", action="store_true",
                   help="run the per-pixel reference solver instead")


def _load_normals(path: str, flip: bool) -> NormalMap:
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        return fileio.read_normals_pfm(path, flip=flip)
    if suffix == ".png":
        nmap = fileio.read_png16_normals(path)
        return nmap.flipped() if flip else nmap
    raise NormintError(f"unsupported normal map format: {path}")


def _apply_mask(nmap: NormalMap, mask_path: str | None) -> NormalMap:
    if mask_path is None:
        return nmap
    extra = fileio.read_mask(mask_path)
    if extra.shape != nmap.mask.shape:
        raise NormintError(
            f"mask {mask_path} shape {extra.shape} does not match normals "
            f"{nmap.mask.shape}"
        )
    joint = nmap.mask & extra
    return NormalMap.create(np.where(joint[..., None], nmap.normals, 0.0), joint)


def _write_diagnostics(path: str | None, records: list[dict]) -> None:
    if not path:
        return
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def cmd_integrate(args) -> int:
    config = RunConfig(
        theta_c_deg=args.theta_c,
        connectivity=args.connectivity,
        reweighting=args.reweighting,
        k=args.k,
        outlier_low=args.outlier_low,
        outlier_high=args.outlier_high,
        delta_e_max=args.delta_e_max,
        max_iters=args.max_iters,
        alignment_iters=args.alignment_iters,
        merge_freq=args.merge_freq,
        continuity_model=args.continuity_model,
        workers=args.workers,
        gauge_depth=args.gauge_depth,
        flip_normals=args.flip_normals,
    )
    nmap = _apply_mask(_load_normals(args.normals, config.flip_normals), args.mask)
    intr = fileio.load_intrinsics(args.intrinsics)
    if args.pixel_baseline:
        result = run_pixel_baseline(
            nmap, intr, config.solve_settings(), config.weight_params(),
            connectivity=config.connectivity,
            model=config.continuity_model,
            gauge_depth=config.gauge_depth,
        )
    else:
        result = run_pipeline(
            nmap, intr, config.theta_c, config.solve_settings(),
            config.weight_params(),
            connectivity=config.connectivity,
            model=config.continuity_model,
            gauge_depth=config.gauge_depth,
        )
    depth = depth_from_logdepth(result.log_depth)
    fileio.write_depth(args.output, depth, nmap.mask)
    _write_diagnostics(args.diagnostics, result.records)
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(
        f"integrated {nmap.valid_count} pixels in {result.iterations} "
        f"iterations -> {args.output}",
        file=sys.stderr,
    )
    return 0


def cmd_decompose(args) -> int:
    nmap = _apply_mask(_load_normals(args.normals, args.flip_normals), args.mask)
    g = build_pixel_graph(nmap, args.connectivity)
    theta = None if args.theta_c is None else float(np.deg2rad(args.theta_c))
    p = form_components(g, nmap, theta)
    prefix = args.output
    fileio.write_labels_bin(f"{prefix}.labels.bin", p, nmap.width, nmap.height)
    fileio.write_labels_png(f"{prefix}.labels.png", p, nmap.width, nmap.height)
    print(json.dumps({"component_count": p.component_count}))
    return 0


def cmd_synth(args) -> int:
    kwargs = {
        "kind": args.scene,
        "width": args.width,
        "height": args.height,
        "depth": args.depth,
        "radius": args.radius,
        "slope_x": args.slope_x,
        "slope_y": args.slope_y,
        "center_x": args.center_x,
        "center_y": args.center_y,
        "sink": args.sink,
        "max_tilt_deg": args.max_tilt,
        "amplitude": args.amplitude,
        "freq_x": args.freq_x,
        "freq_y": args.freq_y,
        "step_depths": tuple(args.step_depths),
    }
    scene = render_scene(SceneSpec(**kwargs))
    nmap = scene.normal_map
    if args.noise_sigma_deg > 0:
        nmap = perturb_normals(nmap, float(np.deg2rad(args.noise_sigma_deg)), args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.format == "png16":
        fileio.write_png16_normals(out / "normals.png", nmap)
    else:
        fileio.write_normals_pfm(out / "normals.pfm", nmap)
    fileio.write_depth(out / "depth_gt.pfm", scene.depth, scene.mask)
    fileio.write_mask(out / "mask.png", scene.mask)
    fileio.save_intrinsics(out / "intrinsics.json", scene.intrinsics)
    print(json.dumps({"out_dir": str(out), "valid_pixels": nmap.valid_count}))
    return 0


def cmd_eval(args) -> int:
    pred, pred_mask = fileio.read_depth(args.pred)
    gt, gt_mask = fileio.read_depth(args.gt)
    mask = pred_mask & gt_mask
    if args.mask:
        mask &= fileio.read_mask(args.mask)
    report = evaluate(pred, gt, mask)
    print(json.dumps(report.to_dict()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="normint",
        description="Surface-normal integration via relative scales of "
        "continuous components.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_int = sub.add_parser("integrate", help="reconstruct depth from normals")
    _add_integration_flags(p_int)
    p_int.set_defaults(func=cmd_integrate)

    p_dec = sub.add_parser("decompose", help="export the component labeling")
    p_dec.add_argument("--normals", required=True)
    p_dec.add_argument("--mask")
    p_dec.add_argument("--output", required=True, help="output path prefix")
    p_dec.add_argument("--theta-c", type=_theta_deg, default=3.5,
                       metavar="DEG|none")
    p_dec.add_argument("--connectivity", type=int, choices=(4, 8), default=8)
    p_dec.add_argument("--flip-normals", action="store_true")
    p_dec.set_defaults(func=cmd_decompose)

    p_syn = sub.add_parser("synth", help="render an analytic test scene")
    p_syn.add_argument("--scene", choices=SCENE_KINDS, required=True)
    p_syn.add_argument("--out-dir", required=True)
    p_syn.add_argument("--width", type=int, default=128)
    p_syn.add_argument("--height", type=int, default=128)
    p_syn.add_argument("--depth", type=float, default=2.0)
    p_syn.add_argument("--radius", type=float, default=None)
    p_syn.add_argument("--slope-x", type=float, default=0.4)
    p_syn.add_argument("--slope-y", type=float, default=-0.25)
    p_syn.add_argument("--center-x", type=float, default=None)
    p_syn.add_argument("--center-y", type=float, default=0.0)
    p_syn.add_argument("--sink", type=float, default=None)
    p_syn.add_argument("--max-tilt", type=float, default=70.0)
    p_syn.add_argument("--amplitude", type=float, default=0.08)
    p_syn.add_argument("--freq-x", type=float, default=4.0)
    p_syn.add_argument("--freq-y", type=float, default=5.0)
    p_syn.add_argument("--step-depths", type=float, nargs=2, default=(1.0, 2.0))
    p_syn.add_argument("--noise-sigma-deg", type=float, default=0.0)
    p_syn.add_argument("--seed", type=int, default=0)
    p_syn.add_argument("--format", choices=("pfm", "png16"), default="pfm")
    p_syn.set_defaults(func=cmd_synth)

    p_eval = sub.add_parser("eval", help="compare predicted depth to ground truth")
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--gt", required=True)
    p_eval.add_argument("--mask")
    p_eval.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except NormintError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
