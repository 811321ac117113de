import json

import numpy as np
import pytest

from normint import fileio
from normint.cli import main


def run_cli(*args):
    return main([str(a) for a in args])


def synth_scene(tmp_path, scene, size=48, extra=()):
    out = tmp_path / scene
    rc = run_cli(
        "synth", "--scene", scene, "--out-dir", out,
        "--width", size, "--height", size, *extra,
    )
    assert rc == 0
    return out


def read_diag(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_synth_integrate_eval_round_trip(tmp_path, capsys):
    scene = synth_scene(tmp_path, "fronto_plane")
    depth = tmp_path / "depth.pfm"
    rc = run_cli(
        "integrate", "--normals", scene / "normals.pfm",
        "--mask", scene / "mask.png",
        "--intrinsics", scene / "intrinsics.json",
        "--output", depth, "--theta-c", "none", "--reweighting", "off",
    )
    assert rc == 0
    capsys.readouterr()
    rc = run_cli("eval", "--pred", depth, "--gt", scene / "depth_gt.pfm")
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["made"] < 1e-6 * 2.0  # scene depth is 2 units
    assert report["valid_pixel_count"] == 48 * 48


def test_integrate_bump_scene_diagnostics(tmp_path):
    scene = synth_scene(tmp_path, "sphere_on_plane", size=96)
    depth = tmp_path / "depth.pfm"
    diag = tmp_path / "diag.jsonl"
    rc = run_cli(
        "integrate", "--normals", scene / "normals.pfm",
        "--intrinsics", scene / "intrinsics.json",
        "--output", depth, "--theta-c", "3.5", "--diagnostics", diag,
    )
    assert rc == 0
    records = read_diag(diag)
    comps = [r for r in records if r.get("stage") == "form_components"]
    assert comps and comps[0]["component_count"] >= 2
    iters = [r for r in records if "t" in r]
    assert iters and iters[-1]["t"] == len(iters)


def test_integrate_missing_intrinsics_exits_1(tmp_path, capsys):
    scene = synth_scene(tmp_path, "fronto_plane", size=16)
    rc = run_cli(
        "integrate", "--normals", scene / "normals.pfm",
        "--intrinsics", tmp_path / "missing_intrinsics.json",
        "--output", tmp_path / "depth.pfm",
    )
    assert rc == 1
    assert "missing_intrinsics.json" in capsys.readouterr().err


def test_usage_errors_exit_2(capsys):
    assert run_cli() == 2
    assert run_cli("integrate") == 2
    assert run_cli("synth", "--scene", "bogus", "--out-dir", "x") == 2
    capsys.readouterr()


def test_degenerate_scene_exits_1(tmp_path, capsys):
    rc = run_cli(
        "synth", "--scene", "sphere_patch", "--out-dir", tmp_path / "s",
        "--depth", 0.5, "--radius", 0.8,
    )
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_decompose_writes_artifacts(tmp_path, capsys):
    scene = synth_scene(tmp_path, "sphere_on_plane", size=64)
    capsys.readouterr()
    prefix = tmp_path / "bump"
    rc = run_cli(
        "decompose", "--normals", scene / "normals.pfm",
        "--theta-c", "3.5", "--output", prefix,
    )
    assert rc == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["component_count"] >= 2
    part, w, h = fileio.read_labels_bin(f"{prefix}.labels.bin")
    assert (w, h) == (64, 64)
    assert part.component_count == printed["component_count"]
    assert (tmp_path / "bump.labels.png").exists()


def test_integrate_deterministic_outputs(tmp_path):
    scene = synth_scene(tmp_path, "sphere_on_plane", size=64)
    outs = []
    for tag in ("a", "b"):
        depth = tmp_path / f"depth_{tag}.pfm"
        diag = tmp_path / f"diag_{tag}.jsonl"
        rc = run_cli(
            "integrate", "--normals", scene / "normals.pfm",
            "--intrinsics", scene / "intrinsics.json",
            "--output", depth, "--theta-c", "3.5",
            "--merge-freq", "5", "--diagnostics", diag,
        )
        assert rc == 0
        outs.append((depth.read_bytes(), read_diag(diag)))
    assert outs[0][0] == outs[1][0]

    def strip(records):
        return [{k: v for k, v in r.items() if k != "wall_ms"} for r in records]

    assert strip(outs[0][1]) == strip(outs[1][1])


def test_png16_input_path(tmp_path):
    scene = synth_scene(tmp_path, "sphere_patch", size=48,
                        extra=("--format", "png16"))
    assert (scene / "normals.png").exists()
    depth = tmp_path / "depth.pfm"
    rc = run_cli(
        "integrate", "--normals", scene / "normals.png",
        "--intrinsics", scene / "intrinsics.json",
        "--output", depth, "--theta-c", "none", "--reweighting", "off",
    )
    assert rc == 0
    pred, mask = fileio.read_depth(depth)
    gt, _ = fileio.read_depth(scene / "depth_gt.pfm")
    from normint.metrics import evaluate

    assert evaluate(pred, gt, mask).relative_error < 1e-3


def test_flip_normals_round_trip(tmp_path):
    scene = synth_scene(tmp_path, "sphere_patch", size=32)
    nmap = fileio.read_normals_pfm(scene / "normals.pfm")
    fileio.write_normals_pfm(scene / "normals_flipped.pfm", nmap.flipped())
    depths = []
    for normals, flag in [("normals.pfm", ()), ("normals_flipped.pfm", ("--flip-normals",))]:
        out = tmp_path / f"depth_{len(depths)}.pfm"
        rc = run_cli(
            "integrate", "--normals", scene / normals,
            "--intrinsics", scene / "intrinsics.json",
            "--output", out, "--theta-c", "3.5", *flag,
        )
        assert rc == 0
        depths.append(out.read_bytes())
    assert depths[0] == depths[1]


def test_pixel_baseline_flag(tmp_path, capsys):
    scene = synth_scene(tmp_path, "sphere_patch", size=32)
    depth = tmp_path / "depth.pfm"
    rc = run_cli(
        "integrate", "--normals", scene / "normals.pfm",
        "--intrinsics", scene / "intrinsics.json",
        "--output", depth, "--pixel-baseline",
    )
    assert rc == 0
    capsys.readouterr()
    rc = run_cli("eval", "--pred", depth, "--gt", scene / "depth_gt.pfm",
                 "--mask", scene / "mask.png")
    assert rc == 0
    assert json.loads(capsys.readouterr().out)["relative_error"] < 1e-3


def test_gauge_depth_flag(tmp_path):
    scene = synth_scene(tmp_path, "fronto_plane", size=24)
    depth = tmp_path / "depth.pfm"
    rc = run_cli(
        "integrate", "--normals", scene / "normals.pfm",
        "--intrinsics", scene / "intrinsics.json",
        "--output", depth, "--gauge-depth", "2.0", "--reweighting", "off",
    )
    assert rc == 0
    pred, mask = fileio.read_depth(depth)
    assert np.median(pred[mask]) == pytest.approx(2.0, rel=1e-6)


def test_help_available(capsys):
    for args in (["--help"], ["integrate", "--help"], ["synth", "--help"],
                 ["decompose", "--help"], ["eval", "--help"]):
        assert main(args) == 0
        assert "usage" in capsys.readouterr().out.lower()


def test_run_config_conversions():
    from normint.cli import RunConfig

    cfg = RunConfig(theta_c_deg=3.5, merge_freq=5, workers=2)
    assert cfg.theta_c == pytest.approx(np.deg2rad(3.5))
    assert RunConfig(theta_c_deg=None).theta_c is None
    settings = cfg.solve_settings()
    assert settings.freq_merging == 5 and settings.worker_count == 2
    params = cfg.weight_params()
    assert params.reweighting_mode == "soft"
    with pytest.raises(ValueError):
        RunConfig(reweighting="never").weight_params()
    with pytest.raises(ValueError):
        RunConfig(merge_freq=0).solve_settings()


def test_workers_env_default(monkeypatch):
    from normint.cli import build_parser

    monkeypatch.setenv("NORMINT_WORKERS", "7")
    args = build_parser().parse_args(
        ["integrate", "--normals", "n", "--intrinsics", "i", "--output", "o"]
    )
    assert args.workers == 7
    monkeypatch.setenv("NORMINT_WORKERS", "junk")
    args = build_parser().parse_args(
        ["integrate", "--normals", "n", "--intrinsics", "i", "--output", "o"]
    )
    assert args.workers == 4


def test_noise_flag_is_seeded(tmp_path):
    a = synth_scene(tmp_path / "a", "sphere_patch", size=24,
                    extra=("--noise-sigma-deg", "1.0", "--seed", "5"))
    b = synth_scene(tmp_path / "b", "sphere_patch", size=24,
                    extra=("--noise-sigma-deg", "1.0", "--seed", "5"))
    assert (a / "normals.pfm").read_bytes() == (b / "normals.pfm").read_bytes()
