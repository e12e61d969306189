"""Batch pipeline and CLI tests: config parsing, run manifests,
determinism across repeated runs, and process exit codes."""

import json

import numpy as np
import pytest

from gsaug import (
    BevMap,
    ConfigError,
    FormatError,
    SceneGraph,
    StaticNode,
    make_camera_ring,
    make_run_config,
    read_annotations,
    read_ppm,
    write_bundle,
)
from gsaug.cli import main, main_augment, main_render, main_validate
from gsaug.pipeline import RunConfig, run_augment, run_render, validate_run

from util import random_set


def write_config(tmp_path, demo_paths, name="run.json", **options):
    bundle, manifest = demo_paths
    options.setdefault("seed", 7)
    options.setdefault("cameras", [0, 3])
    options.setdefault("timesteps", [0])
    return make_run_config(tmp_path / name, [bundle], manifest,
                           out_dir=options.pop("out_dir", "out"), **options)


# ----------------------------------------------------------------- config


def test_config_requires_core_fields(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"bundles": ["s/bundle.json"], "out_dir": "o"}))
    with pytest.raises(ConfigError, match="seed"):
        RunConfig.from_json(p)
    p.write_text(json.dumps({"seed": 1, "out_dir": "o"}))
    with pytest.raises(ConfigError, match="bundle"):
        RunConfig.from_json(p)
    p.write_text(json.dumps({"seed": 1, "bundles": ["b"]}))
    with pytest.raises(ConfigError, match="out_dir"):
        RunConfig.from_json(p)
    p.write_text(json.dumps({"seed": "twelve", "bundles": ["b"], "out_dir": "o"}))
    with pytest.raises(ConfigError, match="integer"):
        RunConfig.from_json(p)


def test_config_rejects_unknown_keys_and_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 1, "bundles": ["b"], "out_dir": "o",
                             "speling": 2}))
    with pytest.raises(ConfigError, match="speling"):
        RunConfig.from_json(p)
    p.write_text("{oops")
    with pytest.raises(ConfigError, match="JSON"):
        RunConfig.from_json(p)
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="object"):
        RunConfig.from_json(p)
    with pytest.raises(ConfigError, match="missing config"):
        RunConfig.from_json(tmp_path / "absent.json")


def test_config_field_validation(tmp_path):
    base = {"seed": 1, "bundles": ["b"], "out_dir": "o"}
    p = tmp_path / "c.json"

    def cfg(**extra):
        p.write_text(json.dumps({**base, **extra}))
        return RunConfig.from_json(p)

    with pytest.raises(ConfigError, match="library API"):
        cfg(mode="scorer-max")
    with pytest.raises(ConfigError, match="unknown placement mode"):
        cfg(mode="sideways")
    with pytest.raises(ConfigError, match="visibility_threshold"):
        cfg(visibility_threshold=1.5)
    with pytest.raises(ConfigError, match="bad policy field"):
        cfg(max_attempts="lots")
    with pytest.raises(ConfigError, match="copies"):
        cfg(copies=0)
    with pytest.raises(ConfigError, match="image_format"):
        cfg(image_format="jpeg")
    with pytest.raises(ConfigError, match="background"):
        cfg(background=[0.5, 0.5])
    with pytest.raises(ConfigError, match="background"):
        cfg(background=[0.5, 0.5, 1.5])


def test_config_paths_resolve_relative_to_file(tmp_path):
    sub = tmp_path / "configs"
    sub.mkdir()
    p = sub / "c.json"
    p.write_text(json.dumps({
        "seed": 3, "bundle": "../scenes/a/bundle.json", "assets": "assets.json",
        "out_dir": "runs/x",
    }))
    config = RunConfig.from_json(p)
    assert config.bundles == (sub / "../scenes/a/bundle.json",)
    assert config.assets == sub / "assets.json"
    assert config.out_dir == sub / "runs/x"
    # single 'bundle' key expands into the list form
    assert len(config.bundles) == 1


def test_config_overrides_and_echo(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 3, "bundles": ["b"], "out_dir": "o",
                             "copies": 2}))
    config = RunConfig.from_json(
        p, {"copies": 5, "seed": None, "out_dir": "elsewhere"})
    assert config.copies == 5  # override wins
    assert config.policy.rng_seed == 3  # None override is skipped
    assert config.out_dir == tmp_path / "elsewhere"
    assert "out_dir" not in config.echo  # manifest stays machine-independent
    assert config.echo["copies"] == 5
    assert list(config.echo) == sorted(config.echo)


def test_config_policy_defaults(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 9, "bundles": ["b"], "out_dir": "o"}))
    config = RunConfig.from_json(p)
    policy = config.policy
    assert policy.mode == "random-pose"
    assert policy.agents_per_camera == 1
    assert policy.seeds_per_search == 16
    assert policy.visibility_threshold == 0.25
    assert config.background == (0.5, 0.5, 0.5)
    assert config.cameras is None and config.timesteps is None


# ------------------------------------------------------------ validate_run


def test_validate_run_report(tmp_path, demo_paths):
    cfg = write_config(tmp_path, demo_paths)
    report = validate_run(RunConfig.from_json(cfg))
    assert report["ok"] is True
    (entry,) = report["bundles"]
    assert entry["cameras"] == 6
    assert entry["selected_cameras"] == [0, 3]
    assert entry["timesteps"] == [0]
    assert entry["primitives"] > 0
    assert entry["annotations"] == 16  # 8 vehicles x 2 timesteps
    assert entry["bev_cells"] > 0
    assert report["assets"] == {"count": 10, "categories": ["car", "truck"]}
    assert report["mode"] == "random-pose"
    assert (tmp_path / "out").is_dir()  # probe created it


def test_validate_run_without_assets(tmp_path, demo_paths):
    bundle, _ = demo_paths
    cfg = make_run_config(tmp_path / "c.json", [bundle], None, seed=1)
    report = validate_run(RunConfig.from_json(cfg))
    assert report["assets"] is None


def test_selection_range_errors(tmp_path, demo_paths):
    cfg = write_config(tmp_path, demo_paths, cameras=[0, 99])
    with pytest.raises(ConfigError, match="camera index"):
        validate_run(RunConfig.from_json(cfg))
    cfg2 = write_config(tmp_path, demo_paths, name="t.json",
                        cameras=[0], timesteps=[5])
    with pytest.raises(ConfigError, match="timestep"):
        validate_run(RunConfig.from_json(cfg2))


# ------------------------------------------------------------------ render


def test_run_render_outputs_and_determinism(tmp_path, demo_paths):
    cfg_a = write_config(tmp_path, demo_paths, name="a.json", out_dir="out_a")
    cfg_b = write_config(tmp_path, demo_paths, name="b.json", out_dir="out_b")
    rep_a = run_render(RunConfig.from_json(cfg_a))
    rep_b = run_render(RunConfig.from_json(cfg_b))

    assert rep_a.command == "render" and rep_a.frames == 1
    manifest = json.loads(rep_a.manifest_path.read_text())
    assert manifest == rep_a.manifest
    (frame,) = manifest["frames"]
    assert frame["timestep"] == 0
    assert [i.rsplit("/", 1)[1] for i in frame["images"]] == \
        ["cam00.ppm", "cam03.ppm"]
    for rel in frame["images"]:
        assert (rep_a.out_dir / rel).is_file()

    # identical bytes across runs: manifest and every image
    assert rep_a.manifest_path.read_bytes() == rep_b.manifest_path.read_bytes()
    for rel in frame["images"]:
        assert (rep_a.out_dir / rel).read_bytes() == \
            (rep_b.out_dir / rel).read_bytes()


# ----------------------------------------------------------------- augment


def test_run_augment_structure(tmp_path, demo_paths, capsys):
    cfg = write_config(tmp_path, demo_paths, agents_per_camera=1, seeds=4)
    report = run_augment(RunConfig.from_json(cfg))
    assert report.command == "augment"
    assert report.frames == 1
    assert report.accepted >= 1
    manifest = json.loads(report.manifest_path.read_text())
    (frame,) = manifest["frames"]
    assert frame["accepted"] == len(frame["placements"])
    for rel in frame["images"]:
        assert (report.out_dir / rel).is_file()
    recs = read_annotations(report.out_dir / frame["annotations"])
    inserted = [r for r in recs if r.source == "inserted"]
    real = [r for r in recs if r.source == "real"]
    assert len(inserted) == frame["accepted"]
    assert len(real) == 8  # demo vehicles at the chosen timestep
    by_id = {r.instance_id: r for r in inserted}
    for p in frame["placements"]:
        rec = by_id[p["instance_id"]]
        assert rec.category == p["category"]
        np.testing.assert_array_equal(rec.translation, p["box"]["translation"])
        assert rec.yaw == p["box"]["yaw"]
        assert p["attempts"] >= 1
        assert max(p["visibility"]) >= 0.25
    err = capsys.readouterr().err
    assert err.count("[augment]") >= report.accepted
    assert (report.out_dir / "timing.json").is_file()
    timing = json.loads((report.out_dir / "timing.json").read_text())
    assert len(timing["frames"]) == 1 and timing["total_seconds"] > 0


def test_run_augment_deterministic_across_runs(tmp_path, demo_paths):
    cfg_a = write_config(tmp_path, demo_paths, name="a.json", out_dir="a",
                         seeds=4)
    cfg_b = write_config(tmp_path, demo_paths, name="b.json", out_dir="b",
                         seeds=4)
    rep_a = run_augment(RunConfig.from_json(cfg_a))
    rep_b = run_augment(RunConfig.from_json(cfg_b))
    assert rep_a.manifest_path.read_bytes() == rep_b.manifest_path.read_bytes()
    for frame in rep_a.manifest["frames"]:
        for rel in frame["images"] + [frame["annotations"]]:
            assert (rep_a.out_dir / rel).read_bytes() == \
                (rep_b.out_dir / rel).read_bytes()


def empty_road_bundle(tmp_path, rng):
    """A valid bundle whose BEV raster has no drivable cells at all."""
    gs = random_set(rng, 30, center=(4.0, 0.0, 1.0))
    scene = SceneGraph((StaticNode(0, "bg", gs),), (), num_timesteps=1)
    cams = make_camera_ring(2, width=32, height=24)
    bev = BevMap(raster=np.zeros((16, 16), dtype=np.uint8),
                 origin_x=-4.0, origin_y=-4.0, cell_size=0.5)
    return write_bundle(tmp_path / "noroad", scene, cams, [], bev,
                        annotated_timesteps=(0,))


def test_augment_without_placements_matches_render(tmp_path, demo_paths, rng):
    bundle = empty_road_bundle(tmp_path, rng)
    _, manifest = demo_paths
    cfg_aug = make_run_config(tmp_path / "aug.json", [bundle], manifest,
                              out_dir="aug", seed=5)
    cfg_ren = make_run_config(tmp_path / "ren.json", [bundle], manifest,
                              out_dir="ren", seed=5)
    rep_aug = run_augment(RunConfig.from_json(cfg_aug))
    rep_ren = run_render(RunConfig.from_json(cfg_ren))
    assert rep_aug.accepted == 0
    assert rep_aug.warning_count >= 2  # one per camera
    (frame,) = rep_aug.manifest["frames"]
    (ref,) = rep_ren.manifest["frames"]
    for rel_a, rel_r in zip(frame["images"], ref["images"]):
        np.testing.assert_array_equal(read_ppm(rep_aug.out_dir / rel_a),
                                      read_ppm(rep_ren.out_dir / rel_r))


def test_augment_requires_assets(tmp_path, demo_paths):
    bundle, _ = demo_paths
    cfg = make_run_config(tmp_path / "c.json", [bundle], None, seed=1)
    with pytest.raises(ConfigError, match="assets"):
        run_augment(RunConfig.from_json(cfg))


def test_augment_copies_fan_out(tmp_path, demo_paths):
    cfg = write_config(tmp_path, demo_paths, copies=2, seeds=2)
    report = run_augment(RunConfig.from_json(cfg))
    assert report.frames == 2
    frames = report.manifest["frames"]
    assert [f["copy"] for f in frames] == [0, 1]
    # different copies draw from different frame seeds
    p0 = [(p["x"], p["y"]) for p in frames[0]["placements"]]
    p1 = [(p["x"], p["y"]) for p in frames[1]["placements"]]
    assert p0 != p1


def test_augment_bad_bundle_path_is_format_error(tmp_path, demo_paths):
    _, manifest = demo_paths
    cfg = make_run_config(tmp_path / "c.json", [tmp_path / "ghost/bundle.json"],
                          manifest, seed=1)
    with pytest.raises(FormatError):
        run_augment(RunConfig.from_json(cfg))


# --------------------------------------------------------------------- CLI


def test_cli_validate_and_render_exit_zero(tmp_path, demo_paths, capsys):
    cfg = write_config(tmp_path, demo_paths, out_dir="cli_out")
    assert main_validate(["--config", str(cfg)]) == 0
    parsed = json.loads(capsys.readouterr().out)
    assert parsed["ok"] is True
    assert main_render(["--config", str(cfg)]) == 0
    assert "render: 1 frames" in capsys.readouterr().out


def test_cli_augment_with_overrides(tmp_path, demo_paths, capsys):
    cfg = write_config(tmp_path, demo_paths, seeds=2)
    code = main_augment(["--config", str(cfg), "--copies", "2",
                         "--seed", "21", "--out", str(tmp_path / "cli_aug")])
    assert code == 0
    out = capsys.readouterr().out
    assert out.startswith("augment: 2 frames")
    manifest = json.loads((tmp_path / "cli_aug" / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 21
    assert manifest["config"]["copies"] == 2
    assert manifest["totals"]["frames"] == 2


def test_cli_domain_errors_exit_two(tmp_path, capsys):
    assert main_render(["--config", str(tmp_path / "nope.json")]) == 2
    assert "error:" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"seed": 1, "bundles": ["b"], "out_dir": "o",
                               "bogus_key": 1}))
    assert main_validate(["--config", str(bad)]) == 2


def test_cli_io_errors_exit_three(tmp_path, demo_paths, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("plain file, not a directory")
    cfg = write_config(tmp_path, demo_paths, name="io.json",
                       out_dir="file/out")
    assert main_render(["--config", str(cfg)]) == 3
    assert "io error:" in capsys.readouterr().err


def test_cli_thread_env_error_exits_two(tmp_path, demo_paths, monkeypatch, capsys):
    cfg = write_config(tmp_path, demo_paths, name="env.json", out_dir="env_out")
    monkeypatch.setenv("GSA_THREADS", "many")
    assert main_render(["--config", str(cfg)]) == 2
    assert "GSA_THREADS" in capsys.readouterr().err


def test_cli_main_dispatch(tmp_path, demo_paths, capsys):
    cfg = write_config(tmp_path, demo_paths, name="d.json", out_dir="disp_out")
    assert main(["render", "--config", str(cfg)]) == 0
    capsys.readouterr()
    assert main(["teleport"]) == 2
    assert "unknown command" in capsys.readouterr().err
    assert main([]) == 2
    assert "usage:" in capsys.readouterr().out
    assert main(["-h"]) == 0


def test_cli_missing_config_flag_exits_two(capsys):
    with pytest.raises(SystemExit) as exc:
        main_render([])
    assert exc.value.code == 2
