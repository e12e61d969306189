"""Batch pipeline: config files, frame jobs, manifests.

A run fans out over (bundle, copy, timestep) frame jobs; each job places
agents with a frame-local RNG seeded from (seed, bundle, copy, timestep),
renders every requested camera and writes images plus annotations into a
frame-unique directory.  The manifest records every placement with enough
detail to re-validate it.  Wall-clock timings go to a separate
timing.json so the manifest itself stays byte-identical across runs and
worker counts.
"""

from __future__ import annotations

import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .assets import AssetLibrary
from .errors import ConfigError
from .placement import MODE_SCORER_MAX, PlacementPolicy, place_agents
from .render import _resolve_workers, render
from .sceneio import LoadedScene, load_scene, write_annotations, write_image

_CONFIG_KEYS = {
    "bundle", "bundles", "assets", "out_dir", "seed", "mode", "agents_per_camera",
    "seeds", "visibility_threshold", "max_attempts", "collision_margin",
    "elevation_neighbors", "occlusion_penalty", "occlusion_containment",
    "copies", "image_format", "cameras", "timesteps", "background",
}


@dataclass(frozen=True)
class RunConfig:
    """Validated run settings; `echo` keeps the merged raw values (minus
    out_dir) for reproducible embedding into the manifest."""

    bundles: tuple
    assets: Path | None
    out_dir: Path
    policy: PlacementPolicy
    copies: int
    image_format: str
    cameras: tuple | None
    timesteps: tuple | None
    background: tuple
    echo: dict

    @staticmethod
    def from_json(path: str | Path, overrides: dict | None = None) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"missing config file {path}") from None
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON: {err}") from err
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        merged = dict(raw)
        for k, v in (overrides or {}).items():
            if v is not None:
                merged[k] = v
        unknown = set(merged) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        return RunConfig.from_dict(merged, base_dir=path.parent)

    @staticmethod
    def from_dict(merged: dict, base_dir: str | Path = ".") -> "RunConfig":
        base_dir = Path(base_dir)
        if "seed" not in merged:
            raise ConfigError("config must set 'seed' (reproducibility contract)")
        try:
            seed = int(merged["seed"])
        except (TypeError, ValueError):
            raise ConfigError(f"seed must be an integer, got {merged['seed']!r}") from None

        bundle_list = merged.get("bundles")
        if bundle_list is None and "bundle" in merged:
            bundle_list = [merged["bundle"]]
        if not bundle_list or not isinstance(bundle_list, list):
            raise ConfigError("config must list at least one scene bundle under 'bundles'")
        if "out_dir" not in merged:
            raise ConfigError("config must set 'out_dir'")

        mode = str(merged.get("mode", "random-pose"))
        if mode == MODE_SCORER_MAX:
            raise ConfigError(
                "mode scorer-max needs a scorer callback and is only reachable "
                "through the library API"
            )
        try:
            policy = PlacementPolicy(
                mode=mode,
                rng_seed=seed,
                agents_per_camera=int(merged.get("agents_per_camera", 1)),
                seeds_per_search=int(merged.get("seeds", 16)),
                visibility_threshold=float(merged.get("visibility_threshold", 0.25)),
                max_attempts=int(merged.get("max_attempts", 64)),
                collision_margin=float(merged.get("collision_margin", 0.1)),
                elevation_neighbors=int(merged.get("elevation_neighbors", 3)),
                occlusion_penalty=float(merged.get("occlusion_penalty", 1.0)),
                occlusion_containment=float(merged.get("occlusion_containment", 0.95)),
            )
        except (TypeError, ValueError) as err:
            raise ConfigError(f"bad policy field: {err}") from None

        copies = int(merged.get("copies", 1))
        if copies < 1:
            raise ConfigError("copies must be >= 1")
        image_format = str(merged.get("image_format", "ppm"))
        if image_format not in ("ppm", "png"):
            raise ConfigError(f"image_format must be ppm or png, got {image_format!r}")
        cameras = merged.get("cameras")
        if cameras is not None:
            cameras = tuple(int(c) for c in cameras)
        timesteps = merged.get("timesteps")
        if timesteps is not None:
            timesteps = tuple(int(t) for t in timesteps)
        background = tuple(float(v) for v in merged.get("background", (0.5, 0.5, 0.5)))
        if len(background) != 3 or any(not (0.0 <= v <= 1.0) for v in background):
            raise ConfigError("background must be 3 values in [0, 1]")

        echo = {k: merged[k] for k in sorted(merged) if k != "out_dir"}
        assets = merged.get("assets")
        return RunConfig(
            bundles=tuple(base_dir / b for b in bundle_list),
            assets=(base_dir / assets) if assets is not None else None,
            out_dir=base_dir / str(merged["out_dir"]),
            policy=policy,
            copies=copies,
            image_format=image_format,
            cameras=cameras,
            timesteps=timesteps,
            background=background,
            echo=echo,
        )


@dataclass(frozen=True)
class RunReport:
    command: str
    manifest: dict
    manifest_path: Path | None
    out_dir: Path
    frames: int
    accepted: int
    warning_count: int


def _select_cameras(loaded: LoadedScene, subset: tuple | None):
    cams = list(loaded.cameras)
    if subset is None:
        return list(range(len(cams))), cams
    for i in subset:
        if not 0 <= i < len(cams):
            raise ConfigError(f"camera index {i} out of range (bundle has {len(cams)})")
    return list(subset), [cams[i] for i in subset]


def _select_timesteps(loaded: LoadedScene, subset: tuple | None) -> list[int]:
    if subset is None:
        return list(loaded.bundle.annotated_timesteps)
    for t in subset:
        if not 0 <= t < loaded.scene.num_timesteps:
            raise ConfigError(
                f"timestep {t} out of range (scene has {loaded.scene.num_timesteps})"
            )
    return list(subset)


def _bundle_stem(path: Path) -> str:
    # bundle.json files usually sit in a directory named after the scene
    return path.parent.name if path.name == "bundle.json" else path.stem


def _placement_entry(placed) -> dict:
    p = placed.placement
    return {
        "instance_id": placed.instance_id,
        "asset_id": placed.asset_id,
        "category": placed.label,
        "camera_index": placed.camera_index,
        "node_id": placed.node_id,
        "x": p.x,
        "y": p.y,
        "z": p.z,
        "yaw": p.yaw,
        "attempts": p.attempts,
        "visibility": list(p.visibility),
        "box": {
            "translation": list(p.box.center.tolist()),
            "size": list(p.box.size.tolist()),
            "yaw": p.box.yaw,
        },
        "score": placed.score,
        "candidate_scores": (
            None if placed.candidate_scores is None else list(placed.candidate_scores)
        ),
    }


def run_augment(config: RunConfig) -> RunReport:
    """Place agents and render augmented frames for every (bundle, copy,
    timestep) job; returns the report whose manifest was written."""
    if config.assets is None:
        raise ConfigError("augment needs an 'assets' manifest in the config")
    library = AssetLibrary.load(config.assets)
    loaded = [load_scene(b) for b in config.bundles]
    config.out_dir.mkdir(parents=True, exist_ok=True)

    jobs = []
    for bi, scene_data in enumerate(loaded):
        cam_ids, cams = _select_cameras(scene_data, config.cameras)
        steps = _select_timesteps(scene_data, config.timesteps)
        for copy in range(config.copies):
            for t in steps:
                jobs.append((bi, scene_data, cam_ids, cams, copy, t))

    def run_frame(job):
        bi, scene_data, cam_ids, cams, copy, t = job
        started = time.perf_counter()
        rng = np.random.default_rng([config.policy.rng_seed, bi, copy, t])
        result = place_agents(
            scene_data.scene,
            cams,
            library.agents,
            config.policy,
            scene_data.bev,
            [r.to_box() for r in scene_data.records_at(t)],
            rng,
            timestep=t,
        )
        stem = _bundle_stem(config.bundles[bi])
        frame_dir = config.out_dir / stem / f"aug_c{copy:02d}_t{t:04d}"
        frame_dir.mkdir(parents=True, exist_ok=True)
        images = []
        for ci, cam in zip(cam_ids, cams):
            img = render(result.scene, cam, t, background=config.background)
            name = f"cam{ci:02d}.{config.image_format}"
            write_image(img, frame_dir / name, config.image_format)
            images.append(f"{stem}/{frame_dir.name}/{name}")
        ann_rel = f"{stem}/{frame_dir.name}/annotations.json"
        write_annotations(
            result.placed, scene_data.records_at(t), config.out_dir / ann_rel, timestep=t
        )
        entry = {
            "bundle": stem,
            "bundle_index": bi,
            "copy": copy,
            "timestep": t,
            "accepted": len(result.placed),
            "warnings": list(result.warnings),
            "placements": [_placement_entry(p) for p in result.placed],
            "images": images,
            "annotations": ann_rel,
        }
        return entry, time.perf_counter() - started

    workers = _resolve_workers(None)
    if workers == 1 or len(jobs) <= 1:
        outcomes = [run_frame(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_frame, jobs))  # order follows job order

    entries = [e for e, _ in outcomes]
    manifest = {
        "command": "augment",
        "config": config.echo,
        "frames": entries,
        "totals": {
            "frames": len(entries),
            "accepted": sum(e["accepted"] for e in entries),
            "warnings": sum(len(e["warnings"]) for e in entries),
        },
    }
    manifest_path = config.out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    timing = {
        "frames": [
            {"bundle_index": e["bundle_index"], "copy": e["copy"],
             "timestep": e["timestep"], "seconds": s}
            for e, s in outcomes
        ],
        "total_seconds": sum(s for _, s in outcomes),
    }
    (config.out_dir / "timing.json").write_text(json.dumps(timing, indent=2) + "\n")

    for e in entries:
        for p in e["placements"]:
            vis = max(p["visibility"], default=0.0)
            print(
                f"[augment] bundle={e['bundle']} copy={e['copy']} t={e['timestep']} "
                f"{p['instance_id']} asset={p['asset_id']} cam={p['camera_index']} "
                f"x={p['x']:.3f} y={p['y']:.3f} yaw={p['yaw']:.3f} vis_max={vis:.3f}",
                file=sys.stderr,
            )
        for w in e["warnings"]:
            print(f"[augment] bundle={e['bundle']} warning: {w}", file=sys.stderr)

    return RunReport(
        command="augment",
        manifest=manifest,
        manifest_path=manifest_path,
        out_dir=config.out_dir,
        frames=len(entries),
        accepted=manifest["totals"]["accepted"],
        warning_count=manifest["totals"]["warnings"],
    )


def run_render(config: RunConfig) -> RunReport:
    """Render the unedited scenes (the no-insertion reference path)."""
    loaded = [load_scene(b) for b in config.bundles]
    config.out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for bi, scene_data in enumerate(loaded):
        cam_ids, cams = _select_cameras(scene_data, config.cameras)
        for t in _select_timesteps(scene_data, config.timesteps):
            jobs.append((bi, scene_data, cam_ids, cams, t))

    def run_frame(job):
        bi, scene_data, cam_ids, cams, t = job
        stem = _bundle_stem(config.bundles[bi])
        frame_dir = config.out_dir / stem / f"render_t{t:04d}"
        frame_dir.mkdir(parents=True, exist_ok=True)
        images = []
        for ci, cam in zip(cam_ids, cams):
            img = render(scene_data.scene, cam, t, background=config.background)
            name = f"cam{ci:02d}.{config.image_format}"
            write_image(img, frame_dir / name, config.image_format)
            images.append(f"{stem}/{frame_dir.name}/{name}")
        return {"bundle": stem, "bundle_index": bi, "timestep": t, "images": images}

    workers = _resolve_workers(None)
    if workers == 1 or len(jobs) <= 1:
        entries = [run_frame(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(run_frame, jobs))

    manifest = {
        "command": "render",
        "config": config.echo,
        "frames": entries,
        "totals": {"frames": len(entries)},
    }
    manifest_path = config.out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return RunReport(
        command="render",
        manifest=manifest,
        manifest_path=manifest_path,
        out_dir=config.out_dir,
        frames=len(entries),
        accepted=0,
        warning_count=0,
    )


def validate_run(config: RunConfig) -> dict:
    """Dry-run checks: load every input, probe the output directory."""
    report: dict = {"bundles": [], "ok": True}
    for b in config.bundles:
        scene_data = load_scene(b)
        cam_ids, _ = _select_cameras(scene_data, config.cameras)
        steps = _select_timesteps(scene_data, config.timesteps)
        prims = sum(len(n.primitives) for n in scene_data.scene.static_nodes)
        prims += sum(len(n.primitives) for n in scene_data.scene.rigid_nodes)
        report["bundles"].append(
            {
                "bundle": str(b),
                "cameras": len(scene_data.cameras),
                "selected_cameras": cam_ids,
                "timesteps": steps,
                "primitives": prims,
                "annotations": len(scene_data.annotations),
                "bev_cells": int(scene_data.bev.mask.sum()),
            }
        )
    if config.assets is not None:
        library = AssetLibrary.load(config.assets)
        report["assets"] = {
            "count": len(library),
            "categories": list(library.categories),
        }
    else:
        report["assets"] = None
    try:
        config.out_dir.mkdir(parents=True, exist_ok=True)
        probe = config.out_dir / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as err:
        raise ConfigError(f"output directory not writable: {err}") from err
    report["out_dir"] = str(config.out_dir)
    report["mode"] = config.policy.mode
    return report
