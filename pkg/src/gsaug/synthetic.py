"""Procedural scenes, camera rigs and asset files for demos and tests.

Nothing here is fit for training real detectors; the point is to have
small, fully controlled inputs whose geometry is known in closed form,
so rendering and placement behaviour can be checked against it.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .core import (
    SH_C0,
    GaussianSet,
    RigidNode,
    RigidTransform,
    SceneGraph,
    StaticNode,
    coeff_count,
)
from .placement import BevMap
from .render import Camera
from .sceneio import AnnotationRecord, write_bundle, write_gaussians


def _random_quats(rng: np.random.Generator, n: int) -> np.ndarray:
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 0] < 0.0] *= -1.0
    return q


def _sh_from_rgb(rgb: np.ndarray, degree: int = 0,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """Degree-0 coefficients reproducing `rgb` exactly; higher bands get
    small noise so view dependence is present but mild."""
    rgb = np.atleast_2d(np.asarray(rgb, dtype=np.float64))
    k = coeff_count(degree)
    sh = np.zeros((rgb.shape[0], k, 3))
    sh[:, 0, :] = (rgb - 0.5) / SH_C0
    if degree > 0 and rng is not None:
        sh[:, 1:, :] = rng.normal(scale=0.02, size=(rgb.shape[0], k - 1, 3))
    return sh


def _surface_cloud(rng: np.random.Generator, size, count: int,
                   *, skip_bottom: bool = True):
    """Points on the surface of a canonical box: x spans the length,
    y the width, z from 0 to the height."""
    w, l, h = float(size[0]), float(size[1]), float(size[2])
    # (axis, sign, area); bottom face usually invisible
    faces = [(0, 1, w * h), (0, -1, w * h), (1, 1, l * h), (1, -1, l * h), (2, 1, l * w)]
    if not skip_bottom:
        faces.append((2, -1, l * w))
    areas = np.array([f[2] for f in faces])
    pick = rng.choice(len(faces), size=count, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, size=(count, 3))
    pts = u * np.array([l, w, h])
    for i, (axis, sign, _) in enumerate(faces):
        sel = pick == i
        extent = (l, w, h)[axis]
        pts[sel, axis] = sign * 0.5 * extent
    pts[:, 2] += 0.5 * h  # shift z into [0, h]
    return pts


def _cloud_set(rng: np.random.Generator, means: np.ndarray, rgb: np.ndarray,
               *, scale: float = 0.12, degree: int = 0,
               opacity_range=(0.75, 0.95)) -> GaussianSet:
    n = means.shape[0]
    scales = rng.uniform(0.6 * scale, 1.4 * scale, size=(n, 3))
    return GaussianSet(
        opacities=rng.uniform(*opacity_range, size=n),
        means=means,
        quats=_random_quats(rng, n),
        scales=scales,
        sh_coeffs=_sh_from_rgb(rgb, degree, rng),
    )


def make_camera_ring(num_cameras: int = 6, width: int = 96, height: int = 64,
                     *, center=(0.0, 0.0, 1.8), pitch_deg: float = 12.0,
                     focal: float | None = None) -> list[Camera]:
    """Surround rig: cameras share one mount point, yaw evenly spaced,
    all pitched down by the same angle."""
    if focal is None:
        focal = 0.625 * width
    c = np.asarray(center, dtype=np.float64)
    out = []
    pitch = np.deg2rad(pitch_deg)
    up = np.array([0.0, 0.0, 1.0])
    for i in range(num_cameras):
        yaw = 2.0 * np.pi * i / num_cameras
        fwd = np.array([
            np.cos(pitch) * np.cos(yaw),
            np.cos(pitch) * np.sin(yaw),
            -np.sin(pitch),
        ])
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])  # world -> camera rows
        ext = np.zeros((3, 4))
        ext[:, :3] = rot
        ext[:, 3] = -rot @ c
        out.append(Camera(
            fx=focal, fy=focal, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
            width=width, height=height, extrinsics=ext, name=f"cam{i:02d}",
        ))
    return out


_DEMO_VEHICLES = [
    # (x, y, yaw, size (w, l, h), category, speed m/s)
    (-15.0, -3.0, 0.0, (1.9, 4.4, 1.5), "car", 6.0),
    (-7.0, -3.0, 0.0, (1.8, 4.2, 1.4), "car", 5.0),
    (8.0, -3.0, 0.0, (2.4, 7.0, 2.8), "truck", 4.0),
    (14.0, 3.0, np.pi, (1.9, 4.5, 1.5), "car", 6.0),
    (5.0, 3.0, np.pi, (2.3, 6.5, 2.6), "truck", 3.0),
    (-11.0, 3.0, np.pi, (1.8, 4.3, 1.4), "car", 5.0),
    (3.0, -12.0, np.pi / 2, (1.9, 4.4, 1.5), "car", 6.0),
    (-3.0, 11.0, 3 * np.pi / 2, (1.8, 4.2, 1.4), "car", 5.0),
]

_VEHICLE_COLORS = [
    (0.75, 0.15, 0.12), (0.15, 0.25, 0.7), (0.85, 0.8, 0.75), (0.2, 0.6, 0.25),
    (0.9, 0.85, 0.2), (0.5, 0.5, 0.55), (0.1, 0.1, 0.12), (0.8, 0.45, 0.1),
]


def _demo_ground(rng: np.random.Generator) -> GaussianSet:
    xs = np.arange(-20.0, 20.0 + 1e-9, 1.25)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    means = np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=1)
    # leave a hole under the camera rig, as the ego vehicle would in a
    # real capture; a surface splat right below the pinhole covers the
    # whole image after projection and swamps every depth estimate
    means = means[np.hypot(means[:, 0], means[:, 1]) > 1.6]
    on_road = (np.abs(means[:, 0]) <= 8.0) | (np.abs(means[:, 1]) <= 8.0)
    rgb = np.where(on_road[:, None],
                   np.array([0.32, 0.32, 0.34]), np.array([0.35, 0.45, 0.3]))
    rgb = rgb + rng.uniform(-0.03, 0.03, size=rgb.shape)
    n = means.shape[0]
    scales = np.column_stack([
        rng.uniform(0.55, 0.75, size=n),
        rng.uniform(0.55, 0.75, size=n),
        np.full(n, 0.02),
    ])
    return GaussianSet(
        opacities=np.full(n, 0.95),
        means=means,
        quats=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        scales=scales,
        sh_coeffs=_sh_from_rgb(rgb),
    )


def _demo_buildings(rng: np.random.Generator) -> GaussianSet:
    parts = []
    for cx, cy in [(14.0, 14.0), (-14.0, 14.0), (14.0, -14.0), (-14.0, -14.0)]:
        pts = _surface_cloud(rng, (8.0, 8.0, 6.0), 48)
        pts[:, 0] += cx
        pts[:, 1] += cy
        tone = rng.uniform(0.45, 0.65)
        rgb = np.tile([tone, tone * 0.95, tone * 0.9], (48, 1))
        parts.append(_cloud_set(rng, pts, rgb, scale=0.5))
    return GaussianSet.concatenate(parts)


def make_demo_bundle(directory: str | Path, *, seed: int = 7,
                     num_cameras: int = 6, width: int = 96, height: int = 64,
                     num_timesteps: int = 2,
                     frame_rate_hz: float = 10.0) -> Path:
    """Small crossroads scene: flat ground, four corner buildings, eight
    moving vehicles, a surround camera rig and a cross-shaped road raster.
    Returns the bundle.json path."""
    rng = np.random.default_rng(seed)
    statics = (
        StaticNode(node_id=0, label="ground", primitives=_demo_ground(rng)),
        StaticNode(node_id=1, label="buildings", primitives=_demo_buildings(rng)),
    )

    dt = 1.0 / frame_rate_hz
    rigids = []
    records = []
    for i, (x, y, yaw, size, category, speed) in enumerate(_DEMO_VEHICLES):
        pts = _surface_cloud(rng, size, 60)
        rgb = np.tile(_VEHICLE_COLORS[i % len(_VEHICLE_COLORS)], (60, 1))
        rgb = np.clip(rgb + rng.uniform(-0.05, 0.05, size=rgb.shape), 0.02, 0.98)
        prims = _cloud_set(rng, pts, rgb, scale=0.16)
        heading = np.array([np.cos(yaw), np.sin(yaw)])
        transforms = {}
        for t in range(num_timesteps):
            pos = np.array([x, y]) + heading * speed * dt * t
            transforms[t] = RigidTransform.from_yaw(yaw, (pos[0], pos[1], 0.0))
            records.append(AnnotationRecord(
                instance_id=f"veh:{i:03d}",
                category=category,
                translation=np.array([pos[0], pos[1], size[2] / 2.0]),
                size=np.asarray(size, dtype=np.float64),
                yaw=yaw,
                source="real",
                timestep=t,
            ))
        rigids.append(RigidNode(
            node_id=100 + i, label=category, primitives=prims,
            transforms=transforms,
        ))

    scene = SceneGraph(
        static_nodes=statics,
        rigid_nodes=tuple(rigids),
        num_timesteps=num_timesteps,
    )
    cameras = make_camera_ring(num_cameras, width, height)

    cell = 0.25
    n_cells = int(round(40.0 / cell))
    centers = -20.0 + (np.arange(n_cells) + 0.5) * cell
    yy, xx = np.meshgrid(centers, centers, indexing="ij")  # rows are y, columns x
    road = (np.abs(xx) <= 8.0) | (np.abs(yy) <= 8.0)
    road &= np.hypot(xx, yy) > 3.0  # ego vehicle occupies the rig cells
    bev = BevMap(raster=road, origin_x=-20.0, origin_y=-20.0,
                 cell_size=cell, ground_z=0.0)

    return write_bundle(
        directory, scene, cameras, records, bev,
        frame_rate_hz=frame_rate_hz,
        annotated_timesteps=tuple(range(num_timesteps)),
    )


def make_asset_library(directory: str | Path, *, seed: int = 11,
                       num_cars: int = 6, num_trucks: int = 4,
                       prims_per_asset: int = 100) -> Path:
    """Write standalone agent files plus their manifest; returns the
    manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    manifest: dict[str, list[str]] = {}
    specs = [("car", num_cars, (1.7, 2.0), (4.2, 4.8), (1.4, 1.7)),
             ("truck", num_trucks, (2.2, 2.5), (6.5, 8.0), (2.5, 3.0))]
    for category, count, w_range, l_range, h_range in specs:
        files = []
        for i in range(count):
            size = (rng.uniform(*w_range), rng.uniform(*l_range), rng.uniform(*h_range))
            pts = _surface_cloud(rng, size, prims_per_asset, skip_bottom=False)
            rgb = np.clip(rng.uniform(0.1, 0.9, size=3)
                          + rng.uniform(-0.05, 0.05, size=(prims_per_asset, 3)),
                          0.02, 0.98)
            prims = _cloud_set(rng, pts, rgb, scale=0.1, degree=1)
            name = f"{category}_{i:02d}.gspl"
            scene = SceneGraph(
                static_nodes=(StaticNode(node_id=0, label=category, primitives=prims),),
                rigid_nodes=(),
                num_timesteps=1,
            )
            write_gaussians(directory / name, scene)
            files.append(name)
        manifest[category] = files
    path = directory / "manifest.json"
    path.write_text(json.dumps({"assets": manifest}, indent=2) + "\n")
    return path


def make_bulk_scene(num_primitives: int = 100_000, *, seed: int = 3,
                    num_timesteps: int = 3) -> SceneGraph:
    """Large mixed-degree scene for throughput and round-trip checks."""
    rng = np.random.default_rng(seed)
    shares = [(0, 0.40), (1, 0.25), (2, 0.20), (3, 0.10)]
    counted = [int(num_primitives * f) for _, f in shares]
    rigid_count = num_primitives - sum(counted)

    def block(n, degree):
        sh = rng.normal(scale=0.3, size=(n, coeff_count(degree), 3))
        return GaussianSet(
            opacities=rng.uniform(0.02, 0.98, size=n),
            means=rng.uniform(-50.0, 50.0, size=(n, 3)),
            quats=_random_quats(rng, n),
            scales=np.exp(rng.normal(loc=-1.5, scale=0.4, size=(n, 3))),
            sh_coeffs=sh,
        )

    statics = tuple(
        StaticNode(node_id=i, label=f"chunk-d{deg}", primitives=block(n, deg))
        for i, ((deg, _), n) in enumerate(zip(shares, counted))
    )
    transforms = {
        t: RigidTransform.from_yaw(0.1 * t, (0.5 * t, -0.25 * t, 0.0))
        for t in range(num_timesteps)
    }
    rigid = RigidNode(
        node_id=1000, label="mover", primitives=block(rigid_count, 1),
        transforms=transforms,
    )
    return SceneGraph(static_nodes=statics, rigid_nodes=(rigid,),
                      num_timesteps=num_timesteps)


def make_run_config(path: str | Path, bundles, assets, *,
                    out_dir: str = "out", **options) -> Path:
    """Write a run config whose paths are stored relative to the config
    file, so the file can be moved together with its inputs."""
    path = Path(path)
    base = path.parent
    obj = {
        "bundles": [os.path.relpath(Path(b), base) for b in bundles],
        "out_dir": out_dir,
        "seed": int(options.pop("seed", 0)),
    }
    if assets is not None:
        obj["assets"] = os.path.relpath(Path(assets), base)
    obj.update(options)
    path.write_text(json.dumps(obj, indent=2) + "\n")
    return path
