"""Bit-exact file formats and scene bundle loading.

Formats (see FORMATS.md for byte-level examples):

* GSPL - binary Gaussian scenes, little-endian, magic "GSPL".  Scalar
  payloads are float32; loading widens to float64 and saving narrows
  back, which is lossless, so load -> save reproduces input bytes.
* cameras.json / annotations.json - plain JSON with fixed key order.
* PPM (P6) - normative image output, 8-bit, rounding half-up from [0, 1].
  PNG is available when Pillow is installed.
* PGM (P5) + JSON sidecar - BEV road raster (values >= 128 are road) with
  world georeferencing.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    GaussianSet,
    RigidNode,
    RigidTransform,
    SceneGraph,
    StaticNode,
)
from .errors import AnnotationError, ConfigError, FormatError
from .placement import BevMap, Box3D
from .render import Camera

GSPL_MAGIC = b"GSPL"
GSPL_VERSION = 1
NODE_STATIC = 0
NODE_RIGID = 1
NODE_MORPHABLE = 2  # reserved type tag; no payload is defined for it


# ---------------------------------------------------------------------------
# GSPL binary scenes


def _prim_dtype(coeff_count: int) -> np.dtype:
    return np.dtype(
        [
            ("opacity", "<f4"),
            ("mean", "<f4", (3,)),
            ("quat", "<f4", (4,)),
            ("scale", "<f4", (3,)),
            ("degree", "u1"),
            ("coeffs", "<f4", (coeff_count, 3)),
        ]
    )


class _Reader:
    """Cursor over an immutable byte buffer with struct helpers."""

    def __init__(self, data: bytes, path: str):
        self.data = data
        self.path = path
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated file (need {n} bytes at {self.pos})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f32s(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float64)


def _read_primitives(r: _Reader, count: int, where: str) -> GaussianSet:
    if count == 0:
        return GaussianSet.empty()
    # the per-record degree byte sits after opacity+mean+quat+scale = 44 bytes
    if r.pos + 44 >= len(r.data):
        raise FormatError(f"{r.path}: truncated file in {where}")
    degree = r.data[r.pos + 44]
    if degree > 3:
        raise FormatError(f"{r.path}: {where}: unsupported SH degree {degree}")
    k = (degree + 1) ** 2
    dt = _prim_dtype(k)
    need = dt.itemsize * count
    raw = np.frombuffer(r.take(need), dtype=dt, count=count)
    if not np.all(raw["degree"] == degree):
        bad = int(np.argmin(raw["degree"] == degree))
        raise FormatError(
            f"{r.path}: {where}: record {bad} declares SH degree {raw['degree'][bad]}, "
            f"node uses {degree}"
        )
    try:
        return GaussianSet(
            opacities=raw["opacity"].astype(np.float64),
            means=raw["mean"].astype(np.float64),
            quats=raw["quat"].astype(np.float64),
            scales=raw["scale"].astype(np.float64),
            sh_coeffs=raw["coeffs"].astype(np.float64),
        )
    except Exception as err:
        raise FormatError(f"{r.path}: {where}: {err}") from err


def read_gaussians(path: str | Path) -> SceneGraph:
    """Parse a GSPL scene file into a validated SceneGraph."""
    path = Path(path)
    r = _Reader(path.read_bytes(), str(path))
    if r.take(4) != GSPL_MAGIC:
        raise FormatError(f"{path}: bad magic (not a GSPL file)")
    version = r.u32()
    if version != GSPL_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    num_timesteps = r.u32()
    node_count = r.u32()
    statics: list[StaticNode] = []
    rigids: list[RigidNode] = []
    for n in range(node_count):
        ntype = r.u8()
        node_id = r.u32()
        label = r.take(r.u16()).decode("utf-8")
        where = f"node {node_id} ({label or 'unnamed'})"
        if ntype == NODE_MORPHABLE:
            raise FormatError(f"{path}: {where}: morphable nodes are reserved, payload undefined")
        if ntype not in (NODE_STATIC, NODE_RIGID):
            raise FormatError(f"{path}: {where}: unknown node type {ntype}")
        poses: dict[int, RigidTransform] = {}
        if ntype == NODE_RIGID:
            for _ in range(r.u32()):
                t = r.u32()
                vals = r.f32s(12)
                try:
                    poses[t] = RigidTransform(vals[:9].reshape(3, 3), vals[9:])
                except Exception as err:
                    raise FormatError(f"{path}: {where}: pose at t={t}: {err}") from err
        prims = _read_primitives(r, r.u32(), where)
        if ntype == NODE_STATIC:
            statics.append(StaticNode(node_id, label, prims))
        else:
            rigids.append(RigidNode(node_id, label, prims, poses))
    if r.pos != len(r.data):
        raise FormatError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    try:
        return SceneGraph(
            static_nodes=tuple(statics),
            rigid_nodes=tuple(rigids),
            num_timesteps=num_timesteps,
        )
    except Exception as err:
        raise FormatError(f"{path}: {err}") from err


def _pack_primitives(prims: GaussianSet) -> bytes:
    n = len(prims)
    if n == 0:
        return b""
    k = prims.sh_coeffs.shape[1]
    degree = prims.degree
    rec = np.empty(n, dtype=_prim_dtype(k))
    rec["opacity"] = prims.opacities.astype("<f4")
    rec["mean"] = prims.means.astype("<f4")
    rec["quat"] = prims.quats.astype("<f4")
    rec["scale"] = prims.scales.astype("<f4")
    rec["degree"] = degree
    rec["coeffs"] = prims.sh_coeffs.astype("<f4")
    return rec.tobytes()


def write_gaussians(path: str | Path, scene: SceneGraph) -> None:
    """Serialize a SceneGraph to GSPL.  Node ids must be unique file-wide."""
    ids = [n.node_id for n in scene.static_nodes] + [n.node_id for n in scene.rigid_nodes]
    if len(ids) != len(set(ids)):
        raise FormatError("node ids must be unique across static and rigid nodes")
    out = bytearray()
    out += GSPL_MAGIC
    out += struct.pack("<III", GSPL_VERSION, scene.num_timesteps,
                       len(scene.static_nodes) + len(scene.rigid_nodes))
    for node in scene.static_nodes:
        label = node.label.encode("utf-8")
        out += struct.pack("<BIH", NODE_STATIC, node.node_id, len(label))
        out += label
        out += struct.pack("<I", len(node.primitives))
        out += _pack_primitives(node.primitives)
    for node in scene.rigid_nodes:
        label = node.label.encode("utf-8")
        out += struct.pack("<BIH", NODE_RIGID, node.node_id, len(label))
        out += label
        out += struct.pack("<I", len(node.transforms))
        for t in sorted(node.transforms):
            tr = node.transforms[t]
            vals = np.concatenate([tr.rotation.ravel(), tr.translation]).astype("<f4")
            out += struct.pack("<I", t) + vals.tobytes()
        out += struct.pack("<I", len(node.primitives))
        out += _pack_primitives(node.primitives)
    Path(path).write_bytes(bytes(out))


# ---------------------------------------------------------------------------
# cameras


def _camera_to_obj(cam: Camera) -> dict:
    return {
        "name": cam.name,
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "width": cam.width,
        "height": cam.height,
        "near_clip": cam.near_clip,
        "rotation": [list(row) for row in cam.extrinsics.rotation.tolist()],
        "translation": list(cam.extrinsics.translation.tolist()),
    }


def _camera_from_obj(obj: dict, where: str) -> Camera:
    try:
        return Camera(
            fx=float(obj["fx"]),
            fy=float(obj["fy"]),
            cx=float(obj["cx"]),
            cy=float(obj["cy"]),
            width=int(obj["width"]),
            height=int(obj["height"]),
            extrinsics=RigidTransform(
                np.asarray(obj["rotation"], dtype=np.float64),
                np.asarray(obj["translation"], dtype=np.float64),
            ),
            near_clip=float(obj.get("near_clip", 0.05)),
            name=str(obj.get("name", "")),
        )
    except KeyError as err:
        raise FormatError(f"{where}: missing camera field {err}") from err
    except (TypeError, ValueError) as err:
        raise FormatError(f"{where}: bad camera field: {err}") from err


def write_cameras(path: str | Path, cameras: Sequence[Camera]) -> None:
    obj = {"cameras": [_camera_to_obj(c) for c in cameras]}
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def read_cameras(path: str | Path) -> tuple[Camera, ...]:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: invalid JSON: {err}") from err
    if not isinstance(obj, dict) or "cameras" not in obj:
        raise FormatError(f"{path}: expected an object with a 'cameras' list")
    return tuple(
        _camera_from_obj(c, f"{path}: camera {i}") for i, c in enumerate(obj["cameras"])
    )


# ---------------------------------------------------------------------------
# annotations


@dataclass(frozen=True)
class AnnotationRecord:
    """One 3D box annotation row.

    source is "real" for boxes that shipped with the scene and "inserted"
    for agents this pipeline placed.
    """

    instance_id: str
    category: str
    translation: np.ndarray
    size: np.ndarray
    yaw: float
    source: str = "real"
    timestep: int = 0

    def __post_init__(self) -> None:
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        s = np.asarray(self.size, dtype=np.float64).reshape(3)
        t.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "size", s)
        if self.source not in ("real", "inserted"):
            raise FormatError(f"annotation source must be 'real' or 'inserted', got {self.source!r}")

    def to_box(self) -> Box3D:
        return Box3D(center=self.translation, size=self.size, yaw=self.yaw, label=self.category)

    @staticmethod
    def from_box(
        box: Box3D, instance_id: str, source: str = "real", timestep: int = 0
    ) -> "AnnotationRecord":
        return AnnotationRecord(
            instance_id=instance_id,
            category=box.label,
            translation=box.center,
            size=box.size,
            yaw=box.yaw,
            source=source,
            timestep=timestep,
        )


def _annotation_to_obj(rec: AnnotationRecord) -> dict:
    return {
        "instance_id": rec.instance_id,
        "category": rec.category,
        "translation": list(rec.translation.tolist()),
        "size": list(rec.size.tolist()),
        "yaw": rec.yaw,
        "source": rec.source,
        "timestep": rec.timestep,
    }


def _annotation_from_obj(obj: dict, where: str) -> AnnotationRecord:
    try:
        return AnnotationRecord(
            instance_id=str(obj["instance_id"]),
            category=str(obj["category"]),
            translation=np.asarray(obj["translation"], dtype=np.float64),
            size=np.asarray(obj["size"], dtype=np.float64),
            yaw=float(obj["yaw"]),
            source=str(obj.get("source", "real")),
            timestep=int(obj.get("timestep", 0)),
        )
    except KeyError as err:
        raise FormatError(f"{where}: missing annotation field {err}") from err
    except (TypeError, ValueError) as err:
        raise FormatError(f"{where}: bad annotation field: {err}") from err


def read_annotations(path: str | Path) -> tuple[AnnotationRecord, ...]:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: invalid JSON: {err}") from err
    if not isinstance(obj, dict) or "annotations" not in obj:
        raise FormatError(f"{path}: expected an object with an 'annotations' list")
    return tuple(
        _annotation_from_obj(a, f"{path}: annotation {i}")
        for i, a in enumerate(obj["annotations"])
    )


def write_annotation_records(path: str | Path, records: Sequence[AnnotationRecord]) -> None:
    seen = set()
    for rec in records:
        key = (rec.instance_id, rec.timestep)  # ids recur across timesteps (tracks)
        if key in seen:
            raise AnnotationError(
                f"duplicate instance_id {rec.instance_id!r} at timestep {rec.timestep}"
            )
        seen.add(key)
    obj = {"annotations": [_annotation_to_obj(r) for r in records]}
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def write_annotations(
    placements: Sequence,
    existing_boxes: Sequence[AnnotationRecord],
    path: str | Path,
    *,
    timestep: int = 0,
) -> tuple[AnnotationRecord, ...]:
    """Emit the merged annotation file for one augmented frame.

    `placements` are PlacedAgent records (their world boxes carry the
    exact inserted geometry); `existing_boxes` are the frame's real
    records, written through unchanged.  Returns what was written.
    """
    records = list(existing_boxes)
    for placed in placements:
        records.append(
            AnnotationRecord.from_box(
                placed.placement.box,
                instance_id=placed.instance_id,
                source="inserted",
                timestep=timestep,
            )
        )
    write_annotation_records(path, records)
    return tuple(records)


# ---------------------------------------------------------------------------
# images


def _quantize(image: np.ndarray) -> np.ndarray:
    """Map float [0, 1] to uint8 by round-half-up."""
    img = np.asarray(image, dtype=np.float64)
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_image(image: np.ndarray, path: str | Path, image_format: str = "ppm") -> None:
    """Write a float RGB image ((H, W, 3), values in [0, 1]).

    PPM (P6, maxval 255) is the normative format and is byte-deterministic;
    PNG needs the optional Pillow dependency.
    """
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ConfigError(f"image must be (H, W, 3), got {img.shape}")
    q = _quantize(img)
    path = Path(path)
    if image_format == "ppm":
        h, w = q.shape[:2]
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(q.tobytes())
    elif image_format == "png":
        try:
            from PIL import Image
        except ImportError:
            raise ConfigError("png output needs the optional Pillow dependency") from None
        Image.fromarray(q, mode="RGB").save(path, format="PNG")
    else:
        raise ConfigError(f"unsupported image format {image_format!r} (ppm or png)")


def _read_netpbm_header(data: bytes, magic: bytes, path: str) -> tuple[int, int, int, int]:
    """Parse 'P5/P6 <w> <h> <maxval>' allowing comments; returns w, h, maxval, offset."""
    if not data.startswith(magic):
        raise FormatError(f"{path}: expected {magic.decode()} header")
    pos = len(magic)
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated header")
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace byte after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: maxval must be 255, got {maxval}")
    return w, h, maxval, pos


def read_ppm(path: str | Path) -> np.ndarray:
    """Read a P6 PPM into a uint8 (H, W, 3) array."""
    path = Path(path)
    data = path.read_bytes()
    w, h, _, off = _read_netpbm_header(data, b"P6", str(path))
    need = w * h * 3
    if len(data) - off < need:
        raise FormatError(f"{path}: pixel payload truncated")
    return np.frombuffer(data[off:off + need], dtype=np.uint8).reshape(h, w, 3)


# ---------------------------------------------------------------------------
# BEV road maps


def write_bev_map(
    raster_path: str | Path, bev: BevMap, sidecar_path: str | Path | None = None
) -> None:
    raster_path = Path(raster_path)
    h, w = bev.raster.shape
    with open(raster_path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(bev.raster.tobytes())
    sidecar = Path(sidecar_path) if sidecar_path else raster_path.with_suffix(".json")
    obj = {
        "origin_x": bev.origin_x,
        "origin_y": bev.origin_y,
        "cell_size_m": bev.cell_size,
        "ground_z": bev.ground_z,
    }
    sidecar.write_text(json.dumps(obj, indent=2) + "\n")


def read_bev_map(raster_path: str | Path, sidecar_path: str | Path | None = None) -> BevMap:
    """Load the road raster (PGM, >= 128 is road) and its georeferencing sidecar."""
    raster_path = Path(raster_path)
    data = raster_path.read_bytes()
    w, h, _, off = _read_netpbm_header(data, b"P5", str(raster_path))
    need = w * h
    if len(data) - off < need:
        raise FormatError(f"{raster_path}: pixel payload truncated")
    raster = np.frombuffer(data[off:off + need], dtype=np.uint8).reshape(h, w)
    sidecar = Path(sidecar_path) if sidecar_path else raster_path.with_suffix(".json")
    try:
        meta = json.loads(sidecar.read_text())
    except FileNotFoundError:
        raise FormatError(f"{raster_path}: missing sidecar {sidecar}") from None
    except json.JSONDecodeError as err:
        raise FormatError(f"{sidecar}: invalid JSON: {err}") from err
    try:
        return BevMap(
            raster=raster,
            origin_x=float(meta["origin_x"]),
            origin_y=float(meta["origin_y"]),
            cell_size=float(meta["cell_size_m"]),
            ground_z=float(meta.get("ground_z", 0.0)),
        )
    except KeyError as err:
        raise FormatError(f"{sidecar}: missing field {err}") from err


# ---------------------------------------------------------------------------
# scene bundles


@dataclass(frozen=True)
class SceneBundle:
    """File set making up one reconstructed scene."""

    root: Path
    gaussians: Path
    cameras: Path
    annotations: Path
    bev_raster: Path
    bev_sidecar: Path
    frame_rate_hz: float
    annotated_timesteps: tuple

    def __post_init__(self) -> None:
        for p in (self.gaussians, self.cameras, self.annotations,
                  self.bev_raster, self.bev_sidecar):
            if not p.exists():
                raise FormatError(f"bundle references missing file {p}")


def read_bundle(path: str | Path) -> SceneBundle:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except FileNotFoundError:
        raise FormatError(f"missing bundle file {path}") from None
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: invalid JSON: {err}") from err
    root = path.parent
    try:
        return SceneBundle(
            root=root,
            gaussians=root / obj["gaussians"],
            cameras=root / obj["cameras"],
            annotations=root / obj["annotations"],
            bev_raster=root / obj["bev_raster"],
            bev_sidecar=root / obj["bev_sidecar"],
            frame_rate_hz=float(obj.get("frame_rate_hz", 10.0)),
            annotated_timesteps=tuple(int(t) for t in obj.get("annotated_timesteps", [0])),
        )
    except KeyError as err:
        raise FormatError(f"{path}: missing bundle field {err}") from err


def write_bundle(
    directory: str | Path,
    scene: SceneGraph,
    cameras: Sequence[Camera],
    annotations: Sequence[AnnotationRecord],
    bev: BevMap,
    *,
    frame_rate_hz: float = 10.0,
    annotated_timesteps: Sequence[int] = (0,),
) -> Path:
    """Write a complete bundle into `directory`; returns the bundle.json path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_gaussians(directory / "scene.gspl", scene)
    write_cameras(directory / "cameras.json", cameras)
    write_annotation_records(directory / "annotations.json", annotations)
    write_bev_map(directory / "bev.pgm", bev, directory / "bev.json")
    obj = {
        "gaussians": "scene.gspl",
        "cameras": "cameras.json",
        "annotations": "annotations.json",
        "bev_raster": "bev.pgm",
        "bev_sidecar": "bev.json",
        "frame_rate_hz": frame_rate_hz,
        "annotated_timesteps": list(int(t) for t in annotated_timesteps),
    }
    bundle_path = directory / "bundle.json"
    bundle_path.write_text(json.dumps(obj, indent=2) + "\n")
    return bundle_path


@dataclass(frozen=True)
class LoadedScene:
    """Everything load_scene pulls out of a bundle, fully validated."""

    bundle: SceneBundle
    scene: SceneGraph
    cameras: tuple
    annotations: tuple
    bev: BevMap

    def boxes_at(self, timestep: int) -> list[Box3D]:
        return [a.to_box() for a in self.annotations if a.timestep == timestep]

    def records_at(self, timestep: int) -> list[AnnotationRecord]:
        return [a for a in self.annotations if a.timestep == timestep]


def load_scene(bundle: str | Path | SceneBundle) -> LoadedScene:
    """Load and validate a full scene bundle."""
    if not isinstance(bundle, SceneBundle):
        bundle = read_bundle(bundle)
    scene = read_gaussians(bundle.gaussians)
    cameras = read_cameras(bundle.cameras)
    if len(cameras) < 1:
        raise FormatError(f"{bundle.cameras}: bundle needs at least one camera")
    annotations = read_annotations(bundle.annotations)
    bev = read_bev_map(bundle.bev_raster, bundle.bev_sidecar)
    for t in bundle.annotated_timesteps:
        if not 0 <= t < scene.num_timesteps:
            raise FormatError(
                f"annotated timestep {t} outside scene range [0, {scene.num_timesteps})"
            )
    return LoadedScene(
        bundle=bundle, scene=scene, cameras=cameras, annotations=annotations, bev=bev
    )


# ---------------------------------------------------------------------------
# asset manifests


def read_asset_manifest(path: str | Path) -> dict[str, list[Path]]:
    """Map category -> asset file paths (resolved relative to the manifest)."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except FileNotFoundError:
        raise FormatError(f"missing asset manifest {path}") from None
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: invalid JSON: {err}") from err
    if not isinstance(obj, dict) or "assets" not in obj or not isinstance(obj["assets"], dict):
        raise FormatError(f"{path}: expected an object with an 'assets' mapping")
    out: dict[str, list[Path]] = {}
    for category, files in obj["assets"].items():
        if not isinstance(files, list) or not files:
            raise FormatError(f"{path}: category {category!r} must list at least one file")
        resolved = [path.parent / f for f in files]
        for p in resolved:
            if not p.exists():
                raise FormatError(f"{path}: asset file not found: {p}")
        out[str(category)] = resolved
    if not out:
        raise FormatError(f"{path}: empty asset manifest")
    return out
