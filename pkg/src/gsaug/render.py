"""Forward tile-based rasterizer for Gaussian scenes.

Splats are projected with the EWA first-order approximation, sorted once
globally by (depth, insertion index), bucketed into 16x16 pixel tiles and
alpha-composited front to back.  A splat contributes to a pixel only when
the squared Mahalanobis distance of the pixel center is at most 9 (the
3-sigma ellipse); together with the deterministic sort this makes the
tiled result equal to an untiled per-pixel evaluation, not merely close.

The Jacobian of the projection is evaluated at the splat center clamped
into 1.3x the view frustum; without that guard, splats that graze the
image plane far off-axis blow up into footprints that cover the entire
image.  Centers inside the frustum are linearized exactly at the mean.

Pixel centers sit at integer coordinates: pixel (row i, col j) covers the
unit square centered on (j, i).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    GaussianPrimitive,
    GaussianSet,
    RigidTransform,
    SceneGraph,
    apply_rigid_transform,
    sh_evaluate,
)
from .errors import ConfigError

TILE_SIZE = 16
BLUR_FLOOR = 0.3          # px^2 added to the projected covariance diagonal
ALPHA_CLAMP = 0.99
TRANSMITTANCE_EPS = 1e-4  # pixel terminates once remaining transmittance drops below this
CUTOFF_MAHALANOBIS = 9.0  # 3-sigma contribution ellipse
DEFAULT_BACKGROUND = (0.5, 0.5, 0.5)
THREADS_ENV = "GSA_THREADS"


@dataclass(frozen=True)
class Camera:
    """Pinhole camera with a world-to-camera extrinsic transform.

    Looks down +z in its own frame; u = fx*x/z + cx, v = fy*y/z + cy.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsics: RigidTransform
    near_clip: float = 0.05
    name: str = ""

    def __post_init__(self) -> None:
        if not isinstance(self.extrinsics, RigidTransform):
            arr = np.asarray(self.extrinsics, dtype=np.float64)
            if arr.shape not in ((3, 4), (4, 4)):
                raise ConfigError(
                    f"extrinsics must be a RigidTransform or a 3x4/4x4 matrix, "
                    f"got shape {arr.shape}"
                )
            object.__setattr__(self, "extrinsics", RigidTransform(arr[:3, :3], arr[:3, 3]))
        if self.width < 1 or self.height < 1:
            raise ConfigError(f"zero-sized image {self.width}x{self.height}")
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ConfigError("focal lengths must be positive")
        if not (0.0 < self.cx < self.width and 0.0 < self.cy < self.height):
            raise ConfigError("principal point must lie strictly inside the image")
        if self.near_clip <= 0.0:
            raise ConfigError("near_clip must be positive")

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        e = self.extrinsics
        return -(e.rotation.T @ e.translation)

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return self.extrinsics.apply(points)

    def project_points(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates and camera depth for world points (N, 3).

        No clipping; callers must filter on the returned depth and on image
        bounds themselves.  Points exactly on the camera plane (z = 0) come
        out non-finite; points behind it project to mirrored coordinates
        that only the depth sign exposes.
        """
        pc = self.world_to_camera(np.atleast_2d(points))
        z = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pc[:, 0] / z + self.cx
            v = self.fy * pc[:, 1] / z + self.cy
        return np.stack([u, v], axis=1), z


@dataclass(frozen=True)
class Splat2D:
    """Projected footprint of one Gaussian: pixel mean, blurred 2x2
    covariance, camera depth, evaluated RGB and base opacity."""

    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    color: np.ndarray
    opacity: float


def _resolve_workers(workers: int | None) -> int:
    if workers is None:
        raw = os.environ.get(THREADS_ENV, "")
        try:
            workers = int(raw) if raw else 1
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if workers < 1:
        raise ConfigError("worker count must be >= 1")
    return workers


class _Projected:
    """Column arrays for the splats that survive culling, in input order."""

    __slots__ = ("u", "v", "depth", "ca", "cb", "cc", "color", "opacity", "rx", "ry", "index")

    def __init__(self, u, v, depth, ca, cb, cc, color, opacity, rx, ry, index):
        self.u, self.v, self.depth = u, v, depth
        self.ca, self.cb, self.cc = ca, cb, cc
        self.color, self.opacity = color, opacity
        self.rx, self.ry, self.index = rx, ry, index

    def __len__(self) -> int:
        return self.u.shape[0]


def _project_set(gs: GaussianSet, cam: Camera) -> _Projected:
    n = len(gs)
    empty = lambda *shape: np.empty(shape)
    if n == 0:
        return _Projected(
            empty(0), empty(0), empty(0), empty(0), empty(0), empty(0),
            empty(0, 3), empty(0), empty(0), empty(0), np.empty(0, dtype=np.int64),
        )
    e = cam.extrinsics
    mc = gs.means @ e.rotation.T + e.translation
    z = mc[:, 2]
    idx = np.flatnonzero(z > cam.near_clip)
    if idx.size == 0:
        return _project_set(GaussianSet.empty(), cam)

    mc = mc[idx]
    z = z[idx]
    x, y = mc[:, 0], mc[:, 1]

    # world covariance, rotated into the camera frame
    rq = _quat_matrices(gs.quats[idx])
    m = rq * gs.scales[idx][:, None, :]
    cov_w = np.einsum("nij,nkj->nik", m, m)
    cov_c = np.einsum("ij,njk,lk->nil", e.rotation, cov_w, e.rotation)

    # perspective Jacobian rows, evaluated at the mean.  The evaluation
    # point is clamped into 1.3x the view frustum: a splat grazing the
    # image plane far off-axis otherwise gets a first-order footprint
    # thousands of pixels wide that swamps the whole image (any ground
    # plane seen from a pitched camera produces such splats).  Centers
    # inside the frustum are never affected.
    inv_z = 1.0 / z
    lim_x = 1.3 * (0.5 * cam.width / cam.fx) * z
    lim_y = 1.3 * (0.5 * cam.height / cam.fy) * z
    jx = np.clip(x, -lim_x, lim_x)
    jy = np.clip(y, -lim_y, lim_y)
    j00 = cam.fx * inv_z
    j02 = -cam.fx * jx * inv_z * inv_z
    j11 = cam.fy * inv_z
    j12 = -cam.fy * jy * inv_z * inv_z

    c00, c01, c02 = cov_c[:, 0, 0], cov_c[:, 0, 1], cov_c[:, 0, 2]
    c11, c12, c22 = cov_c[:, 1, 1], cov_c[:, 1, 2], cov_c[:, 2, 2]
    a = j00 * (j00 * c00 + j02 * c02) + j02 * (j00 * c02 + j02 * c22) + BLUR_FLOOR
    b = j00 * (j11 * c01 + j12 * c02) + j02 * (j11 * c12 + j12 * c22)
    c = j11 * (j11 * c11 + j12 * c12) + j12 * (j11 * c12 + j12 * c22) + BLUR_FLOOR

    u = cam.fx * x * inv_z + cam.cx
    v = cam.fy * y * inv_z + cam.cy
    rx = 3.0 * np.sqrt(a)
    ry = 3.0 * np.sqrt(c)
    keep = (
        (u + rx >= 0.0)
        & (u - rx <= cam.width - 1.0)
        & (v + ry >= 0.0)
        & (v - ry <= cam.height - 1.0)
    )
    sub = np.flatnonzero(keep)
    if sub.size == 0:
        return _project_set(GaussianSet.empty(), cam)
    idx = idx[sub]
    u, v, z = u[sub], v[sub], z[sub]
    a, b, c = a[sub], b[sub], c[sub]
    rx, ry = rx[sub], ry[sub]

    det = a * c - b * b
    ca, cb, cc = c / det, -b / det, a / det  # conic (inverse covariance)

    dirs = gs.means[idx] - cam.center
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = dirs / norms
    color = sh_evaluate(gs.sh_coeffs[idx], dirs)

    return _Projected(u, v, z, ca, cb, cc, color, gs.opacities[idx], rx, ry, idx.astype(np.int64))


def _quat_matrices(quats: np.ndarray) -> np.ndarray:
    q = quats / np.linalg.norm(quats, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((q.shape[0], 3, 3))
    m[:, 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    m[:, 0, 1] = 2.0 * (x * y - w * z)
    m[:, 0, 2] = 2.0 * (x * z + w * y)
    m[:, 1, 0] = 2.0 * (x * y + w * z)
    m[:, 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    m[:, 1, 2] = 2.0 * (y * z - w * x)
    m[:, 2, 0] = 2.0 * (x * z - w * y)
    m[:, 2, 1] = 2.0 * (y * z + w * x)
    m[:, 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return m


def project_gaussian(g: GaussianPrimitive, cam: Camera) -> Splat2D | None:
    """Project one primitive; None when culled (behind the near plane or
    its 3-sigma rectangle misses the image)."""
    p = _project_set(g.as_set(), cam)
    if len(p) == 0:
        return None
    det = p.ca[0] * p.cc[0] - p.cb[0] * p.cb[0]
    cov = np.array([[p.cc[0], -p.cb[0]], [-p.cb[0], p.ca[0]]]) / det
    return Splat2D(
        mean2d=np.array([p.u[0], p.v[0]]),
        cov2d=cov,
        depth=float(p.depth[0]),
        color=p.color[0].copy(),
        opacity=float(p.opacity[0]),
    )


def _sorted_projection(gs: GaussianSet, cam: Camera) -> _Projected:
    p = _project_set(gs, cam)
    if len(p) == 0:
        return p
    order = np.lexsort((p.index, p.depth))  # depth first, insertion index breaks ties
    return _Projected(
        p.u[order], p.v[order], p.depth[order], p.ca[order], p.cb[order], p.cc[order],
        p.color[order], p.opacity[order], p.rx[order], p.ry[order], p.index[order],
    )


def _tile_buckets(p: _Projected, width: int, height: int):
    """Group splat positions (already depth-sorted) by the 16x16 tiles their
    3-sigma rectangles touch.  Returns (tile ids, start offsets, splat rows)."""
    ntx = (width + TILE_SIZE - 1) // TILE_SIZE
    nty = (height + TILE_SIZE - 1) // TILE_SIZE
    x0 = np.clip(np.ceil(p.u - p.rx), 0, width - 1).astype(np.int64)
    x1 = np.clip(np.floor(p.u + p.rx), 0, width - 1).astype(np.int64)
    y0 = np.clip(np.ceil(p.v - p.ry), 0, height - 1).astype(np.int64)
    y1 = np.clip(np.floor(p.v + p.ry), 0, height - 1).astype(np.int64)
    tx0, tx1 = x0 // TILE_SIZE, x1 // TILE_SIZE
    ty0, ty1 = y0 // TILE_SIZE, y1 // TILE_SIZE
    nx = tx1 - tx0 + 1
    ny = ty1 - ty0 + 1
    counts = nx * ny
    total = int(counts.sum())
    rows = np.repeat(np.arange(len(p)), counts)
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    local = np.arange(total) - starts
    lx = local % nx[rows]
    ly = local // nx[rows]
    tile = (ty0[rows] + ly) * ntx + (tx0[rows] + lx)
    order = np.argsort(tile, kind="stable")  # stable keeps depth order inside each tile
    return tile[order], rows[order], ntx, nty


def _tile_weights(p: _Projected, sel: np.ndarray, gx: np.ndarray, gy: np.ndarray):
    """Per-(splat, pixel) blending weights for one tile.

    Front-to-back compositing with the 3-sigma cutoff: alpha is zero outside
    Mahalanobis^2 <= 9, clamped at 0.99 inside, and a pixel stops accepting
    contributions once its transmittance falls below 1e-4.  Returns the
    weight matrix (S, P) and the final transmittance per pixel (P,).
    """
    dx = gx[None, :] - p.u[sel][:, None]
    dy = gy[None, :] - p.v[sel][:, None]
    maha = (
        p.ca[sel][:, None] * dx * dx
        + 2.0 * p.cb[sel][:, None] * dx * dy
        + p.cc[sel][:, None] * dy * dy
    )
    alpha = np.where(
        maha <= CUTOFF_MAHALANOBIS,
        np.minimum(p.opacity[sel][:, None] * np.exp(-0.5 * maha), ALPHA_CLAMP),
        0.0,
    )
    trans = np.cumprod(1.0 - alpha, axis=0)
    t_before = np.vstack([np.ones((1, alpha.shape[1])), trans[:-1]])
    live = t_before >= TRANSMITTANCE_EPS
    weights = alpha * t_before * live
    t_final = np.prod(1.0 - alpha * live, axis=0)
    return weights, t_final


def _render_tiles(p: _Projected, cam: Camera, background: np.ndarray,
                  workers: int, want_depth: bool):
    h, w = cam.height, cam.width
    if want_depth:
        out = np.full((h, w), np.inf)
    else:
        out = np.empty((h, w, 3))
        out[:] = background
    if len(p) == 0:
        return out
    tile_ids, rows, ntx, nty = _tile_buckets(p, w, h)
    if tile_ids.size == 0:
        return out
    bounds = np.flatnonzero(np.diff(tile_ids)) + 1
    starts = np.concatenate([[0], bounds])
    stops = np.concatenate([bounds, [tile_ids.size]])
    jobs = []
    for s, e in zip(starts, stops):
        tid = int(tile_ids[s])
        ty, tx = divmod(tid, ntx)
        px0, py0 = tx * TILE_SIZE, ty * TILE_SIZE
        px1, py1 = min(px0 + TILE_SIZE, w), min(py0 + TILE_SIZE, h)
        jobs.append((rows[s:e], px0, px1, py0, py1))

    def run(job):
        sel, px0, px1, py0, py1 = job
        gy, gx = np.mgrid[py0:py1, px0:px1]
        gx = gx.ravel().astype(np.float64)
        gy = gy.ravel().astype(np.float64)
        weights, t_final = _tile_weights(p, sel, gx, gy)
        shape = (py1 - py0, px1 - px0)
        if want_depth:
            acc = weights.sum(axis=0)
            zsum = weights.T @ p.depth[sel]
            d = np.full(gx.shape, np.inf)
            ok = acc >= 0.5
            d[ok] = zsum[ok] / acc[ok]
            out[py0:py1, px0:px1] = d.reshape(shape)
        else:
            rgb = weights.T @ p.color[sel]
            rgb += t_final[:, None] * background
            out[py0:py1, px0:px1] = rgb.reshape(shape + (3,))

    if workers == 1 or len(jobs) == 1:
        for job in jobs:
            run(job)
    else:
        # tiles write disjoint slices, so thread scheduling cannot change bytes
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, jobs))
    return out


def render(
    scene: SceneGraph,
    cam: Camera,
    timestep: int = 0,
    *,
    extra_nodes: Sequence = (),
    background: Sequence[float] = DEFAULT_BACKGROUND,
    workers: int | None = None,
) -> np.ndarray:
    """Render one camera view at one timestep to float RGB in [0, 1].

    `extra_nodes` appends world-frame GaussianSets or RigidNodes after the
    scene's own content (insertion order breaks depth ties, so results are
    reproducible).  `workers` threads split the image by tile; output is
    byte-identical for any worker count.
    """
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    if np.any(bg < 0.0) or np.any(bg > 1.0):
        raise ConfigError("background color must be in [0, 1]")
    flat = scene.flatten(timestep, extra_nodes)
    p = _sorted_projection(flat, cam)
    return _render_tiles(p, cam, bg, _resolve_workers(workers), want_depth=False)


def render_depth(
    scene: SceneGraph,
    cam: Camera,
    timestep: int = 0,
    *,
    extra_nodes: Sequence = (),
    workers: int | None = None,
) -> np.ndarray:
    """Alpha-weighted expected depth per pixel.

    Pixels whose accumulated alpha stays below 0.5 carry +inf, meaning no
    opaque surface: an object there is unoccluded by construction.
    """
    flat = scene.flatten(timestep, extra_nodes)
    p = _sorted_projection(flat, cam)
    return _render_tiles(p, cam, np.zeros(3), _resolve_workers(workers), want_depth=True)


def render_augmented(
    scene: SceneGraph,
    placed: Sequence[tuple],
    cam: Camera,
    timestep: int = 0,
    *,
    background: Sequence[float] = DEFAULT_BACKGROUND,
    workers: int | None = None,
) -> np.ndarray:
    """Render the scene with agent objects inserted.

    `placed` holds (agent, pose) pairs; an agent is anything with a
    `primitives` GaussianSet (or a bare GaussianSet), a pose is a
    RigidTransform or anything with a `transform` attribute (a Placement).
    This is exactly apply_rigid_transform + render, nothing more.
    """
    extras = []
    for obj, pose in placed:
        prims = getattr(obj, "primitives", obj)
        tform = pose if isinstance(pose, RigidTransform) else pose.transform
        extras.append(apply_rigid_transform(prims, tform))
    return render(
        scene, cam, timestep, extra_nodes=tuple(extras), background=background, workers=workers
    )
