"""Physically plausible object placement.

Candidate locations come from a BEV occupancy grid carved from the road
raster, the camera frustums projected to the ground and a conservative
clearance circle around existing objects; exact oriented-box SAT tests,
elevation from neighboring annotations and a depth-buffer visibility
ratio then accept or reject each candidate.  All randomness flows through
an explicit numpy Generator, so placement streams replay exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .core import RigidTransform, SceneGraph, RigidNode
from .errors import ConfigError, NoPlacementPossibleError
from .render import Camera, render_augmented, render_depth

MODE_RANDOM_POSE = "random-pose"
MODE_POSE_ALIGNED = "pose-aligned"
MODE_MIN_OCCLUSION = "min-occlusion"
MODE_MAX_OCCLUSION = "max-occlusion"
MODE_SCORER_MAX = "scorer-max"
MODES = (
    MODE_RANDOM_POSE,
    MODE_POSE_ALIGNED,
    MODE_MIN_OCCLUSION,
    MODE_MAX_OCCLUSION,
    MODE_SCORER_MAX,
)

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# boxes


@dataclass(frozen=True)
class Box3D:
    """Upright oriented bounding box.

    center is the box centroid; size is (width, length, height) with
    length along the heading axis; yaw rotates the heading from +x about
    +z, stored normalized to [0, 2*pi).
    """

    center: np.ndarray
    size: np.ndarray
    yaw: float
    label: str = ""

    def __post_init__(self) -> None:
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        s = np.asarray(self.size, dtype=np.float64).reshape(3)
        if np.any(s <= 0.0):
            raise ConfigError(f"box sizes must be positive, got {s}")
        c.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "size", s)
        object.__setattr__(self, "yaw", float(self.yaw) % TWO_PI)

    @property
    def width(self) -> float:
        return float(self.size[0])

    @property
    def length(self) -> float:
        return float(self.size[1])

    @property
    def height(self) -> float:
        return float(self.size[2])

    @property
    def bottom_z(self) -> float:
        return float(self.center[2]) - 0.5 * self.height

    def z_interval(self) -> tuple[float, float]:
        h = 0.5 * self.height
        return float(self.center[2]) - h, float(self.center[2]) + h

    def footprint(self, margin: float = 0.0) -> np.ndarray:
        """BEV corner loop (4, 2), optionally inflated by `margin` per side."""
        ex = 0.5 * self.length + margin
        ey = 0.5 * self.width + margin
        local = np.array([[ex, ey], [ex, -ey], [-ex, -ey], [-ex, ey]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + self.center[:2]

    def corners(self) -> np.ndarray:
        """All 8 corners (8, 3), bottom loop then top loop."""
        fp = self.footprint()
        z0, z1 = self.z_interval()
        bottom = np.column_stack([fp, np.full(4, z0)])
        top = np.column_stack([fp, np.full(4, z1)])
        return np.vstack([bottom, top])

    def circumradius(self) -> float:
        """Radius of the circle circumscribing the BEV footprint."""
        return 0.5 * math.hypot(self.width, self.length)

    def transformed(self, t: RigidTransform) -> "Box3D":
        """Box under a gravity-aligned rigid motion (rotation about +z only)."""
        r = t.rotation
        if abs(r[2, 2] - 1.0) > 1e-9 or abs(r[0, 2]) > 1e-9 or abs(r[1, 2]) > 1e-9:
            raise ConfigError("box transform must be a rotation about +z")
        extra_yaw = math.atan2(r[1, 0], r[0, 0])
        return Box3D(
            center=t.apply(self.center),
            size=self.size,
            yaw=self.yaw + extra_yaw,
            label=self.label,
        )


# ---------------------------------------------------------------------------
# separating-axis collision


def _axis_overlap(pa: np.ndarray, pb: np.ndarray) -> bool:
    # touching intervals do not overlap: contact is not a collision
    return min(pa.max(), pb.max()) - max(pa.min(), pb.min()) > 0.0


def _footprints_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    for corners in (a, b):
        for k in (0, 1):
            edge = corners[k + 1] - corners[k]
            axis = np.array([-edge[1], edge[0]])
            axis /= np.linalg.norm(axis)
            if not _axis_overlap(a @ axis, b @ axis):
                return False
    return True


def collision_check(candidate: Box3D, existing: Sequence[Box3D], margin: float = 0.1) -> bool:
    """True when the margin-inflated candidate overlaps any existing box.

    Overlap means strictly positive intersection on every separating axis
    (the four BEV edge normals) plus a strictly positive z-extent overlap;
    boxes that merely touch are not in collision.
    """
    fa = candidate.footprint(margin)
    za = candidate.z_interval()
    for box in existing:
        zb = box.z_interval()
        if min(za[1], zb[1]) - max(za[0], zb[0]) <= 0.0:
            continue
        if _footprints_overlap(fa, box.footprint()):
            return True
    return False


# ---------------------------------------------------------------------------
# BEV occupancy


@dataclass(frozen=True)
class BevMap:
    """Road raster on a regular BEV grid.

    `raster` is the 8-bit grayscale map (values >= 128 mark road); `mask`
    is derived from it.  Cell (i, j) covers x in [origin_x + j*cell,
    origin_x + (j+1)*cell) and y likewise with i, at height ground_z.
    Keeping the raw raster lets file round-trips stay byte-identical.
    """

    raster: np.ndarray
    origin_x: float
    origin_y: float
    cell_size: float
    ground_z: float = 0.0

    def __post_init__(self) -> None:
        r = np.asarray(self.raster)
        if r.dtype == bool:
            r = np.where(r, np.uint8(255), np.uint8(0))
        if r.dtype != np.uint8:
            raise ConfigError(f"BEV raster must be uint8 or bool, got {r.dtype}")
        if r.ndim != 2:
            raise ConfigError(f"BEV raster must be 2-D, got shape {r.shape}")
        if self.cell_size <= 0.0:
            raise ConfigError("cell_size must be positive")
        r = np.ascontiguousarray(r)
        r.setflags(write=False)
        object.__setattr__(self, "raster", r)

    @property
    def mask(self) -> np.ndarray:
        return self.raster >= 128

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        h, w = self.raster.shape
        xs = self.origin_x + (np.arange(w) + 0.5) * self.cell_size
        ys = self.origin_y + (np.arange(h) + 0.5) * self.cell_size
        return xs, ys


def _dist_to_footprint(px: np.ndarray, py: np.ndarray, box: Box3D) -> np.ndarray:
    """BEV distance from points to the box footprint (0 inside)."""
    dx = px - box.center[0]
    dy = py - box.center[1]
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    ex = 0.5 * box.length
    ey = 0.5 * box.width
    ox = np.maximum(np.abs(lx) - ex, 0.0)
    oy = np.maximum(np.abs(ly) - ey, 0.0)
    return np.hypot(ox, oy)


@dataclass
class DrivableSpace:
    """Cells where an agent center may be sampled.

    Built as road AND any-camera-frustum AND clearance; the clearance test
    is a conservative circumscribed-circle bound (cell center farther from
    every existing footprint than the agent circumradius plus margin), the
    exact SAT test still runs per sample.  Accepted placements carve their
    own clearance disk back out of the grid.
    """

    mask: np.ndarray
    origin_x: float
    origin_y: float
    cell_size: float
    ground_z: float
    frustum_masks: tuple = ()
    _version: int = field(default=0, repr=False)
    _cells_cache: dict = field(default_factory=dict, repr=False)

    def true_cells(self, extra_mask: np.ndarray | None = None) -> np.ndarray:
        """(N, 2) row/col indices of open cells, optionally ANDed with a mask.

        Results are cached per mask object until the next carve, so reuse
        the same mask array across calls.
        """
        key = (self._version, None if extra_mask is None else id(extra_mask))
        got = self._cells_cache.get(key)
        if got is None:
            m = self.mask if extra_mask is None else (self.mask & extra_mask)
            got = np.argwhere(m)
            self._cells_cache = {key: got}
        return got

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        return (
            self.origin_x + (j + 0.5) * self.cell_size,
            self.origin_y + (i + 0.5) * self.cell_size,
        )

    def carve(self, box: Box3D, clearance: float) -> None:
        """Remove cells whose center is within `clearance` of the box footprint."""
        h, w = self.mask.shape
        xs = self.origin_x + (np.arange(w) + 0.5) * self.cell_size
        ys = self.origin_y + (np.arange(h) + 0.5) * self.cell_size
        gx, gy = np.meshgrid(xs, ys)
        near = _dist_to_footprint(gx.ravel(), gy.ravel(), box) <= clearance
        new_mask = self.mask & ~near.reshape(self.mask.shape)
        self.mask = new_mask
        self._version += 1

    def open_cell_count(self) -> int:
        return int(self.mask.sum())


def build_drivable_space(
    road: BevMap,
    existing_boxes: Sequence[Box3D],
    cameras: Sequence[Camera],
    agent_footprint: tuple[float, float],
    *,
    margin: float = 0.1,
) -> DrivableSpace:
    """Carve the sampleable grid for an agent of (width, length) footprint.

    Raises NoPlacementPossibleError when nothing remains, so callers can
    distinguish an impossible scene from an unlucky sampling run.
    """
    w, l = float(agent_footprint[0]), float(agent_footprint[1])
    if w <= 0.0 or l <= 0.0:
        raise ConfigError("agent footprint must be positive")
    xs, ys = road.cell_centers()
    gx, gy = np.meshgrid(xs, ys)
    px, py = gx.ravel(), gy.ravel()
    pts = np.column_stack([px, py, np.full(px.shape, road.ground_z)])

    frustums = []
    for cam in cameras:
        uv, z = cam.project_points(pts)
        inside = (
            (z > cam.near_clip)
            & (uv[:, 0] >= -0.5)
            & (uv[:, 0] < cam.width - 0.5)
            & (uv[:, 1] >= -0.5)
            & (uv[:, 1] < cam.height - 0.5)
        )
        frustums.append(inside.reshape(road.mask.shape))
    any_frustum = np.any(frustums, axis=0) if frustums else np.zeros_like(road.mask)

    radius = 0.5 * math.hypot(w, l) + margin
    clear = np.ones(px.shape, dtype=bool)
    for box in existing_boxes:
        clear &= _dist_to_footprint(px, py, box) > radius
    occ = road.mask & any_frustum & clear.reshape(road.mask.shape)
    if not occ.any():
        raise NoPlacementPossibleError("no drivable cell survives road/frustum/clearance carving")
    return DrivableSpace(
        mask=occ,
        origin_x=road.origin_x,
        origin_y=road.origin_y,
        cell_size=road.cell_size,
        ground_z=road.ground_z,
        frustum_masks=tuple(frustums),
    )


# ---------------------------------------------------------------------------
# pose and elevation from scene context


def nearest_object_pose(location: Sequence[float], boxes: Sequence[Box3D]) -> float | None:
    """Yaw of the box whose BEV center is closest to `location`.

    None signals an empty box list; callers fall back to a random pose.
    Distance ties resolve to the lowest index.
    """
    if not boxes:
        return None
    loc = np.asarray(location, dtype=np.float64)[:2]
    centers = np.array([b.center[:2] for b in boxes])
    d2 = np.sum((centers - loc) ** 2, axis=1)
    return float(boxes[int(np.argmin(d2))].yaw)


def infer_elevation(
    location: Sequence[float],
    boxes: Sequence[Box3D],
    k: int = 3,
    default: float = 0.0,
) -> float:
    """Ground height at `location`: mean bottom face of the k nearest boxes.

    Annotated objects rest on the ground, so their bottom faces sample the
    local road surface; with no boxes the map ground plane is used.
    """
    if not boxes:
        return float(default)
    loc = np.asarray(location, dtype=np.float64)[:2]
    centers = np.array([b.center[:2] for b in boxes])
    d2 = np.sum((centers - loc) ** 2, axis=1)
    take = np.argsort(d2, kind="stable")[: max(1, k)]
    return float(np.mean([boxes[int(i)].bottom_z for i in take]))


# ---------------------------------------------------------------------------
# visibility


def visibility_ratio(agent_means: np.ndarray, depth_map: np.ndarray, cam: Camera) -> float:
    """Fraction of in-image agent Gaussian centers nearer than the scene.

    A center counts as visible when its camera depth is strictly below the
    pre-insertion depth map at its pixel (+inf map entries mean free space,
    so anything in front of the camera there is visible).  Returns 0 when
    no center lands inside the image.
    """
    uv, z = cam.project_points(agent_means)
    with np.errstate(invalid="ignore"):
        # behind-camera points project to NaN; the mask below drops them
        px = np.floor(np.nan_to_num(uv[:, 0], nan=-1.0) + 0.5).astype(np.int64)
        py = np.floor(np.nan_to_num(uv[:, 1], nan=-1.0) + 0.5).astype(np.int64)
    inside = (
        (z > cam.near_clip)
        & (px >= 0)
        & (px < cam.width)
        & (py >= 0)
        & (py < cam.height)
    )
    n = int(inside.sum())
    if n == 0:
        return 0.0
    visible = z[inside] < depth_map[py[inside], px[inside]]
    return float(visible.sum()) / n


# ---------------------------------------------------------------------------
# image-plane boxes and occlusion scoring


def project_box(box: Box3D, cam: Camera) -> np.ndarray | None:
    """Axis-aligned image rect [x0, y0, x1, y1] of the box corners.

    Corners behind the near plane are dropped (a partially visible box
    gives the rect of its visible corners); the rect is clipped to the
    image area.  None when nothing visible remains.
    """
    corners = box.corners()
    pc = cam.world_to_camera(corners)
    infront = pc[:, 2] > cam.near_clip
    if not infront.any():
        return None
    pc = pc[infront]
    u = cam.fx * pc[:, 0] / pc[:, 2] + cam.cx
    v = cam.fy * pc[:, 1] / pc[:, 2] + cam.cy
    x0 = max(float(u.min()), -0.5)
    x1 = min(float(u.max()), cam.width - 0.5)
    y0 = max(float(v.min()), -0.5)
    y1 = min(float(v.max()), cam.height - 0.5)
    if x1 <= x0 or y1 <= y0:
        return None
    return np.array([x0, y0, x1, y1])


def iou_2d(a: np.ndarray, b: np.ndarray) -> float:
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    inter = max(ix, 0.0) * max(iy, 0.0)
    if inter == 0.0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return float(inter / (area_a + area_b - inter))


def count_fully_occluded(
    agent_rect: np.ndarray,
    agent_depth: float,
    rects: Sequence[np.ndarray],
    depths: Sequence[float],
    containment: float = 0.95,
) -> int:
    """Existing boxes hidden by the agent: rect covered >= `containment`
    by the agent rect while the agent sits nearer to the camera."""
    n = 0
    for rect, depth in zip(rects, depths):
        area = (rect[2] - rect[0]) * (rect[3] - rect[1])
        if area <= 0.0:
            continue
        ix = min(agent_rect[2], rect[2]) - max(agent_rect[0], rect[0])
        iy = min(agent_rect[3], rect[3]) - max(agent_rect[1], rect[1])
        inter = max(ix, 0.0) * max(iy, 0.0)
        if inter / area >= containment and agent_depth < depth:
            n += 1
    return n


def occlusion_score(
    agent_rect: np.ndarray,
    rects: Sequence[np.ndarray],
    fully_occluded: int,
    penalty: float = 1.0,
) -> float:
    """Mean IoU against existing rects, discounted per fully hidden box.

    The penalty keeps "maximally occluded" searches from degenerating into
    planting the agent straight in front of everything.
    """
    if rects:
        mean_iou = float(np.mean([iou_2d(agent_rect, r) for r in rects]))
    else:
        mean_iou = 0.0
    return mean_iou - penalty * fully_occluded


def occlusion_for_box(
    box: Box3D,
    existing_boxes: Sequence[Box3D],
    cam: Camera,
    *,
    penalty: float = 1.0,
    containment: float = 0.95,
) -> float:
    """Occlusion score of a world box against existing annotations in one view."""
    agent_rect = project_box(box, cam)
    if agent_rect is None:
        return 0.0
    agent_depth = float(cam.world_to_camera(box.center[None, :])[0, 2])
    rects, depths = [], []
    for b in existing_boxes:
        r = project_box(b, cam)
        if r is None:
            continue
        rects.append(r)
        depths.append(float(cam.world_to_camera(b.center[None, :])[0, 2]))
    hidden = count_fully_occluded(agent_rect, agent_depth, rects, depths, containment)
    return occlusion_score(agent_rect, rects, hidden, penalty=penalty)


# ---------------------------------------------------------------------------
# policy and sampling


@dataclass(frozen=True)
class PlacementPolicy:
    """Knobs for candidate generation and acceptance."""

    mode: str = MODE_RANDOM_POSE
    rng_seed: int = 0
    agents_per_camera: int = 1
    seeds_per_search: int = 16
    visibility_threshold: float = 0.25
    max_attempts: int = 64
    collision_margin: float = 0.1
    elevation_neighbors: int = 3
    occlusion_penalty: float = 1.0
    occlusion_containment: float = 0.95

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown placement mode {self.mode!r}; expected one of {MODES}")
        if self.agents_per_camera < 1:
            raise ConfigError("agents_per_camera must be >= 1")
        if self.seeds_per_search < 1:
            raise ConfigError("seeds_per_search must be >= 1")
        if not (0.0 < self.visibility_threshold < 1.0):
            raise ConfigError("visibility_threshold must be in (0, 1)")
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be >= 1")
        if self.collision_margin < 0.0:
            raise ConfigError("collision_margin must be >= 0")
        if self.elevation_neighbors < 1:
            raise ConfigError("elevation_neighbors must be >= 1")


@dataclass(frozen=True)
class Placement:
    """An accepted agent pose: ground-plane translation plus yaw.

    `box` is the agent box in world frame, `visibility` the per-camera
    visible-center ratios at acceptance time, `attempts` how many draws the
    rejection loop used (1 = first try).
    """

    x: float
    y: float
    z: float
    yaw: float
    box: Box3D | None = None
    visibility: tuple = ()
    attempts: int = 1

    @property
    def transform(self) -> RigidTransform:
        return RigidTransform.from_yaw(self.yaw, (self.x, self.y, self.z))


@dataclass(frozen=True)
class VisibilityInputs:
    """Pre-insertion depth maps plus the agent's canonical Gaussian centers."""

    cameras: tuple
    depth_maps: tuple
    agent_means: np.ndarray


def sample_placement(
    space: DrivableSpace,
    policy: PlacementPolicy,
    existing_boxes: Sequence[Box3D],
    agent_box: Box3D,
    rng: np.random.Generator,
    *,
    camera_mask: np.ndarray | None = None,
    visibility: VisibilityInputs | None = None,
) -> Placement | None:
    """Rejection-sample one valid placement; None when attempts run out.

    Location is uniform over open cells and uniform within the chosen
    cell.  Yaw follows the policy mode (uniform, or copied from the
    nearest annotated object).  A candidate must pass the exact SAT
    collision test and, when `visibility` is given, reach the visibility
    threshold in at least one camera.
    """
    base_yaw = float(agent_box.yaw)
    for attempt in range(1, policy.max_attempts + 1):
        cells = space.true_cells(camera_mask)
        if cells.shape[0] == 0:
            return None
        i, j = cells[int(rng.integers(cells.shape[0]))]
        cx, cy = space.cell_center(int(i), int(j))
        x = cx + float(rng.uniform(-0.5, 0.5)) * space.cell_size
        y = cy + float(rng.uniform(-0.5, 0.5)) * space.cell_size

        if policy.mode == MODE_POSE_ALIGNED:
            yaw = nearest_object_pose((x, y), existing_boxes)
            if yaw is None:
                yaw = float(rng.uniform(0.0, TWO_PI))
        else:
            yaw = float(rng.uniform(0.0, TWO_PI))

        z = infer_elevation(
            (x, y), existing_boxes, k=policy.elevation_neighbors, default=space.ground_z
        )
        pose = RigidTransform.from_yaw(yaw, (x, y, z))
        world_box = Box3D(
            center=pose.apply(agent_box.center),
            size=agent_box.size,
            yaw=base_yaw + yaw,
            label=agent_box.label,
        )
        if collision_check(world_box, existing_boxes, margin=policy.collision_margin):
            continue

        ratios: tuple = ()
        if visibility is not None:
            means_world = pose.apply(visibility.agent_means)
            ratios = tuple(
                visibility_ratio(means_world, d, c)
                for c, d in zip(visibility.cameras, visibility.depth_maps)
            )
            if not ratios or max(ratios) < policy.visibility_threshold:
                continue
        return Placement(
            x=x, y=y, z=z, yaw=yaw, box=world_box, visibility=ratios, attempts=attempt
        )
    return None


# ---------------------------------------------------------------------------
# hard-example search


@dataclass(frozen=True)
class Candidate:
    """One valid placement under evaluation by a scorer.

    `rendered(i)` lazily renders camera i with the agent inserted, for
    scorers that run a downstream model on the augmented image.
    """

    placement: Placement
    agent: object
    camera_index: int
    cameras: tuple
    existing_boxes: tuple
    scene: SceneGraph
    timestep: int

    @property
    def box(self) -> Box3D:
        return self.placement.box

    def rendered(self, camera_index: int | None = None, **kwargs) -> np.ndarray:
        i = self.camera_index if camera_index is None else camera_index
        return render_augmented(
            self.scene, [(self.agent, self.placement)], self.cameras[i], self.timestep, **kwargs
        )

    def occlusion(self, penalty: float = 1.0, containment: float = 0.95) -> float:
        return occlusion_for_box(
            self.box,
            self.existing_boxes,
            self.cameras[self.camera_index],
            penalty=penalty,
            containment=containment,
        )


@dataclass(frozen=True)
class SearchOutcome:
    placement: Placement
    score: float
    candidate_scores: tuple


def hard_example_search(
    scene: SceneGraph,
    agent: object,
    cameras: Sequence[Camera],
    policy: PlacementPolicy,
    scorer: Callable[[Candidate], float],
    *,
    space: DrivableSpace,
    existing_boxes: Sequence[Box3D],
    rng: np.random.Generator,
    timestep: int = 0,
    camera_index: int = 0,
    camera_mask: np.ndarray | None = None,
    visibility: VisibilityInputs | None = None,
) -> SearchOutcome:
    """Draw `policy.seeds_per_search` valid placements, keep the scorer's argmax.

    Ties go to the earliest-drawn candidate.  Seeds that exhaust their
    attempt budget are skipped; if every seed fails,
    NoPlacementPossibleError is raised.
    """
    candidates: list[Placement] = []
    for _ in range(policy.seeds_per_search):
        p = sample_placement(
            space,
            policy,
            existing_boxes,
            agent.box,
            rng,
            camera_mask=camera_mask,
            visibility=visibility,
        )
        if p is not None:
            candidates.append(p)
    if not candidates:
        raise NoPlacementPossibleError(
            f"no valid candidate in {policy.seeds_per_search} seeds "
            f"x {policy.max_attempts} attempts"
        )
    scores = [
        float(
            scorer(
                Candidate(
                    placement=p,
                    agent=agent,
                    camera_index=camera_index,
                    cameras=tuple(cameras),
                    existing_boxes=tuple(existing_boxes),
                    scene=scene,
                    timestep=timestep,
                )
            )
        )
        for p in candidates
    ]
    best = int(np.argmax(scores))  # argmax returns the first maximum
    return SearchOutcome(
        placement=candidates[best], score=scores[best], candidate_scores=tuple(scores)
    )


# ---------------------------------------------------------------------------
# full per-frame placement pass


@dataclass(frozen=True)
class PlacedAgent:
    instance_id: str
    asset_id: str
    label: str
    camera_index: int
    node_id: int
    placement: Placement
    score: float | None = None
    candidate_scores: tuple | None = None


@dataclass(frozen=True)
class AugmentResult:
    """Outcome of one placement pass: the augmented scene graph, boxes for
    the inserted agents, per-agent records and per-camera warning notes."""

    scene: SceneGraph
    placed: tuple
    inserted_boxes: tuple
    warnings: tuple


def _builtin_scorer(policy: PlacementPolicy, mode: str) -> Callable[[Candidate], float]:
    sign = -1.0 if mode == MODE_MIN_OCCLUSION else 1.0

    def score(cand: Candidate) -> float:
        return sign * cand.occlusion(
            penalty=policy.occlusion_penalty, containment=policy.occlusion_containment
        )

    return score


def place_agents(
    scene: SceneGraph,
    cameras: Sequence[Camera],
    agents: Sequence,
    policy: PlacementPolicy,
    road: BevMap,
    existing_boxes: Sequence[Box3D],
    rng: np.random.Generator,
    *,
    timestep: int = 0,
    base_depths: Sequence[np.ndarray] | None = None,
    scorer: Callable[[Candidate], float] | None = None,
    workers: int | None = None,
) -> AugmentResult:
    """Insert up to agents_per_camera agents for each camera.

    Assets are drawn uniformly per slot.  Depth maps are re-rendered after
    every acceptance so later visibility checks see earlier insertions,
    and each accepted box is carved out of the drivable space.  Cameras
    with no remaining space produce warnings, never an error.
    """
    if policy.mode == MODE_SCORER_MAX and scorer is None:
        raise ConfigError("scorer-max mode needs a scorer callback")
    if not agents:
        raise ConfigError("empty agent list")
    agents = list(agents)
    max_radius = max(a.box.circumradius() for a in agents)
    widest = max(a.box.width for a in agents)
    longest = max(a.box.length for a in agents)

    warnings: list[str] = []
    try:
        space = build_drivable_space(
            road, existing_boxes, cameras, (widest, longest), margin=policy.collision_margin
        )
    except NoPlacementPossibleError as err:
        warnings.extend(f"camera {i}: {err}" for i in range(len(cameras)))
        return AugmentResult(scene=scene, placed=(), inserted_boxes=(), warnings=tuple(warnings))

    if base_depths is None:
        depths = [render_depth(scene, cam, timestep, workers=workers) for cam in cameras]
    else:
        depths = list(base_depths)

    boxes_now = list(existing_boxes)
    placed_nodes: list[RigidNode] = []
    placed: list[PlacedAgent] = []
    inserted_boxes: list[Box3D] = []
    next_id = scene.next_node_id()

    use_search = policy.mode in (MODE_MIN_OCCLUSION, MODE_MAX_OCCLUSION, MODE_SCORER_MAX)
    active_scorer = scorer if policy.mode == MODE_SCORER_MAX else (
        _builtin_scorer(policy, policy.mode) if use_search else None
    )

    for ci, cam in enumerate(cameras):
        cam_mask = space.frustum_masks[ci]
        for slot in range(policy.agents_per_camera):
            agent = agents[int(rng.integers(len(agents)))]
            vis = VisibilityInputs(
                cameras=tuple(cameras),
                depth_maps=tuple(depths),
                agent_means=agent.primitives.means,
            )
            score: float | None = None
            cand_scores: tuple | None = None
            if use_search:
                try:
                    outcome = hard_example_search(
                        scene,
                        agent,
                        cameras,
                        policy,
                        active_scorer,
                        space=space,
                        existing_boxes=boxes_now,
                        rng=rng,
                        timestep=timestep,
                        camera_index=ci,
                        camera_mask=cam_mask,
                        visibility=vis,
                    )
                except NoPlacementPossibleError as err:
                    warnings.append(f"camera {ci} slot {slot}: {err}")
                    continue
                chosen = outcome.placement
                score = outcome.score
                cand_scores = outcome.candidate_scores
            else:
                chosen = sample_placement(
                    space,
                    policy,
                    boxes_now,
                    agent.box,
                    rng,
                    camera_mask=cam_mask,
                    visibility=vis,
                )
                if chosen is None:
                    warnings.append(
                        f"camera {ci} slot {slot}: no valid placement in "
                        f"{policy.max_attempts} attempts"
                    )
                    continue

            node = RigidNode(
                node_id=next_id,
                label=agent.label,
                primitives=agent.primitives,
                transforms={timestep: chosen.transform},
                box=agent.box,
            )
            placed_nodes.append(node)
            record = PlacedAgent(
                instance_id=f"agent:{len(placed):04d}",
                asset_id=getattr(agent, "agent_id", agent.label),
                label=agent.label,
                camera_index=ci,
                node_id=next_id,
                placement=chosen,
                score=score,
                candidate_scores=cand_scores,
            )
            placed.append(record)
            inserted_boxes.append(chosen.box)
            boxes_now.append(chosen.box)
            next_id += 1

            space.carve(chosen.box, max_radius + policy.collision_margin)
            depths = [
                render_depth(scene, c, timestep, extra_nodes=tuple(placed_nodes), workers=workers)
                for c in cameras
            ]

    out_scene = replace(scene, rigid_nodes=scene.rigid_nodes + tuple(placed_nodes))
    return AugmentResult(
        scene=out_scene,
        placed=tuple(placed),
        inserted_boxes=tuple(inserted_boxes),
        warnings=tuple(warnings),
    )
