"""Canonical-frame agent assets: loading, ICP alignment, box fitting.

Assets live in the canonical frame: +x forward, +z up, origin at the
center of the footprint.  That convention makes placement a pure
yaw-about-z plus ground translation, and the canonical box maps to the
world annotation box under the same transform.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .core import GaussianSet, RigidTransform, StaticNode, SceneGraph, compose
from .errors import AlignmentError, ConfigError, FormatError
from .placement import Box3D
from . import sceneio


def box_containment(box: Box3D, means: np.ndarray) -> float:
    """Fraction of points inside the box (canonical frame, yaw 0)."""
    lo = box.center - 0.5 * box.size[[1, 0, 2]]  # size is (w, l, h); x spans length
    hi = box.center + 0.5 * box.size[[1, 0, 2]]
    inside = np.all((means >= lo) & (means <= hi), axis=1)
    return float(inside.mean()) if means.shape[0] else 1.0


def fit_canonical_box(primitives: GaussianSet) -> Box3D:
    """Tight canonical box around a primitive set, yaw 0.

    Spans the 1st-99th percentile of means per axis, padded by the largest
    per-axis primitive sigma so thin shells keep their volume.  If the
    trimmed span drops below 99% containment of the means (possible for
    box-uniform blobs where the three axis trims compound), the span is
    widened to the full extent; the box always contains >= 99% of means.
    """
    if len(primitives) == 0:
        raise ConfigError("cannot fit a box around zero primitives")
    means = primitives.means
    pad = primitives.scales.max(axis=0)
    lo = np.percentile(means, 1.0, axis=0) - pad
    hi = np.percentile(means, 99.0, axis=0) + pad
    box = _box_from_span(lo, hi)
    if box_containment(box, means) < 0.99:
        lo = means.min(axis=0) - pad
        hi = means.max(axis=0) + pad
        box = _box_from_span(lo, hi)
    return box


def _box_from_span(lo: np.ndarray, hi: np.ndarray) -> Box3D:
    ext = np.maximum(hi - lo, 1e-9)
    center = 0.5 * (lo + hi)
    # size order is (width, length, height): y-extent, x-extent, z-extent
    return Box3D(center=center, size=(ext[1], ext[0], ext[2]), yaw=0.0)


@dataclass(frozen=True)
class Agent:
    """A placeable asset: canonical-frame Gaussians plus their tight box."""

    agent_id: str
    label: str
    primitives: GaussianSet
    box: Box3D
    node_id: int = 0

    def __post_init__(self) -> None:
        if len(self.primitives) == 0:
            raise ConfigError(f"agent {self.agent_id!r} has no primitives")
        if self.box.yaw != 0.0:
            raise ConfigError(f"agent {self.agent_id!r} canonical box must have yaw 0")
        frac = box_containment(self.box, self.primitives.means)
        if frac < 0.99:
            raise ConfigError(
                f"agent {self.agent_id!r} box contains only {frac:.1%} of primitive means"
            )


def load_agent(path: str | Path) -> Agent:
    """Load a single-node Gaussian file as an agent; fits the box if needed."""
    path = Path(path)
    scene = sceneio.read_gaussians(path)
    nodes = list(scene.static_nodes) + list(scene.rigid_nodes)
    if len(nodes) != 1:
        raise FormatError(f"{path}: agent file must hold exactly one node, found {len(nodes)}")
    node = nodes[0]
    if len(node.primitives) == 0:
        raise FormatError(f"{path}: empty asset (zero primitives)")
    # the box inherits the node label so world boxes and annotation
    # records carry the category without a separate lookup
    return Agent(
        agent_id=path.stem,
        label=node.label,
        primitives=node.primitives,
        box=replace(fit_canonical_box(node.primitives), label=node.label),
        node_id=node.node_id,
    )


def save_agent(path: str | Path, agent: Agent) -> None:
    """Write an agent back out as a single static-node file."""
    scene = SceneGraph(
        static_nodes=(StaticNode(agent.node_id, agent.label, agent.primitives),),
        rigid_nodes=(),
        num_timesteps=1,
    )
    sceneio.write_gaussians(path, scene)


@dataclass(frozen=True)
class AssetLibrary:
    """All loaded agents, grouped by category."""

    agents: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "agents", tuple(self.agents))
        if not self.agents:
            raise ConfigError("asset library is empty")

    @property
    def categories(self) -> tuple:
        seen = []
        for a in self.agents:
            if a.label not in seen:
                seen.append(a.label)
        return tuple(seen)

    def by_category(self, label: str) -> tuple:
        return tuple(a for a in self.agents if a.label == label)

    def __len__(self) -> int:
        return len(self.agents)

    @staticmethod
    def load(manifest_path: str | Path) -> "AssetLibrary":
        listing = sceneio.read_asset_manifest(manifest_path)
        agents = []
        for category, files in listing.items():
            for f in files:
                agent = load_agent(f)
                if agent.label != category:
                    raise FormatError(
                        f"{f}: node label {agent.label!r} does not match manifest "
                        f"category {category!r}"
                    )
                agents.append(agent)
        return AssetLibrary(agents=tuple(agents))


# ---------------------------------------------------------------------------
# ICP


@dataclass(frozen=True)
class IcpResult:
    """Alignment outcome: the source-to-template transform, final RMS and
    the per-iteration RMS trail (non-increasing by construction)."""

    transform: RigidTransform
    rms: float
    residuals: tuple
    iterations: int


def _check_not_degenerate(points: np.ndarray, name: str) -> None:
    if points.shape[0] < 3:
        raise AlignmentError(f"{name}: need at least 3 points, got {points.shape[0]}")
    centered = points - points.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    scale = max(float(sv[0]), 1e-12)
    if sv[1] / scale < 1e-9:
        raise AlignmentError(f"{name}: points are collinear or coincident")


def _fit_rigid(p: np.ndarray, q: np.ndarray) -> RigidTransform:
    """Least-squares rotation+translation taking points p onto q."""
    pm = p.mean(axis=0)
    qm = q.mean(axis=0)
    h = (p - pm).T @ (q - qm)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(r, qm - r @ pm)


def icp_align(
    source_means: np.ndarray,
    template_means: np.ndarray,
    max_iters: int = 50,
    tol: float = 1e-6,
    init: RigidTransform | None = None,
) -> IcpResult:
    """Point-to-point ICP: returns the rigid transform taking source onto
    the template.

    Each iteration matches every (transformed) source point to its nearest
    template point, then solves the closed-form rigid fit for those pairs;
    both steps can only shrink the RMS, so the residual trail is monotone.
    Stops when the RMS improves by less than `tol` or after `max_iters`.
    """
    src0 = np.asarray(source_means, dtype=np.float64)
    tpl = np.asarray(template_means, dtype=np.float64)
    _check_not_degenerate(src0, "source")
    _check_not_degenerate(tpl, "template")

    transform = init if init is not None else RigidTransform.identity()
    src = transform.apply(src0)
    tree = cKDTree(tpl)
    residuals: list[float] = []
    prev = np.inf
    iterations = 0
    for _ in range(max_iters):
        dist, idx = tree.query(src)
        rms = float(np.sqrt(np.mean(dist**2)))
        residuals.append(rms)
        if prev - rms < tol:
            break
        step = _fit_rigid(src, tpl[idx])
        transform = compose(step, transform)
        src = step.apply(src)
        prev = rms
        iterations += 1
    final_dist, _ = tree.query(src)
    final_rms = float(np.sqrt(np.mean(final_dist**2)))
    return IcpResult(
        transform=transform,
        rms=final_rms,
        residuals=tuple(residuals),
        iterations=iterations,
    )
