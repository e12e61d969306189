"""Gaussian scene primitives and exact rigid-body transforms.

Conventions used throughout the package: right-handed world frame, z up,
meters, radians.  Quaternions are stored (w, x, y, z) with w >= 0.  A
Gaussian's covariance is R(q) diag(s^2) R(q)^T, so transforming a set by a
rigid motion only moves means and left-composes rotations; opacity, scale
and spherical-harmonic coefficients are carried over untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import FormatError, InvalidPrimitiveError, InvalidRotationError

ROTATION_TOL = 1e-6
QUAT_NORM_TOL = 1e-6

# Real spherical-harmonic basis constants, degrees 0..3.
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

_COEFFS_PER_DEGREE = {0: 1, 1: 4, 2: 9, 3: 16}
_DEGREE_PER_COEFFS = {v: k for k, v in _COEFFS_PER_DEGREE.items()}


def _as_readonly(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out is a and a.flags.writeable:
        out = a.copy()
    out.setflags(write=False)
    return out


def coeff_count(degree: int) -> int:
    """Number of SH coefficients per channel for a given degree."""
    try:
        return _COEFFS_PER_DEGREE[degree]
    except KeyError:
        raise FormatError(f"unsupported SH degree {degree}; expected 0..3") from None


def degree_of_coeff_count(count: int) -> int:
    try:
        return _DEGREE_PER_COEFFS[count]
    except KeyError:
        raise FormatError(
            f"coefficient count {count} is not a full SH band (expected 1, 4, 9 or 16)"
        ) from None


# ---------------------------------------------------------------------------
# quaternions


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix for unit quaternion(s) in (w, x, y, z) order.

    Accepts shape (4,) or (N, 4); returns (3, 3) or (N, 3, 3).  Input is
    normalized internally so slightly off-unit storage does not skew the
    result.
    """
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    if np.any(norm == 0.0):
        raise InvalidPrimitiveError("zero quaternion has no rotation")
    q = q / norm
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((q.shape[0], 3, 3), dtype=np.float64)
    m[:, 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    m[:, 0, 1] = 2.0 * (x * y - w * z)
    m[:, 0, 2] = 2.0 * (x * z + w * y)
    m[:, 1, 0] = 2.0 * (x * y + w * z)
    m[:, 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    m[:, 1, 2] = 2.0 * (y * z - w * x)
    m[:, 2, 0] = 2.0 * (x * z - w * y)
    m[:, 2, 1] = 2.0 * (y * z + w * x)
    m[:, 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return m[0] if single else m


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b, (w, x, y, z) order.  Broadcasts over rows."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    single = a.ndim == 1 and b.ndim == 1
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    aw, ax, ay, az = a[:, 0], a[:, 1], a[:, 2], a[:, 3]
    bw, bx, by, bz = b[:, 0], b[:, 1], b[:, 2], b[:, 3]
    out = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=np.float64)
    out[:, 0] = aw * bw - ax * bx - ay * by - az * bz
    out[:, 1] = aw * bx + ax * bw + ay * bz - az * by
    out[:, 2] = aw * by - ax * bz + ay * bw + az * bx
    out[:, 3] = aw * bz + ax * by - ay * bx + az * bw
    return out[0] if single else out


def canonical_quat_sign(q: np.ndarray) -> np.ndarray:
    """Flip quaternion rows so w >= 0 (q and -q are the same rotation)."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim == 1:
        return -q if q[0] < 0.0 else q
    flip = q[:, 0] < 0.0
    if not np.any(flip):
        return q
    out = q.copy()
    out[flip] = -out[flip]
    return out


def quaternion_of_rotation(matrix: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z), w >= 0, for a proper rotation matrix.

    Raises InvalidRotationError if the matrix is not orthonormal with
    determinant +1 within ROTATION_TOL.  Uses the largest-pivot branch so
    the extraction stays stable for rotations near pi.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (3, 3):
        raise InvalidRotationError(f"expected (3, 3) matrix, got {m.shape}")
    err = np.max(np.abs(m.T @ m - np.eye(3)))
    if err > ROTATION_TOL:
        raise InvalidRotationError(f"matrix is not orthonormal (residual {err:.3e})")
    det = np.linalg.det(m)
    if abs(det - 1.0) > ROTATION_TOL:
        raise InvalidRotationError(f"matrix determinant {det:.9f} != +1 (reflection?)")

    t = m[0, 0] + m[1, 1] + m[2, 2]
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    q = q / np.linalg.norm(q)
    return canonical_quat_sign(q)


# ---------------------------------------------------------------------------
# rigid transforms


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion x -> rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise InvalidRotationError(f"rotation must be (3, 3), got {r.shape}")
        err = np.max(np.abs(r.T @ r - np.eye(3)))
        if err > ROTATION_TOL:
            raise InvalidRotationError(f"rotation is not orthonormal (residual {err:.3e})")
        if abs(np.linalg.det(r) - 1.0) > ROTATION_TOL:
            raise InvalidRotationError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", _as_readonly(r))
        object.__setattr__(self, "translation", _as_readonly(t))

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_yaw(yaw: float, translation: Sequence[float] = (0.0, 0.0, 0.0)) -> "RigidTransform":
        """Rotation about +z by yaw, then translation."""
        c, s = np.cos(yaw), np.sin(yaw)
        r = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return RigidTransform(r, np.asarray(translation, dtype=np.float64))

    @property
    def quaternion(self) -> np.ndarray:
        return quaternion_of_rotation(self.rotation)

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous form."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (3,) or (N, 3)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)


def compose(second: RigidTransform, first: RigidTransform) -> RigidTransform:
    """Transform equal to applying `first`, then `second`."""
    return RigidTransform(
        second.rotation @ first.rotation,
        second.rotation @ first.translation + second.translation,
    )


# ---------------------------------------------------------------------------
# gaussian primitives


@dataclass(frozen=True)
class GaussianPrimitive:
    """One anisotropic Gaussian with view-dependent color.

    opacity in (0, 1); rotation is a unit quaternion (w, x, y, z); scale
    holds per-axis standard deviations in meters; sh_coeffs has shape
    (K, 3) with K in {1, 4, 9, 16}.
    """

    opacity: float
    mean: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    sh_coeffs: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", _as_readonly(np.asarray(self.mean).reshape(3)))
        object.__setattr__(self, "rotation", _as_readonly(np.asarray(self.rotation).reshape(4)))
        object.__setattr__(self, "scale", _as_readonly(np.asarray(self.scale).reshape(3)))
        sh = np.asarray(self.sh_coeffs, dtype=np.float64)
        if sh.ndim != 2 or sh.shape[1] != 3:
            raise InvalidPrimitiveError(f"sh_coeffs must be (K, 3), got {sh.shape}")
        object.__setattr__(self, "sh_coeffs", _as_readonly(sh))
        self.as_set()  # runs the full field validation

    @property
    def degree(self) -> int:
        return degree_of_coeff_count(self.sh_coeffs.shape[0])

    def as_set(self) -> "GaussianSet":
        return GaussianSet(
            opacities=np.array([self.opacity]),
            means=self.mean[None, :],
            quats=self.rotation[None, :],
            scales=self.scale[None, :],
            sh_coeffs=self.sh_coeffs[None, :, :],
        )


@dataclass(frozen=True)
class GaussianSet:
    """Struct-of-arrays collection of Gaussian primitives.

    Field shapes: opacities (N,), means (N, 3), quats (N, 4) in
    (w, x, y, z) order, scales (N, 3), sh_coeffs (N, K, 3).  Arrays are
    made read-only on construction; operations return new sets and share
    unmodified arrays, so untouched fields stay bit-identical.
    """

    opacities: np.ndarray
    means: np.ndarray
    quats: np.ndarray
    scales: np.ndarray
    sh_coeffs: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "opacities", _as_readonly(np.atleast_1d(self.opacities)))
        object.__setattr__(self, "means", _as_readonly(self.means))
        object.__setattr__(self, "quats", _as_readonly(self.quats))
        object.__setattr__(self, "scales", _as_readonly(self.scales))
        object.__setattr__(self, "sh_coeffs", _as_readonly(self.sh_coeffs))
        self._validate()

    def _validate(self) -> None:
        n = self.opacities.shape[0]
        if self.means.shape != (n, 3):
            raise InvalidPrimitiveError(f"means shape {self.means.shape} != ({n}, 3)")
        if self.quats.shape != (n, 4):
            raise InvalidPrimitiveError(f"quats shape {self.quats.shape} != ({n}, 4)")
        if self.scales.shape != (n, 3):
            raise InvalidPrimitiveError(f"scales shape {self.scales.shape} != ({n}, 3)")
        if self.sh_coeffs.ndim != 3 or self.sh_coeffs.shape[0] != n or self.sh_coeffs.shape[2] != 3:
            raise InvalidPrimitiveError(f"sh_coeffs shape {self.sh_coeffs.shape} != ({n}, K, 3)")
        try:
            degree_of_coeff_count(self.sh_coeffs.shape[1])
        except FormatError as err:
            raise InvalidPrimitiveError(str(err)) from None
        if n == 0:
            return
        if not np.all((self.opacities > 0.0) & (self.opacities < 1.0)):
            bad = int(np.argmin((self.opacities > 0.0) & (self.opacities < 1.0)))
            raise InvalidPrimitiveError(
                f"opacity out of (0, 1) at index {bad}: {self.opacities[bad]}"
            )
        if not np.all(self.scales > 0.0):
            bad = int(np.argmin(np.all(self.scales > 0.0, axis=1)))
            raise InvalidPrimitiveError(f"non-positive scale at index {bad}: {self.scales[bad]}")
        norms = np.linalg.norm(self.quats, axis=1)
        off = np.abs(norms - 1.0)
        if np.max(off) > QUAT_NORM_TOL:
            bad = int(np.argmax(off))
            raise InvalidPrimitiveError(
                f"quaternion at index {bad} is off unit norm by {off[bad]:.3e}"
            )
        if not np.all(np.isfinite(self.means)):
            raise InvalidPrimitiveError("non-finite mean")

    def __len__(self) -> int:
        return self.opacities.shape[0]

    @property
    def degree(self) -> int:
        return degree_of_coeff_count(self.sh_coeffs.shape[1])

    def primitive(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(
            opacity=float(self.opacities[i]),
            mean=self.means[i],
            rotation=self.quats[i],
            scale=self.scales[i],
            sh_coeffs=self.sh_coeffs[i],
        )

    @staticmethod
    def empty(degree: int = 0) -> "GaussianSet":
        k = coeff_count(degree)
        return GaussianSet(
            opacities=np.empty(0),
            means=np.empty((0, 3)),
            quats=np.empty((0, 4)),
            scales=np.empty((0, 3)),
            sh_coeffs=np.empty((0, k, 3)),
        )

    def padded_to_degree(self, degree: int) -> "GaussianSet":
        """Zero-pad SH coefficients up to `degree`.

        Zero coefficients in higher bands contribute nothing, so evaluated
        colors are unchanged.  Used when mixing nodes of different degree
        in one render pass.
        """
        k = coeff_count(degree)
        have = self.sh_coeffs.shape[1]
        if have == k:
            return self
        if have > k:
            raise FormatError(f"cannot pad degree {self.degree} down to {degree}")
        sh = np.zeros((len(self), k, 3))
        sh[:, :have, :] = self.sh_coeffs
        return replace(self, sh_coeffs=sh)

    @staticmethod
    def concatenate(parts: Sequence["GaussianSet"], pad_degrees: bool = False) -> "GaussianSet":
        parts = [p for p in parts if len(p) > 0]
        if not parts:
            return GaussianSet.empty()
        degrees = {p.degree for p in parts}
        if len(degrees) > 1:
            if not pad_degrees:
                raise FormatError(f"mixed SH degrees {sorted(degrees)} in concatenate")
            top = max(degrees)
            parts = [p.padded_to_degree(top) for p in parts]
        return GaussianSet(
            opacities=np.concatenate([p.opacities for p in parts]),
            means=np.concatenate([p.means for p in parts]),
            quats=np.concatenate([p.quats for p in parts]),
            scales=np.concatenate([p.scales for p in parts]),
            sh_coeffs=np.concatenate([p.sh_coeffs for p in parts]),
        )

    def covariances(self) -> np.ndarray:
        """World covariances R diag(s^2) R^T, shape (N, 3, 3)."""
        r = quat_to_matrix(self.quats)
        m = r * self.scales[:, None, :]
        return np.einsum("nij,nkj->nik", m, m)


def apply_rigid_transform(primitives: GaussianSet, transform: RigidTransform) -> GaussianSet:
    """Move a Gaussian set by a rigid motion.

    Means go to R mu + t and each orientation quaternion is left-composed
    with the quaternion of R (then sign-normalized to w >= 0).  Opacity,
    scale and SH coefficients are shared with the input arrays, hence
    bit-identical.  Covariances transform congruently: R Sigma R^T.
    """
    q_r = quaternion_of_rotation(transform.rotation)
    means = primitives.means @ transform.rotation.T + transform.translation
    quats = canonical_quat_sign(quat_multiply(q_r[None, :], primitives.quats))
    return GaussianSet(
        opacities=primitives.opacities,
        means=means,
        quats=quats,
        scales=primitives.scales,
        sh_coeffs=primitives.sh_coeffs,
    )


# ---------------------------------------------------------------------------
# spherical harmonics


def sh_evaluate(coeffs: np.ndarray, view_direction: np.ndarray) -> np.ndarray:
    """Evaluate real SH color at unit view direction(s).

    coeffs: (K, 3) or (N, K, 3); view_direction: (3,) or (N, 3), assumed
    normalized by the caller.  Returns RGB in [0, 1] (0.5 offset applied
    to the band sum, then clamped), shape (3,) or (N, 3).
    """
    c = np.asarray(coeffs, dtype=np.float64)
    d = np.asarray(view_direction, dtype=np.float64)
    single = c.ndim == 2
    if single:
        c = c[None, :, :]
        d = d.reshape(1, 3)
    if c.ndim != 3 or c.shape[2] != 3:
        raise FormatError(f"coeffs must be (N, K, 3), got {c.shape}")
    if d.shape != (c.shape[0], 3):
        raise FormatError(f"directions shape {d.shape} does not match {c.shape[0]} coefficient rows")
    degree = degree_of_coeff_count(c.shape[1])

    x, y, z = d[:, 0:1], d[:, 1:2], d[:, 2:3]
    rgb = SH_C0 * c[:, 0, :]
    if degree >= 1:
        rgb = rgb - SH_C1 * y * c[:, 1, :] + SH_C1 * z * c[:, 2, :] - SH_C1 * x * c[:, 3, :]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        rgb = (
            rgb
            + SH_C2[0] * xy * c[:, 4, :]
            + SH_C2[1] * yz * c[:, 5, :]
            + SH_C2[2] * (2.0 * zz - xx - yy) * c[:, 6, :]
            + SH_C2[3] * xz * c[:, 7, :]
            + SH_C2[4] * (xx - yy) * c[:, 8, :]
        )
    if degree >= 3:
        rgb = (
            rgb
            + SH_C3[0] * y * (3.0 * xx - yy) * c[:, 9, :]
            + SH_C3[1] * xy * z * c[:, 10, :]
            + SH_C3[2] * y * (4.0 * zz - xx - yy) * c[:, 11, :]
            + SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * c[:, 12, :]
            + SH_C3[4] * x * (4.0 * zz - xx - yy) * c[:, 13, :]
            + SH_C3[5] * z * (xx - yy) * c[:, 14, :]
            + SH_C3[6] * x * (xx - 3.0 * yy) * c[:, 15, :]
        )
    rgb = np.clip(rgb + 0.5, 0.0, 1.0)
    return rgb[0] if single else rgb


# ---------------------------------------------------------------------------
# scene graph


@dataclass(frozen=True)
class StaticNode:
    """A background node: world-frame Gaussians that never move."""

    node_id: int
    label: str
    primitives: GaussianSet


@dataclass(frozen=True)
class RigidNode:
    """A rigid dynamic object: canonical-frame Gaussians plus a pose track.

    `transforms` maps timestep -> canonical-to-world motion.  A node absent
    from a timestep is simply not rendered there.  `box` is the canonical
    (yaw 0, origin-centered) bounding box when known.
    """

    node_id: int
    label: str
    primitives: GaussianSet
    transforms: Mapping[int, RigidTransform]
    box: object = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "transforms", dict(self.transforms))
        for t in self.transforms:
            if not isinstance(t, (int, np.integer)) or t < 0:
                raise FormatError(f"timestep keys must be non-negative ints, got {t!r}")

    def pose_at(self, timestep: int) -> RigidTransform | None:
        return self.transforms.get(timestep)

    def world_primitives(self, timestep: int) -> GaussianSet | None:
        pose = self.pose_at(timestep)
        if pose is None:
            return None
        return apply_rigid_transform(self.primitives, pose)


@dataclass(frozen=True)
class SceneGraph:
    """Static background plus rigid dynamic nodes.

    `morphable_nodes` is a reserved extension slot for articulated objects;
    it must stay empty in this version and flattening refuses non-empty
    content rather than rendering it wrong.
    """

    static_nodes: tuple
    rigid_nodes: tuple
    num_timesteps: int = 1
    morphable_nodes: tuple = field(default=())

    def __post_init__(self) -> None:
        statics = tuple(
            n if isinstance(n, StaticNode) else StaticNode(i, f"static-{i}", n)
            for i, n in enumerate(self.static_nodes)
        )
        object.__setattr__(self, "static_nodes", statics)
        object.__setattr__(self, "rigid_nodes", tuple(self.rigid_nodes))
        object.__setattr__(self, "morphable_nodes", tuple(self.morphable_nodes))
        if self.num_timesteps < 1:
            raise FormatError("num_timesteps must be >= 1")
        ids = [n.node_id for n in self.rigid_nodes]
        if len(ids) != len(set(ids)):
            raise FormatError("rigid node ids must be unique")
        for t_map in (n.transforms for n in self.rigid_nodes):
            for t in t_map:
                if t >= self.num_timesteps:
                    raise FormatError(f"pose at timestep {t} >= num_timesteps {self.num_timesteps}")

    def flatten(self, timestep: int, extra_nodes: Sequence = ()) -> GaussianSet:
        """World-frame union of everything visible at `timestep`.

        `extra_nodes` may hold GaussianSet (already world-frame) or
        RigidNode entries; they are appended after the scene's own nodes so
        global blending order ties stay reproducible.
        """
        if self.morphable_nodes:
            raise FormatError("morphable nodes are reserved and cannot be rendered")
        if not 0 <= timestep < self.num_timesteps:
            raise FormatError(f"timestep {timestep} outside [0, {self.num_timesteps})")
        parts = [n.primitives for n in self.static_nodes]
        for node in self.rigid_nodes:
            world = node.world_primitives(timestep)
            if world is not None:
                parts.append(world)
        for extra in extra_nodes:
            if isinstance(extra, GaussianSet):
                parts.append(extra)
            elif isinstance(extra, RigidNode):
                world = extra.world_primitives(timestep)
                if world is not None:
                    parts.append(world)
            else:
                raise FormatError(f"cannot flatten extra node of type {type(extra).__name__}")
        return GaussianSet.concatenate(parts, pad_degrees=True)

    def next_node_id(self) -> int:
        taken = [n.node_id for n in self.rigid_nodes] + [n.node_id for n in self.static_nodes]
        return max(taken, default=-1) + 1
