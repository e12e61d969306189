"""Shared builders for randomized test inputs (all explicitly seeded)."""

from __future__ import annotations

import numpy as np

from gsaug import Box3D, Camera, GaussianSet, RigidTransform


def random_quats(rng: np.random.Generator, n: int) -> np.ndarray:
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 0] < 0.0] *= -1.0
    return q


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    from gsaug import quat_to_matrix

    return quat_to_matrix(random_quats(rng, 1)[0])


def random_transform(rng: np.random.Generator, t_scale: float = 5.0) -> RigidTransform:
    return RigidTransform(random_rotation(rng), rng.uniform(-t_scale, t_scale, 3))


def random_set(
    rng: np.random.Generator,
    n: int,
    degree: int = 0,
    center=(0.0, 0.0, 6.0),
    spread: float = 2.0,
    scale_range=(0.05, 0.6),
) -> GaussianSet:
    from gsaug import coeff_count

    return GaussianSet(
        opacities=rng.uniform(0.05, 0.95, n),
        means=rng.normal(scale=spread, size=(n, 3)) + np.asarray(center, dtype=np.float64),
        quats=random_quats(rng, n),
        scales=rng.uniform(*scale_range, (n, 3)),
        sh_coeffs=rng.normal(scale=0.3, size=(n, coeff_count(degree), 3)),
    )


def frontal_camera(width: int = 64, height: int = 64, focal: float = 50.0) -> Camera:
    """Camera at the origin looking along +z (world == camera frame)."""
    return Camera(
        fx=focal, fy=focal, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
        width=width, height=height,
        extrinsics=RigidTransform.identity(),
    )


def random_camera(rng: np.random.Generator, width: int = 64, height: int = 64) -> Camera:
    """Random pose near the origin, looking roughly at the +z cluster."""
    from gsaug import quat_to_matrix

    # small random rotation so the z ~ 6 primitive cluster stays in view
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, 0.25)
    q = np.concatenate([[np.cos(angle / 2.0)], np.sin(angle / 2.0) * axis])
    rot = quat_to_matrix(q)
    trans = rng.uniform(-0.5, 0.5, 3)
    return Camera(
        fx=rng.uniform(40.0, 70.0),
        fy=rng.uniform(40.0, 70.0),
        cx=(width - 1) / 2.0 + rng.uniform(-2.0, 2.0),
        cy=(height - 1) / 2.0 + rng.uniform(-2.0, 2.0),
        width=width,
        height=height,
        extrinsics=RigidTransform(rot, trans),
    )


def random_box(rng: np.random.Generator, span: float = 10.0) -> Box3D:
    return Box3D(
        center=np.array([
            rng.uniform(-span, span), rng.uniform(-span, span), rng.uniform(0.0, 1.0),
        ]),
        size=np.array([
            rng.uniform(0.5, 3.0), rng.uniform(0.5, 6.0), rng.uniform(0.5, 3.0),
        ]),
        yaw=rng.uniform(0.0, 2.0 * np.pi),
    )


def tiny_agent_set(rng: np.random.Generator, size=(1.8, 4.4, 1.5), n: int = 40) -> GaussianSet:
    """Agent-like cloud inside a canonical box footprint, resting on z=0."""
    w, l, h = size
    means = np.column_stack([
        rng.uniform(-l / 2.0, l / 2.0, n),
        rng.uniform(-w / 2.0, w / 2.0, n),
        rng.uniform(0.0, h, n),
    ])
    return GaussianSet(
        opacities=rng.uniform(0.6, 0.95, n),
        means=means,
        quats=random_quats(rng, n),
        scales=rng.uniform(0.05, 0.12, (n, 3)),
        sh_coeffs=rng.normal(scale=0.2, size=(n, 1, 3)),
    )
