"""Scene augmentation for Gaussian-splat driving scenes.

Insert reconstructed agents into pre-built scenes at collision-free,
visibility-checked poses, render the result through a forward splatting
renderer, and emit exact 3D box annotations for every inserted agent.
"""

from .assets import (
    Agent,
    AssetLibrary,
    IcpResult,
    box_containment,
    fit_canonical_box,
    icp_align,
    load_agent,
    save_agent,
)
from .core import (
    GaussianPrimitive,
    GaussianSet,
    RigidNode,
    RigidTransform,
    SceneGraph,
    StaticNode,
    apply_rigid_transform,
    canonical_quat_sign,
    coeff_count,
    compose,
    degree_of_coeff_count,
    quat_multiply,
    quat_to_matrix,
    quaternion_of_rotation,
    sh_evaluate,
)
from .errors import (
    AlignmentError,
    AnnotationError,
    ConfigError,
    FormatError,
    GsaugError,
    InvalidPrimitiveError,
    InvalidRotationError,
    NoPlacementPossibleError,
)
from .placement import (
    MODES,
    BevMap,
    Box3D,
    DrivableSpace,
    Placement,
    PlacementPolicy,
    PlacedAgent,
    SearchOutcome,
    VisibilityInputs,
    build_drivable_space,
    collision_check,
    count_fully_occluded,
    hard_example_search,
    infer_elevation,
    iou_2d,
    nearest_object_pose,
    occlusion_for_box,
    occlusion_score,
    place_agents,
    project_box,
    sample_placement,
    visibility_ratio,
)
from .pipeline import RunConfig, RunReport, run_augment, run_render, validate_run
from .render import (
    Camera,
    Splat2D,
    project_gaussian,
    render,
    render_augmented,
    render_depth,
)
from .sceneio import (
    AnnotationRecord,
    LoadedScene,
    SceneBundle,
    load_scene,
    read_annotations,
    read_asset_manifest,
    read_bev_map,
    read_bundle,
    read_cameras,
    read_gaussians,
    read_ppm,
    write_annotations,
    write_annotation_records,
    write_bev_map,
    write_bundle,
    write_cameras,
    write_gaussians,
    write_image,
)
from .synthetic import (
    make_asset_library,
    make_bulk_scene,
    make_camera_ring,
    make_demo_bundle,
    make_run_config,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
