"""Next-best-view path planning over synthetic scenes.

Core pieces: signed-distance scenes with a sphere-traced depth camera
(scene_sim), coarse TSDF fusion and occupancy queries (voxel_map), a
surrogate uncertainty field with viewpoint information gain (gain_field),
filtered viewpoint sampling (sampler), a small MLP gain-field approximator
(approximator), informative A*/RRT planners (planner), the step loop
(pipeline), geometry metrics (metrics) and a CLI (cli).
"""

from .scene_sim import (
    NO_HIT,
    BUILTIN_SCENES,
    DepthImage,
    SceneConfig,
    ScenePrimitive,
    Viewpoint,
    render_depth,
    scene_sdf,
)
from .voxel_map import OccupancyLabel, VoxelMap
from .gain_field import (
    UncertaintyField,
    decay_uncertainty,
    evaluate_viewpoint,
    information_gain,
    view_depth,
    viewpoint_uncertainty,
)
from .sampler import GainSampleSet, SamplingError, direction_candidates, select_views
from .approximator import (
    GainApproximator,
    NetworkConfig,
    TrainingDivergedError,
    fit,
    fit_points,
    gradient_check,
)
from .planner import (
    NoPathError,
    PlannerConfig,
    ViewPath,
    ip_cost,
    path_gain,
    plan_astar,
    plan_rrt,
    rank_priority,
)
from .pipeline import (
    RunAbortedError,
    RunRecord,
    SchemaError,
    StepReport,
    VariantFlags,
    run_experiment,
    run_step,
)
from .metrics import (
    GeometryMetrics,
    SurfaceSampleSet,
    geometry_metrics,
    sample_gt_surface,
    sample_reconstructed_surface,
)
from .config import ConfigError, RunManifest, load_manifest, load_scene_file, resolve_scene

__version__ = "0.1.0"
