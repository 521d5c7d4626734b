"""Terrain-traversal motion toolkit.

2.5D terrain modeling and generation, navigation-graph path planning,
signed-distance motion quality losses, diffusion sampling with a pluggable
denoiser, kinematic motion optimization, and motion-tracking rewards.
"""

from . import (
    cli,
    diffusion,
    losses,
    motion,
    navgraph,
    optimize,
    pipeline,
    rotmath,
    terrain,
    toydata,
    tracking,
)
from .diffusion import (
    ConstantDenoiser,
    ExecDenoiser,
    GenerationConfig,
    GenerationContext,
    LinearDenoiser,
    NoiseSchedule,
    ReplayDenoiser,
    autoregressive_generate,
    blend_denoise,
    ddim_sample,
    ddim_step,
    make_schedule,
    q_sample,
)
from .losses import (
    LossBreakdown,
    contact_loss,
    jerk_loss,
    joint_consistency_loss,
    penetration_loss,
    reconstruction_loss,
    selection_score,
    velocity_loss,
)
from .motion import (
    MotionClip,
    MotionFrame,
    Skeleton,
    canonicalize,
    default_skeleton,
    forward_kinematics,
    load_clip,
    load_skeleton,
    sample_surface_points,
    save_clip,
    save_skeleton,
    window,
)
from .navgraph import (
    NavGraph,
    NavGraphParams,
    NoPathError,
    PathResult,
    astar_plan,
    build_graph,
    edge_cost,
    line_box_intersect,
)
from .optimize import AdamState, OptimizeConfig, adam_init, adam_step, optimize_motion
from .pipeline import PipelineConfig, cmd_pipeline
from .terrain import (
    HeightBounds,
    LocalHeightmap,
    TerrainGrid,
    augment_with_boxes,
    compute_noninterference_bounds,
    flatten_2x2,
    gen_random_boxes,
    gen_random_walk,
    load_terrain,
    sample_local_heightmap,
    save_terrain,
    sd_box,
    sd_terrain,
    slice_terrain,
)
from .tracking import (
    CharacterState,
    FailureStats,
    joint_tracking_error,
    pose_termination,
    prioritized_sample,
    reward_total,
)

__version__ = "0.1.0"
