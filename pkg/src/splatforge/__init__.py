"""splatforge: 3D Gaussian splatting content generation.

Differentiable tile-based splat rendering, a multi-view loss stack
(color, depth, mask, feature), guided optimization against pluggable
generation services, textured mesh extraction, and a prompt
self-optimization loop.
"""

from .baking import TexturedMesh, bake_texture, default_baking_cameras
from .buffers import ImageBuffer
from .cameras import Camera, CameraSampler, TrainingPhase, sample_training_camera
from .config import ConfigError, ProjectConfig, load_project_config
from .density import DensityGrid, sample_density
from .gaussians import (
    GaussianCloud,
    GaussianPrimitive,
    covariance_from,
    gaussian_eval,
    init_cloud,
)
from .guidance import (
    GuidanceError,
    GuidanceRequest,
    GuidanceResponse,
    ReferenceGuidance,
    RemoteGuidance,
    mv_sds_loss,
)
from .losses import LossConfig, LossReport, psnr, ssim
from .meshing import Mesh, marching_cubes
from .meshrender import render_mesh
from .optimizer import DEFAULT_LRS
from .prompt import (
    OptimizationTranscript,
    PromptClients,
    PromptStudioError,
    UserRequest,
    optimize,
)
from .providers import (
    FileDepthPrior,
    FileMaskPrior,
    GroundTruthDepthPrior,
    GroundTruthMaskPrior,
)
from .rasterizer import (
    GradientBuffers,
    RenderOutput,
    UpstreamGradients,
    composite_pixel,
    render,
    render_backward,
)
from .refine import refine_texture, run_texture_refinement
from .storage import (
    load_cloud,
    load_depth,
    load_image,
    load_mesh,
    save_cloud,
    save_depth,
    save_image,
    save_mesh,
    turntable_strip,
)
from .trainer import TrainConfig, TrainingProviders, TrainResult, resolution_at, train
from .unwrap import UnwrapReport, uv_unwrap

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "CameraSampler",
    "ConfigError",
    "DEFAULT_LRS",
    "DensityGrid",
    "FileDepthPrior",
    "FileMaskPrior",
    "GaussianCloud",
    "GaussianPrimitive",
    "GradientBuffers",
    "GroundTruthDepthPrior",
    "GroundTruthMaskPrior",
    "GuidanceError",
    "GuidanceRequest",
    "GuidanceResponse",
    "ImageBuffer",
    "LossConfig",
    "LossReport",
    "Mesh",
    "OptimizationTranscript",
    "ProjectConfig",
    "PromptClients",
    "PromptStudioError",
    "ReferenceGuidance",
    "RemoteGuidance",
    "RenderOutput",
    "TexturedMesh",
    "TrainConfig",
    "TrainResult",
    "TrainingPhase",
    "TrainingProviders",
    "UnwrapReport",
    "UpstreamGradients",
    "UserRequest",
    "bake_texture",
    "composite_pixel",
    "covariance_from",
    "default_baking_cameras",
    "gaussian_eval",
    "init_cloud",
    "load_cloud",
    "load_depth",
    "load_image",
    "load_mesh",
    "load_project_config",
    "marching_cubes",
    "mv_sds_loss",
    "optimize",
    "psnr",
    "refine_texture",
    "render",
    "render_backward",
    "render_mesh",
    "resolution_at",
    "run_texture_refinement",
    "sample_density",
    "sample_training_camera",
    "save_cloud",
    "save_depth",
    "save_image",
    "save_mesh",
    "ssim",
    "train",
    "turntable_strip",
    "uv_unwrap",
]
