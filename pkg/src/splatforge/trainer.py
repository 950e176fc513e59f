"""Two-stage optimization loop.

Stage 1 fits geometry and appearance: each step renders a four-view
batch, pulls denoised targets from the guidance provider, adds depth,
mask, and feature supervision where priors exist, backpropagates through
the rasterizer, and takes one Adam step.  Resolution ramps up on a fixed
schedule and density control runs on a fixed interval.  Stage 2 hands
the cloud to the mesh pipeline and refines the baked texture.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .cameras import Camera, CameraSampler, TrainingPhase
from .densify import DensifyStats, densify_and_prune
from .gaussians import GaussianCloud
from .guidance import GuidanceError, GuidanceRequest, mv_sds_loss, timestep_at
from .losses import LossConfig, LossReport, depth_loss, feature_loss, mask_loss
from .optimizer import DEFAULT_LRS, AdamState, adam_step
from .rasterizer import GradientBuffers, UpstreamGradients, render, render_backward

logger = logging.getLogger(__name__)

VIEWS_PER_STEP = 4


class TrainingAborted(RuntimeError):
    """Unrecoverable failure mid-run; carries the partial loss log."""

    def __init__(self, message, reports):
        super().__init__(message)
        self.reports = reports


@dataclass
class TrainConfig:
    prompt: str = ""
    stage1_steps: int = 300
    stage2_steps: int = 60
    ramp_fractions: tuple = (0.30, 0.60)
    resolutions: tuple = (128, 256, 512)
    fixed_fraction: float = 1.0 / 6.0
    azimuth_range: tuple = (-180.0, 180.0)
    elevation_range: tuple = (-30.0, 30.0)
    radius: float = 2.5
    fov_y_deg: float = 49.0
    background: tuple = (1.0, 1.0, 1.0)
    lrs: dict = field(default_factory=lambda: dict(DEFAULT_LRS))
    center_lr_decay: float = 0.1
    densify_interval: int = 50
    densify_stop_fraction: float = 0.8
    grad_threshold: float = 2e-4
    prune_opacity: float = 0.005
    guidance_weight: float = 1.0
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    # Optional override: train only from these (azimuth, elevation) orbits,
    # cycled four per step, instead of the sampled schedule.  Used by the
    # recovery experiment to fit against a fixed set of reference views.
    fixed_views: tuple | None = None

    def __post_init__(self):
        if self.stage1_steps < 1:
            raise ValueError("stage1_steps must be >= 1")
        if self.stage2_steps < 0:
            raise ValueError("stage2_steps must be >= 0")
        lo, hi = self.ramp_fractions
        if not (0.0 < lo < hi < 1.0):
            raise ValueError("ramp_fractions must be increasing within (0, 1)")
        if len(self.resolutions) != 3 or any(r < 1 for r in self.resolutions):
            raise ValueError("resolutions must be three positive sizes")
        if not (0.0 <= self.fixed_fraction < 1.0):
            raise ValueError("fixed_fraction must be in [0, 1)")
        if self.densify_interval < 1:
            raise ValueError("densify_interval must be >= 1")
        if self.grad_threshold <= 0 or self.prune_opacity <= 0:
            raise ValueError("densify thresholds must be > 0")
        if self.guidance_weight < 0:
            raise ValueError("guidance_weight must be >= 0")
        if self.radius <= 0:
            raise ValueError("radius must be > 0")
        missing = set(DEFAULT_LRS) - set(self.lrs)
        if missing:
            raise ValueError(f"learning rates missing for {sorted(missing)}")
        if self.fixed_views is not None and len(self.fixed_views) == 0:
            raise ValueError("fixed_views must not be empty")


@dataclass
class TrainingProviders:
    """External collaborators, each replaceable by a local stand-in.

    guidance: GuidanceRequest -> GuidanceResponse (None disables the term).
    depth_prior / mask_prior: Camera -> (H, W) buffer, or None for
    views without a prior.
    feature_extractor: object with extract() and image_gradient().
    refiner: stage-2 texture refiner, (image, t) -> image (None = blend
    toward the cloud's own canonical renders).
    """

    guidance: object = None
    depth_prior: object = None
    mask_prior: object = None
    feature_extractor: object = None
    refiner: object = None


@dataclass
class TrainResult:
    cloud: GaussianCloud
    reports: list
    mesh: object = None


def resolution_at(fraction: float, config: TrainConfig) -> int:
    """Render size for a stage-1 schedule position; ramp boundaries
    belong to the higher resolution."""
    if not (0.0 <= fraction <= 1.0):
        raise ValueError("fraction must be in [0, 1]")
    lo, hi = config.ramp_fractions
    if fraction < lo:
        return int(config.resolutions[0])
    if fraction < hi:
        return int(config.resolutions[1])
    return int(config.resolutions[2])


def _cameras_for_step(config: TrainConfig, sampler: CameraSampler, step: int) -> list:
    frac = step / config.stage1_steps
    res = resolution_at(frac, config)
    if config.fixed_views is not None:
        n = len(config.fixed_views)
        cams = []
        for k in range(VIEWS_PER_STEP):
            az, el = config.fixed_views[(VIEWS_PER_STEP * step + k) % n]
            cams.append(
                Camera.orbit(
                    az,
                    el,
                    radius=config.radius,
                    fov_y_deg=config.fov_y_deg,
                    width=res,
                    height=res,
                )
            )
        return cams
    base = sampler.sample(TrainingPhase(frac))
    return [c.resized(res, res) for c in base.quadruple()]


def _guidance_targets(config, providers, views, cams, frac):
    if providers.guidance is None or config.guidance_weight == 0.0:
        return None
    request = GuidanceRequest(
        views=views,
        cameras=cams,
        prompt=config.prompt,
        timestep=timestep_at(frac),
        weight=config.guidance_weight,
    )
    try:
        response = providers.guidance(request)
        response.validate_against(request)
    except GuidanceError as exc:
        # Policy: drop the guidance term for this step and keep going.
        logger.warning("guidance unavailable at fraction %.3f: %s", frac, exc)
        return None
    return response.views


def _train_step(cloud, cams, config, providers, frac):
    """Render, assemble the loss, and return (gradients, report)."""
    cfg = config.loss
    outs = [render(cloud, cam, config.background) for cam in cams]
    views = [out.color for out in outs]
    alphas = [out.alpha.data[:, :, 0] for out in outs]
    depths = [out.depth.data[:, :, 0] for out in outs]
    nv = len(views)

    up_color = [np.zeros((cam.height, cam.width, 3)) for cam in cams]
    up_depth = [None] * nv
    up_alpha = [None] * nv
    report = LossReport()

    targets = _guidance_targets(config, providers, views, cams, frac)
    if targets is not None:
        g_loss, g_grads = mv_sds_loss(views, targets, weight=config.guidance_weight)
        report.guidance = g_loss
        for k in range(nv):
            up_color[k] += g_grads[k]

    if targets is not None and providers.feature_extractor is not None and cfg.feature_weight > 0:
        ext = providers.feature_extractor
        for k in range(nv):
            fl, fg = feature_loss(ext.extract(views[k]), ext.extract(targets[k]))
            report.feature += cfg.feature_weight * fl / nv
            if fl > 0.0:
                up_color[k] += cfg.feature_weight / nv * ext.image_gradient(views[k], fg)

    if providers.depth_prior is not None and cfg.depth_weight > 0:
        priors = [providers.depth_prior(cam) for cam in cams]
        with_prior = [k for k in range(nv) if priors[k] is not None]
        for k in with_prior:
            valid = (alphas[k] > cfg.alpha_threshold) & (priors[k] > 0.0)
            bd = depth_loss(depths[k], priors[k], valid, cfg)
            w = cfg.depth_weight / len(with_prior)
            report.scale += w * cfg.depth_alpha * bd.scale
            report.multiscale += w * cfg.depth_beta * bd.multiscale
            report.huber += w * cfg.depth_gamma * bd.huber
            report.depth_total += w * bd.total
            up_depth[k] = w * bd.grad

    if providers.mask_prior is not None and cfg.mask_weight > 0:
        masks = [providers.mask_prior(cam) for cam in cams]
        with_mask = [k for k in range(nv) if masks[k] is not None]
        if with_mask:
            m_loss, m_grads = mask_loss(
                [alphas[k] for k in with_mask], [masks[k] for k in with_mask]
            )
            report.mask = cfg.mask_weight * m_loss
            for j, k in enumerate(with_mask):
                up_alpha[k] = cfg.mask_weight * m_grads[j]

    report.total = report.guidance + report.depth_total + report.mask + report.feature

    grads = GradientBuffers.zeros(len(cloud))
    for k, cam in enumerate(cams):
        upstream = UpstreamGradients(
            color=up_color[k] if np.any(up_color[k]) else None,
            depth=up_depth[k],
            alpha=up_alpha[k],
        )
        if upstream.color is None and upstream.depth is None and upstream.alpha is None:
            continue
        grads.add_(render_backward(cloud, cam, upstream, config.background))
    return grads, report


def _densify_due(step: int, config: TrainConfig) -> bool:
    done = step + 1  # steps completed after this update
    if done % config.densify_interval != 0:
        return False
    stop = config.densify_stop_fraction * config.stage1_steps
    return config.densify_interval <= done <= stop


def train(
    initial_cloud: GaussianCloud,
    config: TrainConfig,
    providers: TrainingProviders | None = None,
) -> TrainResult:
    """Run the full schedule starting from `initial_cloud` (not mutated).

    Returns the fitted cloud and the per-step loss log; with stage-2
    steps configured, also the textured mesh.  Deterministic for a fixed
    seed and deterministic providers.
    """
    if providers is None:
        providers = TrainingProviders()
    initial_cloud.validate()
    cloud = initial_cloud.copy()
    sampler = CameraSampler(
        rng=np.random.default_rng(config.seed),
        radius=config.radius,
        fov_y_deg=config.fov_y_deg,
        azimuth_range=config.azimuth_range,
        elevation_range=config.elevation_range,
        fixed_fraction=config.fixed_fraction,
    )
    state = AdamState.for_cloud(cloud, lrs=config.lrs)
    stats = DensifyStats.zeros(len(cloud))
    reports = []

    for step in range(config.stage1_steps):
        frac = step / config.stage1_steps
        cams = _cameras_for_step(config, sampler, step)
        try:
            grads, report = _train_step(cloud, cams, config, providers, frac)
            report.validate()
        except ValueError as exc:
            raise TrainingAborted(f"step {step} failed: {exc}", reports) from exc
        reports.append(report)
        stats.accumulate(grads)

        state.lrs["centers"] = config.lrs["centers"] * config.center_lr_decay**frac
        adam_step(cloud, grads, state)

        if _densify_due(step, config):
            cloud, stats = densify_and_prune(
                cloud,
                stats,
                state,
                grad_threshold=config.grad_threshold,
                prune_opacity=config.prune_opacity,
            )

    mesh = None
    if config.stage2_steps > 0:
        from .refine import run_texture_refinement

        mesh, stage2_reports = run_texture_refinement(cloud, config, providers)
        reports.extend(stage2_reports)

    cloud.validate()
    if not all(math.isfinite(r.total) for r in reports):
        raise TrainingAborted("non-finite loss in log", reports)
    return TrainResult(cloud=cloud, reports=reports, mesh=mesh)
