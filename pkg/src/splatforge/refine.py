"""Second-stage texture refinement on a frozen mesh.

Geometry is fixed; only the texture atlas moves.  Each step renders the
textured mesh, perturbs the render with noise scaled by a fixed
timestep, asks a refiner provider for a cleaned-up image, and descends
on the squared error between render and cleaned image plus a direct
color loss against reference views.
"""

from __future__ import annotations

import logging

import numpy as np

from .baking import TexturedMesh, _texel_surface, bake_texture, default_baking_cameras
from .buffers import ImageBuffer
from .cameras import CANONICAL_AZIMUTHS, Camera
from .losses import LossReport, color_loss, refine_loss
from .meshrender import render_mesh, texture_gradient

logger = logging.getLogger(__name__)

DEFAULT_T_START = 0.5
REFINE_GRID_RESOLUTION = 48
REFINE_TEXTURE_SIZE = 256
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class IdentityRefiner:
    """Returns the image untouched; the noise-free baseline provider."""

    def __call__(self, image: np.ndarray, t: float) -> np.ndarray:
        return image


class ReferenceBlendRefiner:
    """Pulls the noisy render toward the reference view nearest in
    azimuth, standing in for a diffusion pass."""

    def __init__(self, references, blend: float = 0.5):
        if not references:
            raise ValueError("need at least one reference view")
        if not (0.0 < blend <= 1.0):
            raise ValueError("blend must be in (0, 1]")
        self.references = [(cam, np.asarray(img.data if isinstance(img, ImageBuffer) else img)) for cam, img in references]
        self.blend = blend
        self._active = self.references[0][0]

    def set_view(self, camera: Camera) -> None:
        self._active = camera

    def __call__(self, image: np.ndarray, t: float) -> np.ndarray:
        def gap(pair):
            d = abs(pair[0].azimuth_deg - self._active.azimuth_deg) % 360.0
            return min(d, 360.0 - d)

        ref = min(self.references, key=gap)[1]
        if ref.shape != image.shape:
            raise ValueError(f"reference shape {ref.shape} != render shape {image.shape}")
        return (1.0 - self.blend) * image + self.blend * ref


def refine_texture(
    textured: TexturedMesh,
    cameras,
    refiner=None,
    references=None,
    steps: int = 60,
    t_start: float = DEFAULT_T_START,
    lr: float = 0.05,
    color_mix: float = 0.2,
    background=(1.0, 1.0, 1.0),
    seed: int = 0,
):
    """Optimize the texture with Adam; geometry and UVs stay put.

    references: list of (camera, image) compared against fresh renders
    each step.  Returns (refined TexturedMesh, per-step LossReports).
    Provider failures skip the step.
    """
    cameras = list(cameras)
    if not cameras:
        raise ValueError("need at least one refinement camera")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if not (0.0 <= t_start <= 1.0):
        raise ValueError("t_start must be in [0, 1]")
    if refiner is None:
        refiner = IdentityRefiner()
    references = list(references or [])

    mesh = textured.mesh
    texture = textured.texture.data.copy()
    th = texture.shape[0]
    # updates must stay inside chart footprints; bilinear taps near a
    # chart edge would otherwise bleed into the gutter
    chart_mask = _texel_surface(mesh, th)[0][:, :, None]

    rng = np.random.default_rng(seed)
    m = np.zeros_like(texture)
    v = np.zeros_like(texture)
    reports = []
    for step in range(steps):
        cam = cameras[step % len(cameras)]
        tex_buf = ImageBuffer(texture)
        rendered = render_mesh(mesh, tex_buf, cam, background=background).data
        noisy = rendered + t_start * rng.standard_normal(rendered.shape)
        if hasattr(refiner, "set_view"):
            refiner.set_view(cam)
        try:
            refined = np.asarray(refiner(noisy, t_start), dtype=np.float64)
        except Exception as exc:  # provider trouble must not kill the run
            logger.warning("refiner failed at step %d: %s", step, exc)
            continue
        if refined.shape != rendered.shape:
            logger.warning("refiner returned shape %s at step %d; step skipped", refined.shape, step)
            continue

        l_refine, g_render = refine_loss(refined, rendered)
        grad = texture_gradient(mesh, tex_buf, cam, g_render)

        l_color = 0.0
        if references:
            views = [render_mesh(mesh, tex_buf, c, background=background).data for c, _ in references]
            targets = [img.data if isinstance(img, ImageBuffer) else np.asarray(img) for _, img in references]
            l_color, g_views = color_loss(views, targets, mix=color_mix)
            for (c, _), g in zip(references, g_views):
                grad += texture_gradient(mesh, tex_buf, c, g)

        grad *= chart_mask
        t = step + 1
        m = ADAM_BETA1 * m + (1 - ADAM_BETA1) * grad
        v = ADAM_BETA2 * v + (1 - ADAM_BETA2) * grad**2
        m_hat = m / (1 - ADAM_BETA1**t)
        v_hat = v / (1 - ADAM_BETA2**t)
        texture = np.clip(texture - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS), 0.0, 1.0)

        report = LossReport(refine=l_refine, color=l_color, total=l_refine + l_color)
        report.validate()
        reports.append(report)

    out = TexturedMesh(mesh=mesh, texture=ImageBuffer(texture), written=textured.written)
    return out, reports


def run_texture_refinement(cloud, config, providers):
    """Mesh the cloud, bake a starting texture from its own renders,
    then run the refinement loop.  Stage-two entry point for training.
    """
    from .density import sample_density
    from .meshing import marching_cubes
    from .unwrap import uv_unwrap
    from .rasterizer import render

    grid = sample_density(cloud, resolution=REFINE_GRID_RESOLUTION)
    mesh = marching_cubes(grid)
    if mesh.is_empty:
        logger.warning("empty isosurface; texture stage skipped")
        empty = TexturedMesh(
            mesh=mesh,
            texture=ImageBuffer(np.zeros((REFINE_TEXTURE_SIZE, REFINE_TEXTURE_SIZE, 3))),
            written=np.zeros((REFINE_TEXTURE_SIZE, REFINE_TEXTURE_SIZE), dtype=bool),
        )
        return empty, []

    mesh, _ = uv_unwrap(mesh, texture_size=REFINE_TEXTURE_SIZE)
    size = config.resolutions[-1]
    bake_cams = default_baking_cameras(radius=config.radius, fov_y_deg=config.fov_y_deg, size=size)
    views = [(cam, render(cloud, cam, background=config.background).color) for cam in bake_cams]
    baked = bake_texture(mesh, views, texture_size=REFINE_TEXTURE_SIZE)

    ref_cams = [
        Camera.orbit(az, 0.0, radius=config.radius, fov_y_deg=config.fov_y_deg, width=size, height=size)
        for az in CANONICAL_AZIMUTHS
    ]
    references = [(cam, render(cloud, cam, background=config.background).color) for cam in ref_cams]
    refiner = getattr(providers, "refiner", None) if providers is not None else None
    if refiner is None:
        refiner = ReferenceBlendRefiner(references)

    return refine_texture(
        baked,
        ref_cams,
        refiner=refiner,
        references=references,
        steps=config.stage2_steps,
        background=config.background,
        seed=config.seed,
    )
