"""Perspective projection of 3D Gaussians to screen-space splats.

Each Gaussian is mapped to a 2D Gaussian via the local affine (EWA)
approximation: with t the camera-space center and J the perspective
Jacobian at t, the screen covariance is

    cov2d = J R cov3d R^T J^T + LOWPASS * I

where R is the world-to-camera rotation.  The low-pass diagonal keeps
splats at least a fraction of a pixel wide so nothing falls between
pixel centers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cameras import Camera
from .gaussians import GaussianCloud, quat_to_rotmat

LOWPASS = 0.3  # px^2 added to the 2D covariance diagonal
FOOTPRINT_SIGMA = 3.0  # splat support radius in standard deviations
ALPHA_SKIP = 1.0 / 255.0  # contributions below this alpha are dropped


@dataclass
class ProjectedGaussian:
    """One splat: screen center (px), 2x2 screen covariance (px^2),
    view-space depth (the z-buffer value), effective opacity and color."""

    screen: np.ndarray
    cov2d: np.ndarray
    depth: float
    opacity: float
    color: np.ndarray
    index: int


class ProjectionResult:
    """Splats for one view, sorted front to back (ties by primitive index).

    Acts as a sequence of ProjectedGaussian; the rasterizer consumes the
    underlying arrays directly.
    """

    def __init__(self, indices, t_cam, screen, cov2d, inv_cov2d, depth, opacity, color, radius):
        self.indices = indices
        self.t_cam = t_cam
        self.screen = screen
        self.cov2d = cov2d
        self.inv_cov2d = inv_cov2d
        self.depth = depth
        self.opacity = opacity
        self.color = color
        self.radius = radius

    def __len__(self) -> int:
        return len(self.indices)

    def __getitem__(self, i: int) -> ProjectedGaussian:
        return ProjectedGaussian(
            screen=self.screen[i].copy(),
            cov2d=self.cov2d[i].copy(),
            depth=float(self.depth[i]),
            opacity=float(self.opacity[i]),
            color=self.color[i].copy(),
            index=int(self.indices[i]),
        )


def perspective_jacobian(t_cam: np.ndarray, fx: float, fy: float) -> np.ndarray:
    """Jacobian of (fx x/z, fy y/z) at camera-space points t_cam (N, 3).

    Returns (N, 2, 3).  Also the Jacobian of the screen center itself.
    """
    tx, ty, tz = t_cam[:, 0], t_cam[:, 1], t_cam[:, 2]
    J = np.zeros((len(t_cam), 2, 3), dtype=np.float64)
    J[:, 0, 0] = fx / tz
    J[:, 0, 2] = -fx * tx / tz**2
    J[:, 1, 1] = fy / tz
    J[:, 1, 2] = -fy * ty / tz**2
    return J


def compute_cov3d(cloud: GaussianCloud) -> np.ndarray:
    """Batched world-space covariances R diag(s)^2 R^T, shape (N, 3, 3)."""
    R = quat_to_rotmat(cloud.rotations)
    M = R * cloud.scales[:, np.newaxis, :]
    return M @ np.swapaxes(M, 1, 2)


def project(cloud: GaussianCloud, camera: Camera) -> ProjectionResult:
    """Project a cloud into a camera; cull, then sort by view depth.

    Culled: centers behind the near plane, peak alpha below the skip
    threshold, and splats whose 3-sigma footprint misses the image.
    """
    if len(cloud) == 0:
        raise ValueError("cannot project an empty cloud")
    fx, fy, cx, cy = camera.intrinsics()
    R = camera.rotation()
    t = (cloud.centers - camera.position) @ R.T
    opacity = cloud.opacities

    keep = (t[:, 2] > camera.near) & (t[:, 2] < camera.far) & (opacity >= ALPHA_SKIP)
    idx = np.nonzero(keep)[0]
    if len(idx) == 0:
        return _empty_result()
    t = t[idx]

    screen = np.stack(
        [fx * t[:, 0] / t[:, 2] + cx, fy * t[:, 1] / t[:, 2] + cy], axis=1
    )
    J = perspective_jacobian(t, fx, fy)
    M = J @ R[np.newaxis, :, :]
    cov3d = compute_cov3d_subset(cloud, idx)
    cov2d = M @ cov3d @ np.swapaxes(M, 1, 2)
    cov2d[:, 0, 0] += LOWPASS
    cov2d[:, 1, 1] += LOWPASS

    # Conservative per-axis footprint radius from the covariance diagonal.
    radius = FOOTPRINT_SIGMA * np.sqrt(
        np.maximum(cov2d[:, 0, 0], cov2d[:, 1, 1])
    )
    on_screen = (
        (screen[:, 0] + radius > 0.0)
        & (screen[:, 0] - radius < camera.width)
        & (screen[:, 1] + radius > 0.0)
        & (screen[:, 1] - radius < camera.height)
    )
    if not np.all(on_screen):
        idx = idx[on_screen]
        if len(idx) == 0:
            return _empty_result()
        t, screen, cov2d, radius = (
            t[on_screen],
            screen[on_screen],
            cov2d[on_screen],
            radius[on_screen],
        )

    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    inv = np.empty_like(cov2d)
    inv[:, 0, 0] = cov2d[:, 1, 1] / det
    inv[:, 1, 1] = cov2d[:, 0, 0] / det
    inv[:, 0, 1] = -cov2d[:, 0, 1] / det
    inv[:, 1, 0] = -cov2d[:, 1, 0] / det

    order = np.argsort(t[:, 2], kind="stable")
    return ProjectionResult(
        indices=idx[order],
        t_cam=t[order],
        screen=screen[order],
        cov2d=cov2d[order],
        inv_cov2d=inv[order],
        depth=t[order, 2].copy(),
        opacity=cloud.opacities[idx[order]],
        color=cloud.colors[idx[order]],
        radius=radius[order],
    )


def compute_cov3d_subset(cloud: GaussianCloud, idx: np.ndarray) -> np.ndarray:
    R = quat_to_rotmat(cloud.rotations[idx])
    M = R * np.exp(cloud.log_scales[idx])[:, np.newaxis, :]
    return M @ np.swapaxes(M, 1, 2)


def _empty_result() -> ProjectionResult:
    return ProjectionResult(
        indices=np.empty(0, dtype=np.intp),
        t_cam=np.empty((0, 3)),
        screen=np.empty((0, 2)),
        cov2d=np.empty((0, 2, 2)),
        inv_cov2d=np.empty((0, 2, 2)),
        depth=np.empty(0),
        opacity=np.empty(0),
        color=np.empty((0, 3)),
        radius=np.empty(0),
    )
