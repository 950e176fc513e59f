"""Tile-based differentiable rasterizer.

Forward pass: per pixel, front-to-back alpha compositing of the
projected splats,

    C = sum_i c_i a_i T_i + bg * T_N      (color)
    D = sum_i d_i a_i T_i                 (depth, d_i = view-space z)
    A = 1 - T_N                           (accumulated alpha)

with transmittance T_i = prod_{j<i} (1 - a_j) and per-pixel splat alpha
a_i = opacity_i * exp(power).  Contributions outside the 3-sigma
footprint or with alpha below 1/255 are skipped; alpha is capped just
below 1 so transmittance never reaches exactly zero.

The image is processed in 16x16 tiles.  Tiles see the splats whose
footprint box overlaps them, in global depth order, so the per-pixel
math is identical to an untiled renderer.  Tiles are reduced in a fixed
order, which keeps forward and backward bitwise reproducible.

Backward pass: given per-pixel partials of a scalar loss w.r.t. color,
depth, and alpha, produces analytic partials w.r.t. every raw Gaussian
parameter (center, log-scale, quaternion, opacity logit, color), plus
the screen-space positional gradient statistics densification feeds on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .buffers import ImageBuffer
from .cameras import Camera
from .gaussians import (
    GaussianCloud,
    backprop_quat_normalization,
    quat_rotmat_jacobian,
    quat_to_rotmat,
)
from .projection import ALPHA_SKIP, FOOTPRINT_SIGMA, ProjectionResult, perspective_jacobian, project

TILE = 16
ALPHA_MAX = 1.0 - 1e-7
CUTOFF_SQ = FOOTPRINT_SIGMA**2


@dataclass
class RenderOutput:
    color: ImageBuffer
    depth: ImageBuffer
    alpha: ImageBuffer


@dataclass
class GradientBuffers:
    """Per-primitive partials of the training loss w.r.t. raw parameters,
    plus positional-gradient statistics for densification."""

    centers: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    screen_grad_norm: np.ndarray
    visible_count: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "GradientBuffers":
        return cls(
            centers=np.zeros((n, 3)),
            log_scales=np.zeros((n, 3)),
            rotations=np.zeros((n, 4)),
            opacity_logits=np.zeros(n),
            colors=np.zeros((n, 3)),
            screen_grad_norm=np.zeros(n),
            visible_count=np.zeros(n, dtype=np.int64),
        )

    def add_(self, other: "GradientBuffers") -> None:
        self.centers += other.centers
        self.log_scales += other.log_scales
        self.rotations += other.rotations
        self.opacity_logits += other.opacity_logits
        self.colors += other.colors
        self.screen_grad_norm += other.screen_grad_norm
        self.visible_count += other.visible_count


def composite_pixel(contributions, background) -> tuple[np.ndarray, float, float]:
    """Reference front-to-back blend of one pixel.

    `contributions` is an ordered list of (color, alpha, depth) triples,
    nearest first.  Returns (color, depth, alpha).
    """
    bg = np.asarray(background, dtype=np.float64)
    color = np.zeros(3)
    depth = 0.0
    transmittance = 1.0
    for c, a, d in contributions:
        w = a * transmittance
        color += np.asarray(c, dtype=np.float64) * w
        depth += d * w
        transmittance *= 1.0 - a
    color += bg * transmittance
    return color, depth, 1.0 - transmittance


def _splat_alphas(proj: ProjectionResult, sel: np.ndarray, px: np.ndarray, py: np.ndarray):
    """Alpha of each selected splat at each pixel: (K, P) plus the gaussian
    falloff and a mask of clamped entries (needed by the backward pass)."""
    dx = px[np.newaxis, :] - proj.screen[sel, 0][:, np.newaxis]
    dy = py[np.newaxis, :] - proj.screen[sel, 1][:, np.newaxis]
    a00 = proj.inv_cov2d[sel, 0, 0][:, np.newaxis]
    a01 = proj.inv_cov2d[sel, 0, 1][:, np.newaxis]
    a11 = proj.inv_cov2d[sel, 1, 1][:, np.newaxis]
    maha_sq = a00 * dx * dx + 2.0 * a01 * dx * dy + a11 * dy * dy
    g = np.exp(-0.5 * np.maximum(maha_sq, 0.0))
    alpha_raw = proj.opacity[sel][:, np.newaxis] * g
    live = (maha_sq <= CUTOFF_SQ) & (alpha_raw >= ALPHA_SKIP)
    clamped = alpha_raw > ALPHA_MAX
    alpha = np.where(live, np.minimum(alpha_raw, ALPHA_MAX), 0.0)
    return alpha, g, live, clamped, dx, dy


def _tile_bins(proj: ProjectionResult, width: int, height: int):
    """Per-tile splat index lists; splat order inside each list follows the
    global depth sort."""
    ntx = (width + TILE - 1) // TILE
    nty = (height + TILE - 1) // TILE
    x0 = np.clip(((proj.screen[:, 0] - proj.radius) // TILE).astype(int), 0, ntx - 1)
    x1 = np.clip(((proj.screen[:, 0] + proj.radius) // TILE).astype(int), 0, ntx - 1)
    y0 = np.clip(((proj.screen[:, 1] - proj.radius) // TILE).astype(int), 0, nty - 1)
    y1 = np.clip(((proj.screen[:, 1] + proj.radius) // TILE).astype(int), 0, nty - 1)
    oob = (
        (proj.screen[:, 0] + proj.radius < 0)
        | (proj.screen[:, 0] - proj.radius >= width)
        | (proj.screen[:, 1] + proj.radius < 0)
        | (proj.screen[:, 1] - proj.radius >= height)
    )
    bins = []
    order = np.arange(len(proj))
    for ty in range(nty):
        for tx in range(ntx):
            inside = (x0 <= tx) & (tx <= x1) & (y0 <= ty) & (ty <= y1) & ~oob
            bins.append((tx, ty, order[inside]))
    return bins


def _tile_pixels(tx: int, ty: int, width: int, height: int):
    xs = np.arange(tx * TILE, min((tx + 1) * TILE, width))
    ys = np.arange(ty * TILE, min((ty + 1) * TILE, height))
    gx, gy = np.meshgrid(xs, ys)
    return xs, ys, gx.ravel() + 0.5, gy.ravel() + 0.5


def render(cloud: GaussianCloud, camera: Camera, background=(0.0, 0.0, 0.0)) -> RenderOutput:
    """Rasterize the cloud into color, depth, and accumulated alpha."""
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    H, W = camera.height, camera.width
    color = np.tile(bg, (H, W, 1))
    depth = np.zeros((H, W))
    alpha_out = np.zeros((H, W))
    if len(cloud) == 0:
        return RenderOutput(ImageBuffer(color), ImageBuffer(depth), ImageBuffer(alpha_out))

    proj = project(cloud, camera)
    if len(proj) == 0:
        return RenderOutput(ImageBuffer(color), ImageBuffer(depth), ImageBuffer(alpha_out))

    for tx, ty, sel in _tile_bins(proj, W, H):
        if len(sel) == 0:
            continue
        xs, ys, px, py = _tile_pixels(tx, ty, W, H)
        alpha, _, _, _, _, _ = _splat_alphas(proj, sel, px, py)
        one_minus = 1.0 - alpha
        trans = np.cumprod(one_minus, axis=0)
        T = np.vstack([np.ones((1, alpha.shape[1])), trans[:-1]])
        w = alpha * T  # (K, P)
        tile_color = w.T @ proj.color[sel] + trans[-1][:, np.newaxis] * bg
        tile_depth = proj.depth[sel] @ w
        block = (slice(ys[0], ys[-1] + 1), slice(xs[0], xs[-1] + 1))
        shape = (len(ys), len(xs))
        color[block] = tile_color.reshape(shape + (3,))
        depth[block] = tile_depth.reshape(shape)
        alpha_out[block] = (1.0 - trans[-1]).reshape(shape)

    return RenderOutput(ImageBuffer(color), ImageBuffer(depth), ImageBuffer(alpha_out))


@dataclass
class UpstreamGradients:
    """Per-pixel partials of the scalar loss w.r.t. the render outputs.
    Any of the three may be None (treated as zero)."""

    color: np.ndarray | None = None
    depth: np.ndarray | None = None
    alpha: np.ndarray | None = None


def render_backward(
    cloud: GaussianCloud,
    camera: Camera,
    upstream: UpstreamGradients,
    background=(0.0, 0.0, 0.0),
) -> GradientBuffers:
    """Analytic gradients of the loss w.r.t. all raw Gaussian parameters.

    Recomputes the forward compositing per tile, then walks the chain
    image -> splat (alpha, color, depth) -> screen geometry -> world
    parameters.  Gradients are accumulated over tiles in a fixed order.
    """
    H, W = camera.height, camera.width
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    up_c = _check_upstream(upstream.color, (H, W, 3), "color")
    up_d = _check_upstream(upstream.depth, (H, W), "depth")
    up_a = _check_upstream(upstream.alpha, (H, W), "alpha")

    grads = GradientBuffers.zeros(len(cloud))
    if len(cloud) == 0:
        return grads
    proj = project(cloud, camera)
    K = len(proj)
    if K == 0:
        return grads

    # Stage 1: accumulate per-splat gradients in screen space.
    g_screen = np.zeros((K, 2))
    g_inv_cov = np.zeros((K, 2, 2))
    g_opacity = np.zeros(K)
    g_color = np.zeros((K, 3))
    g_depth = np.zeros(K)
    touched = np.zeros(K, dtype=bool)

    for tx, ty, sel in _tile_bins(proj, W, H):
        if len(sel) == 0:
            continue
        xs, ys, px, py = _tile_pixels(tx, ty, W, H)
        block = (slice(ys[0], ys[-1] + 1), slice(xs[0], xs[-1] + 1))
        uc = up_c[block].reshape(-1, 3) if up_c is not None else None
        ud = up_d[block].ravel() if up_d is not None else None
        ua = up_a[block].ravel() if up_a is not None else None
        if uc is None and ud is None and ua is None:
            continue

        alpha, g, live, clamped, dx, dy = _splat_alphas(proj, sel, px, py)
        one_minus = 1.0 - alpha
        trans = np.cumprod(one_minus, axis=0)
        T = np.vstack([np.ones((1, alpha.shape[1])), trans[:-1]])
        w = alpha * T

        # u_i = upstream dotted with this splat's per-pixel contribution.
        P = alpha.shape[1]
        u = np.zeros((len(sel), P))
        v = np.zeros(P)  # factor multiplying the final transmittance
        if uc is not None:
            u += proj.color[sel] @ uc.T
            v += uc @ bg
        if ud is not None:
            u += proj.depth[sel][:, np.newaxis] * ud[np.newaxis, :]
        if ua is not None:
            v -= ua  # alpha_out = 1 - T_N

        wu = w * u
        # suffix[i] = sum_{j > i} w_j u_j + v * T_N
        tail = np.vstack([wu[1:], (v * trans[-1])[np.newaxis, :]])
        suffix = np.cumsum(tail[::-1], axis=0)[::-1]
        d_alpha = T * u - suffix / np.maximum(one_minus, 1e-12)
        d_alpha = np.where(live & ~clamped, d_alpha, 0.0)

        if uc is not None:
            g_color[sel] += w @ uc
        if ud is not None:
            g_depth[sel] += w @ ud
        g_opacity[sel] += np.sum(d_alpha * g, axis=1)
        d_power = d_alpha * alpha  # d alpha/d power = alpha
        a00 = proj.inv_cov2d[sel, 0, 0][:, np.newaxis]
        a01 = proj.inv_cov2d[sel, 0, 1][:, np.newaxis]
        a11 = proj.inv_cov2d[sel, 1, 1][:, np.newaxis]
        # power = -0.5 d^T Ainv d with d = pixel - screen center
        g_screen[sel, 0] += np.sum(d_power * (a00 * dx + a01 * dy), axis=1)
        g_screen[sel, 1] += np.sum(d_power * (a01 * dx + a11 * dy), axis=1)
        g_inv_cov[sel, 0, 0] += np.sum(d_power * (-0.5) * dx * dx, axis=1)
        g_inv_cov[sel, 0, 1] += np.sum(d_power * (-0.5) * dx * dy, axis=1)
        g_inv_cov[sel, 1, 0] += np.sum(d_power * (-0.5) * dy * dx, axis=1)
        g_inv_cov[sel, 1, 1] += np.sum(d_power * (-0.5) * dy * dy, axis=1)
        touched[sel] |= np.any(live, axis=1)

    # Stage 2: chain screen-space gradients to raw world parameters.
    fx, fy, _, _ = camera.intrinsics()
    R = camera.rotation()
    tx_, ty_, tz_ = proj.t_cam[:, 0], proj.t_cam[:, 1], proj.t_cam[:, 2]
    J = perspective_jacobian(proj.t_cam, fx, fy)
    M = J @ R[np.newaxis, :, :]

    # inv(cov2d) -> cov2d (the low-pass ridge is additive, so pass-through)
    inv = proj.inv_cov2d
    g_cov2d = -inv @ g_inv_cov @ inv

    cov3d = _cov3d(cloud, proj.indices)
    g_cov3d = np.swapaxes(M, 1, 2) @ g_cov2d @ M
    g_M = 2.0 * g_cov2d @ M @ cov3d
    g_J = g_M @ R.T[np.newaxis, :, :]

    g_t = np.einsum("kij,ki->kj", J, g_screen)
    g_t[:, 2] += g_depth
    g_t[:, 0] += g_J[:, 0, 2] * (-fx / tz_**2)
    g_t[:, 1] += g_J[:, 1, 2] * (-fy / tz_**2)
    g_t[:, 2] += (
        g_J[:, 0, 0] * (-fx / tz_**2)
        + g_J[:, 0, 2] * (2.0 * fx * tx_ / tz_**3)
        + g_J[:, 1, 1] * (-fy / tz_**2)
        + g_J[:, 1, 2] * (2.0 * fy * ty_ / tz_**3)
    )
    g_center = g_t @ R

    rot = quat_to_rotmat(cloud.rotations[proj.indices])
    scales = np.exp(cloud.log_scales[proj.indices])
    N3 = rot * scales[:, np.newaxis, :]
    g_N = 2.0 * g_cov3d @ N3
    g_scale = np.einsum("krc,krc->kc", g_N, rot)
    g_log_scale = g_scale * scales
    g_rot = g_N * scales[:, np.newaxis, :]
    dRdq = quat_rotmat_jacobian(cloud.rotations[proj.indices])
    g_q_unit = np.einsum("kaij,kij->ka", dRdq, g_rot)
    g_q = backprop_quat_normalization(cloud.rotations[proj.indices], g_q_unit)

    op = proj.opacity
    g_logit = g_opacity * op * (1.0 - op)

    ids = proj.indices
    grads.centers[ids] += g_center
    grads.log_scales[ids] += g_log_scale
    grads.rotations[ids] += g_q
    grads.opacity_logits[ids] += g_logit
    grads.colors[ids] += g_color
    # Positional statistics in NDC units so the densify threshold is
    # resolution independent.
    ndc_grad = g_screen * np.array([W / 2.0, H / 2.0])
    grads.screen_grad_norm[ids] += np.linalg.norm(ndc_grad, axis=1)
    grads.visible_count[ids] += touched.astype(np.int64)
    return grads


def _cov3d(cloud: GaussianCloud, idx: np.ndarray) -> np.ndarray:
    rot = quat_to_rotmat(cloud.rotations[idx])
    M = rot * np.exp(cloud.log_scales[idx])[:, np.newaxis, :]
    return M @ np.swapaxes(M, 1, 2)


def _check_upstream(arr, shape, name):
    if arr is None:
        return None
    arr = np.asarray(arr, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"upstream {name} gradient has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite upstream {name} gradient")
    return arr
