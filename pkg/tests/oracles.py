"""Independent reference implementations used to cross-check the package.

Everything here recomputes results from first principles (per-pixel
loops, finite differences, direct formula evaluation) without touching
the tiled rasterizer internals.
"""

from __future__ import annotations

import math

import numpy as np

from splatforge.cameras import Camera
from splatforge.gaussians import GaussianCloud, quat_to_rotmat

# Contribution-rule constants mirrored from the renderer's documented
# behavior (3-sigma footprint, 1/255 skip, alpha cap).
CUTOFF_SQ = 9.0
ALPHA_SKIP = 1.0 / 255.0
ALPHA_MAX = 1.0 - 1e-7
LOWPASS = 0.3


def brute_force_render(cloud: GaussianCloud, camera: Camera, background=(0.0, 0.0, 0.0)):
    """Untiled reference renderer: full depth sort, per-pixel scalar
    compositing over every surviving splat.  Returns (color HxWx3,
    depth HxW, alpha HxW)."""
    bg = np.asarray(background, dtype=np.float64)
    H, W = camera.height, camera.width
    fx, fy, cx, cy = camera.intrinsics()
    R = camera.rotation()

    t = (cloud.centers - camera.position) @ R.T
    opac = cloud.opacities
    keep = (t[:, 2] > camera.near) & (t[:, 2] < camera.far) & (opac >= ALPHA_SKIP)

    splats = []
    for i in np.nonzero(keep)[0]:
        ti = t[i]
        sx = fx * ti[0] / ti[2] + cx
        sy = fy * ti[1] / ti[2] + cy
        J = np.array(
            [
                [fx / ti[2], 0.0, -fx * ti[0] / ti[2] ** 2],
                [0.0, fy / ti[2], -fy * ti[1] / ti[2] ** 2],
            ]
        )
        M = J @ R
        rot = quat_to_rotmat(cloud.rotations[i])
        S = np.diag(np.exp(cloud.log_scales[i]))
        cov3 = rot @ S @ S @ rot.T
        cov2 = M @ cov3 @ M.T + LOWPASS * np.eye(2)
        inv = np.linalg.inv(cov2)
        splats.append((ti[2], i, sx, sy, inv, opac[i], cloud.colors[i]))

    splats.sort(key=lambda s: (s[0], s[1]))

    K = len(splats)
    color = np.tile(bg, (H, W, 1))
    depth = np.zeros((H, W))
    alpha_out = np.zeros((H, W))
    if K == 0:
        return color, depth, alpha_out

    zs = np.array([s[0] for s in splats])
    sxs = np.array([s[2] for s in splats])
    sys_ = np.array([s[3] for s in splats])
    i00 = np.array([s[4][0, 0] for s in splats])
    i01 = np.array([s[4][0, 1] for s in splats])
    i11 = np.array([s[4][1, 1] for s in splats])
    ops = np.array([s[5] for s in splats])
    rgbs = np.array([s[6] for s in splats])

    for row in range(H):
        py = row + 0.5
        for col in range(W):
            px = col + 0.5
            dx = px - sxs
            dy = py - sys_
            m2 = i00 * dx * dx + 2.0 * i01 * dx * dy + i11 * dy * dy
            a = ops * np.exp(-0.5 * np.maximum(m2, 0.0))
            hits = np.nonzero((m2 <= CUTOFF_SQ) & (a >= ALPHA_SKIP))[0]
            T = 1.0
            c_acc = np.zeros(3)
            d_acc = 0.0
            for k in hits:
                ak = min(a[k], ALPHA_MAX)
                w = ak * T
                c_acc = c_acc + rgbs[k] * w
                d_acc += zs[k] * w
                T *= 1.0 - ak
            color[row, col] = c_acc + bg * T
            depth[row, col] = d_acc
            alpha_out[row, col] = 1.0 - T
    return color, depth, alpha_out


def finite_difference(f, x0: np.ndarray, step: float) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    for j in range(x0.size):
        xp = x0.copy()
        xp[j] += step
        xm = x0.copy()
        xm[j] -= step
        grad[j] = (f(xp) - f(xm)) / (2.0 * step)
    return grad


def ssim_reference(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5) -> float:
    """Direct SSIM evaluation: explicit Gaussian window, zero padding,
    per-pixel loop.  Single channel or mean over channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 3:
        return float(np.mean([ssim_reference(a[..., c], b[..., c], window, sigma) for c in range(a.shape[2])]))
    half = window // 2
    ax = np.arange(window) - half
    k1 = np.exp(-(ax**2) / (2 * sigma**2))
    kern = np.outer(k1, k1)
    kern /= kern.sum()
    C1, C2 = 0.01**2, 0.03**2
    H, W = a.shape
    pa = np.zeros((H + 2 * half, W + 2 * half))
    pb = np.zeros_like(pa)
    pa[half : half + H, half : half + W] = a
    pb[half : half + H, half : half + W] = b
    vals = np.empty((H, W))
    for i in range(H):
        for j in range(W):
            wa = pa[i : i + window, j : j + window]
            wb = pb[i : i + window, j : j + window]
            mua = np.sum(kern * wa)
            mub = np.sum(kern * wb)
            va = np.sum(kern * wa * wa) - mua**2
            vb = np.sum(kern * wb * wb) - mub**2
            cov = np.sum(kern * wa * wb) - mua * mub
            vals[i, j] = ((2 * mua * mub + C1) * (2 * cov + C2)) / (
                (mua**2 + mub**2 + C1) * (va + vb + C2)
            )
    return float(np.mean(vals))


def random_scene(rng: np.random.Generator, count: int, spread: float = 0.6) -> GaussianCloud:
    """Well-conditioned random test scene in front of the default orbit."""
    from splatforge.gaussians import _logit  # test-only access

    centers = rng.uniform(-spread, spread, size=(count, 3))
    log_scales = np.log(rng.uniform(0.05, 0.25, size=(count, 3)))
    q = rng.normal(size=(count, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    opac = rng.uniform(0.3, 0.9, size=count)
    colors = rng.uniform(0.05, 0.95, size=(count, 3))
    return GaussianCloud(
        centers=centers,
        log_scales=log_scales,
        rotations=q,
        opacity_logits=_logit(opac),
        colors=colors,
    )
