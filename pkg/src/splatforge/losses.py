"""Training losses and image metrics.

Depth supervision comes in three parts: a scale-invariant log-MSE

    L_scale = (1/2n) sum_i (log D_i - log D~_i + a)^2,
    a = (1/n) sum_i (log D~_i - log D_i)

whose shift term a cancels any global scale of the prior, a multiscale
L1 over area-averaged pyramids, and a Huber term; the combined depth
loss is their weighted sum.  Mask supervision is a plain MSE on
accumulated alpha.  Feature alignment is one minus the cosine
similarity of extracted feature vectors.  The color loss mixes mean
absolute error with structural dissimilarity, (1-lambda) L1 + lambda
(1-SSIM)/2, and the refinement loss is a pixel MSE.

Every loss returns its scalar together with the analytic gradient
w.r.t. the rendered input, shaped like that input, so the results plug
straight into the rasterizer's backward pass.  Losses are exactly zero
on identical inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .buffers import ImageBuffer

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
DEPTH_FLOOR = 1e-6


@dataclass
class LossConfig:
    """Weights and knobs for the full objective.

    depth_alpha/beta/gamma weight the three depth terms; scales and
    scale_weights define the multiscale pyramid; color_mix is the
    L1-vs-D-SSIM mixing factor; the *_weight fields weight whole terms
    in the training objective; alpha_threshold gates which pixels count
    as foreground for depth supervision.
    """

    depth_alpha: float = 1.0
    depth_beta: float = 0.5
    depth_gamma: float = 0.5
    scales: tuple = (1.0, 0.5, 0.25)
    scale_weights: tuple = (0.1, 0.05, 0.025)
    huber_delta: float = 0.5
    color_mix: float = 0.2
    depth_weight: float = 0.5
    mask_weight: float = 0.5
    feature_weight: float = 0.1
    color_weight: float = 1.0
    alpha_threshold: float = 0.5

    def __post_init__(self):
        weights = (
            self.depth_alpha,
            self.depth_beta,
            self.depth_gamma,
            self.depth_weight,
            self.mask_weight,
            self.feature_weight,
            self.color_weight,
        ) + tuple(self.scale_weights)
        if any(w < 0 for w in weights):
            raise ValueError("loss weights must be >= 0")
        if self.huber_delta <= 0:
            raise ValueError("huber delta must be > 0")
        if not (0.0 <= self.color_mix <= 1.0):
            raise ValueError("color mix must be in [0, 1]")
        if len(self.scales) != len(self.scale_weights):
            raise ValueError("scales and scale_weights must pair up")
        if any(not (0.0 < s <= 1.0) for s in self.scales):
            raise ValueError("scale factors must be in (0, 1]")


@dataclass
class LossReport:
    """Per-term scalar values for one training step."""

    scale: float = 0.0
    multiscale: float = 0.0
    huber: float = 0.0
    depth_total: float = 0.0
    mask: float = 0.0
    feature: float = 0.0
    color: float = 0.0
    refine: float = 0.0
    guidance: float = 0.0
    total: float = 0.0

    def validate(self) -> None:
        vals = (
            self.scale,
            self.multiscale,
            self.huber,
            self.depth_total,
            self.mask,
            self.feature,
            self.color,
            self.refine,
            self.guidance,
            self.total,
        )
        if any(not math.isfinite(v) or v < 0 for v in vals):
            raise ValueError(f"loss report has non-finite or negative terms: {self}")


def _plane(x) -> np.ndarray:
    if isinstance(x, ImageBuffer):
        return x.plane()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3 and x.shape[2] == 1:
        return x[:, :, 0]
    return x


def _image(x) -> np.ndarray:
    if isinstance(x, ImageBuffer):
        return x.data
    return np.asarray(x, dtype=np.float64)


def scale_invariant_depth_loss(rendered, prior, valid):
    """Eigen-style scale-invariant depth loss over the valid pixels.

    Returns (loss, gradient w.r.t. rendered depth).  Depths are floored
    at DEPTH_FLOOR before the log; pixels floored this way carry no
    gradient.  Zero valid pixels give loss 0 with zero gradient.
    """
    d = _plane(rendered)
    p = _plane(prior)
    if d.shape != p.shape:
        raise ValueError(f"depth shapes differ: {d.shape} vs {p.shape}")
    valid = np.asarray(valid, dtype=bool)
    n = int(valid.sum())
    grad = np.zeros_like(d)
    if n == 0:
        return 0.0, grad

    dc = np.maximum(d, DEPTH_FLOOR)
    pc = np.maximum(p, DEPTH_FLOOR)
    e = np.where(valid, np.log(dc) - np.log(pc), 0.0)
    mean_e = e.sum() / n
    dev = np.where(valid, e - mean_e, 0.0)
    loss = float(np.sum(dev**2) / (2.0 * n))
    grad = np.where(valid & (d > DEPTH_FLOOR), dev / (n * dc), 0.0)
    return loss, grad


def _block_average(plane, valid, block):
    """Mean of the valid pixels in each block x block cell.

    Returns (cell values, per-cell valid counts); cells with no valid
    pixels hold value 0 and count 0.  Edge cells cover partial blocks.
    """
    H, W = plane.shape
    nh = -(-H // block)
    nw = -(-W // block)
    v = np.zeros((nh * block, nw * block))
    x = np.zeros((nh * block, nw * block))
    v[:H, :W] = valid
    x[:H, :W] = np.where(valid, plane, 0.0)
    counts = v.reshape(nh, block, nw, block).sum(axis=(1, 3))
    sums = x.reshape(nh, block, nw, block).sum(axis=(1, 3))
    vals = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return vals, counts


def multiscale_depth_loss(rendered, prior, valid, scales=(1.0, 0.5, 0.25), weights=(0.1, 0.05, 0.025)):
    """Weighted L1 between area-averaged depth pyramids.

    Each scale factor s must be a reciprocal of an integer block size
    (1 -> 1x1, 0.5 -> 2x2, ...).  Both buffers are averaged over the
    same valid pixels; cells with no valid pixel are excluded.
    """
    d = _plane(rendered)
    p = _plane(prior)
    if d.shape != p.shape:
        raise ValueError(f"depth shapes differ: {d.shape} vs {p.shape}")
    if len(scales) != len(weights):
        raise ValueError("scales and weights must pair up")
    valid = np.asarray(valid, dtype=bool)
    grad = np.zeros_like(d)
    if not valid.any():
        return 0.0, grad

    H, W = d.shape
    loss = 0.0
    for s, lam in zip(scales, weights):
        if not (0.0 < s <= 1.0):
            raise ValueError("scale factors must be in (0, 1]")
        block = round(1.0 / s)
        if abs(1.0 / s - block) > 1e-9:
            raise ValueError(f"scale {s} is not a reciprocal integer")
        dv, counts = _block_average(d, valid, block)
        pv, _ = _block_average(p, valid, block)
        cells = counts > 0
        ncells = int(cells.sum())
        diff = dv - pv
        loss += lam * float(np.sum(np.abs(np.where(cells, diff, 0.0))) / ncells)
        # d|diff|/d(cell mean) = sign, spread uniformly over the cell's
        # valid pixels
        cell_grad = np.where(cells, np.sign(diff), 0.0) * lam / ncells
        per_pixel = np.divide(
            cell_grad, counts, out=np.zeros_like(cell_grad), where=cells
        )
        up = np.kron(per_pixel, np.ones((block, block)))[:H, :W]
        grad += np.where(valid, up, 0.0)
    return loss, grad


def huber_depth_loss(rendered, prior, valid, delta=0.5):
    """Huber on the raw depth residual, averaged over valid pixels."""
    if delta <= 0:
        raise ValueError("delta must be > 0")
    d = _plane(rendered)
    p = _plane(prior)
    if d.shape != p.shape:
        raise ValueError(f"depth shapes differ: {d.shape} vs {p.shape}")
    valid = np.asarray(valid, dtype=bool)
    n = int(valid.sum())
    grad = np.zeros_like(d)
    if n == 0:
        return 0.0, grad
    e = np.where(valid, d - p, 0.0)
    small = np.abs(e) <= delta
    per = np.where(small, 0.5 * e**2, delta * (np.abs(e) - 0.5 * delta))
    loss = float(np.sum(np.where(valid, per, 0.0)) / n)
    g = np.where(small, e, delta * np.sign(e))
    grad = np.where(valid, g / n, 0.0)
    return loss, grad


@dataclass
class DepthLossBreakdown:
    total: float
    grad: np.ndarray
    scale: float
    multiscale: float
    huber: float


def depth_loss(rendered, prior, valid, config: LossConfig) -> DepthLossBreakdown:
    """Weighted combination of the three depth terms (one gradient)."""
    ls, gs = scale_invariant_depth_loss(rendered, prior, valid)
    lm, gm = multiscale_depth_loss(
        rendered, prior, valid, scales=config.scales, weights=config.scale_weights
    )
    lh, gh = huber_depth_loss(rendered, prior, valid, delta=config.huber_delta)
    total = config.depth_alpha * ls + config.depth_beta * lm + config.depth_gamma * lh
    grad = config.depth_alpha * gs + config.depth_beta * gm + config.depth_gamma * gh
    return DepthLossBreakdown(total=total, grad=grad, scale=ls, multiscale=lm, huber=lh)


def _as_views(x):
    if isinstance(x, (ImageBuffer, np.ndarray)):
        return [x]
    return list(x)


def mask_loss(rendered_alphas, reference_masks):
    """Mean squared difference between accumulated alpha and the target
    silhouettes, over all pixels of all views.  Returns (loss, per-view
    gradient list)."""
    rend = [_plane(v) for v in _as_views(rendered_alphas)]
    refs = [_plane(v) for v in _as_views(reference_masks)]
    if len(rend) != len(refs):
        raise ValueError("view count mismatch")
    total_n = 0
    for a, m in zip(rend, refs):
        if a.shape != m.shape:
            raise ValueError(f"mask shapes differ: {a.shape} vs {m.shape}")
        total_n += a.size
    loss = 0.0
    grads = []
    for a, m in zip(rend, refs):
        diff = a - m
        loss += float(np.sum(diff**2))
        grads.append(2.0 * diff / total_n)
    return loss / total_n, grads


def feature_loss(f, f_ref):
    """One minus cosine similarity; range [0, 2].

    Returns (loss, gradient w.r.t. f).  Identical vectors are the exact
    fixed point of the cosine, so they short-circuit to (0, zeros).
    """
    f = np.asarray(f, dtype=np.float64).ravel()
    g = np.asarray(f_ref, dtype=np.float64).ravel()
    if f.shape != g.shape:
        raise ValueError("feature dimensions differ")
    na = float(np.linalg.norm(f))
    nb = float(np.linalg.norm(g))
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero-norm feature vector")
    if np.array_equal(f, g):
        return 0.0, np.zeros_like(f)
    cos = float(f @ g) / (na * nb)
    if cos >= 1.0:
        return 0.0, np.zeros_like(f)
    if cos <= -1.0:
        return 2.0, np.zeros_like(f)
    grad = -(g / (na * nb) - cos * f / (na * na))
    return 1.0 - cos, grad


def _ssim_filter(x):
    half = SSIM_WINDOW // 2
    ax = np.arange(SSIM_WINDOW, dtype=np.float64) - half
    k = np.exp(-(ax**2) / (2.0 * SSIM_SIGMA**2))
    k /= k.sum()
    y = correlate1d(x, k, axis=0, mode="constant", cval=0.0)
    return correlate1d(y, k, axis=1, mode="constant", cval=0.0)


def _ssim_channel(x, y, want_grad):
    mx = _ssim_filter(x)
    my = _ssim_filter(y)
    sxx = _ssim_filter(x * x)
    syy = _ssim_filter(y * y)
    sxy = _ssim_filter(x * y)
    vx = sxx - mx * mx
    vy = syy - my * my
    cov = sxy - mx * my
    A1 = 2.0 * mx * my + SSIM_C1
    A2 = 2.0 * cov + SSIM_C2
    B1 = mx * mx + my * my + SSIM_C1
    B2 = vx + vy + SSIM_C2
    S = (A1 * A2) / (B1 * B2)
    live = (S > -1.0) & (S < 1.0)
    S = np.clip(S, -1.0, 1.0)
    if not want_grad:
        return float(S.mean()), None

    n = S.size
    D = B1 * B2
    dA1 = np.where(live, A2 / D, 0.0)
    dA2 = np.where(live, A1 / D, 0.0)
    dB1 = np.where(live, -S / B1, 0.0)
    dB2 = np.where(live, -S / B2, 0.0)
    # collect per-pixel partials w.r.t. the filtered fields of x
    g_mu = dA1 * 2.0 * my + dB1 * 2.0 * mx + dA2 * 2.0 * (-my) + dB2 * (-2.0 * mx)
    g_sxx = dB2
    g_sxy = dA2 * 2.0
    # the window is symmetric and zero-padded, so the filter is its own
    # adjoint
    grad = (_ssim_filter(g_mu) + 2.0 * x * _ssim_filter(g_sxx) + y * _ssim_filter(g_sxy)) / n
    return float(S.mean()), grad


def ssim(a, b, with_grad: bool = False):
    """Structural similarity with the standard 11x11 Gaussian window.

    Multi-channel inputs average the per-channel maps.  With
    `with_grad`, also returns the gradient of the scalar w.r.t. `a`.
    """
    x = _image(a)
    y = _image(b)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x = x[:, :, np.newaxis]
        y = y[:, :, np.newaxis]
    C = x.shape[2]
    vals = []
    grads = np.zeros_like(x) if with_grad else None
    for c in range(C):
        v, g = _ssim_channel(x[:, :, c], y[:, :, c], with_grad)
        vals.append(v)
        if with_grad:
            grads[:, :, c] = g / C
    value = float(np.mean(vals))
    if with_grad:
        return value, grads.reshape(_image(a).shape)
    return value


def color_loss(rendered_views, reference_views, mix=0.2):
    """(1 - mix) L1 + mix (1 - SSIM)/2, averaged over views.

    Returns (loss, per-view gradient list w.r.t. the rendered views).
    """
    if not (0.0 <= mix <= 1.0):
        raise ValueError("mix must be in [0, 1]")
    rend = [_image(v) for v in _as_views(rendered_views)]
    refs = [_image(v) for v in _as_views(reference_views)]
    if len(rend) != len(refs):
        raise ValueError("view count mismatch")
    V = len(rend)
    loss = 0.0
    grads = []
    for x, y in zip(rend, refs):
        if x.shape != y.shape:
            raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
        diff = x - y
        l1 = float(np.mean(np.abs(diff)))
        s, gs = ssim(x, y, with_grad=True)
        loss += ((1.0 - mix) * l1 + mix * (1.0 - s) / 2.0) / V
        g = (1.0 - mix) * np.sign(diff) / diff.size - mix * gs / 2.0
        grads.append(g / V)
    return loss, grads


def refine_loss(refined, rendered):
    """Pixel MSE between the externally refined image and the render.

    Returns (loss, gradient w.r.t. the render)."""
    a = _image(refined)
    b = _image(rendered)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    diff = b - a
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images, capped at
    99 dB when the MSE drops below 1e-10."""
    x = _image(a)
    y = _image(b)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return float(10.0 * math.log10(1.0 / mse))
