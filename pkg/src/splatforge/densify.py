"""Adaptive density control: clone, split, prune.

Primitives whose screen-space positional gradient stays large over a
window are under-fitting something; small ones get cloned toward the
gradient, large ones get split in two along their major axis.  Nearly
transparent primitives are pruned.  The optimizer state is kept
row-aligned through every event.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussians import GaussianCloud, quat_to_rotmat
from .optimizer import AdamState
from .rasterizer import GradientBuffers

GRAD_THRESHOLD = 2e-4
PRUNE_OPACITY = 0.005
SPLIT_EXTENT_FRACTION = 0.01
SPLIT_SCALE_FACTOR = 1.6


@dataclass
class DensifyStats:
    """Per-primitive accumulators between densify events.

    `grad_norm_sum` collects the screen-space positional gradient norm,
    `count` the number of steps each primitive was observed, and
    `center_grad_sum` the world-space center gradient (used to aim clone
    offsets).  All reset after every densify event.
    """

    grad_norm_sum: np.ndarray
    count: np.ndarray
    center_grad_sum: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "DensifyStats":
        return cls(
            grad_norm_sum=np.zeros(n),
            count=np.zeros(n, dtype=np.int64),
            center_grad_sum=np.zeros((n, 3)),
        )

    def accumulate(self, grads: GradientBuffers) -> None:
        self.grad_norm_sum += grads.screen_grad_norm
        self.count += grads.visible_count
        self.center_grad_sum += grads.centers

    def mean_grad(self) -> np.ndarray:
        return self.grad_norm_sum / np.maximum(self.count, 1)


def scene_extent(cloud: GaussianCloud) -> float:
    """Radius of the cloud around its centroid; floor keeps degenerate
    single-point scenes from collapsing the split cutoff to zero."""
    offsets = cloud.centers - cloud.centers.mean(axis=0)
    return max(float(np.linalg.norm(offsets, axis=1).max()), 1e-3)


def densify_and_prune(
    cloud: GaussianCloud,
    stats: DensifyStats,
    state: AdamState,
    grad_threshold: float = GRAD_THRESHOLD,
    prune_opacity: float = PRUNE_OPACITY,
) -> tuple[GaussianCloud, DensifyStats]:
    """One density-control event.  Returns the new cloud and fresh stats;
    the optimizer state is updated in place to match the new rows.

    Order of assembly is deterministic: surviving originals first (in
    index order), then clones, then split children (two per parent).
    """
    n = len(cloud)
    if len(stats.count) != n:
        raise ValueError("densify stats misaligned with cloud")
    state.validate_against(cloud)

    opacities = cloud.opacities
    scales = cloud.scales
    extent = scene_extent(cloud)

    over = (stats.mean_grad() > grad_threshold) & (stats.count > 0)
    large = scales.max(axis=1) > SPLIT_EXTENT_FRACTION * extent
    split_idx = np.flatnonzero(over & large)
    clone_idx = np.flatnonzero(over & ~large)
    keep = opacities >= prune_opacity
    keep[split_idx] = False  # parents are replaced by their children

    kept_idx = np.flatnonzero(keep)

    parts = {name: [getattr(cloud, name)[kept_idx]] for name in _FIELDS}
    row_sources = [kept_idx]

    if len(clone_idx):
        # Nudge the copy along the accumulated descent direction so the
        # pair can separate; half the mean sigma keeps it inside the
        # parent's footprint.
        g = stats.center_grad_sum[clone_idx]
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        direction = np.divide(g, norms, out=np.zeros_like(g), where=norms > 0.0)
        step_size = 0.5 * scales[clone_idx].mean(axis=1, keepdims=True)
        parts["centers"].append(cloud.centers[clone_idx] - direction * step_size)
        parts["log_scales"].append(cloud.log_scales[clone_idx])
        parts["rotations"].append(cloud.rotations[clone_idx])
        parts["opacity_logits"].append(cloud.opacity_logits[clone_idx])
        parts["colors"].append(cloud.colors[clone_idx])
        row_sources.append(clone_idx)

    if len(split_idx):
        axis_id = np.argmax(scales[split_idx], axis=1)
        sigma = scales[split_idx][np.arange(len(split_idx)), axis_id]
        rot = quat_to_rotmat(cloud.rotations[split_idx])
        major = rot[np.arange(len(split_idx)), :, axis_id]
        offset = major * (0.5 * sigma)[:, None]
        child_log_scales = cloud.log_scales[split_idx] - np.log(SPLIT_SCALE_FACTOR)
        for sign in (+1.0, -1.0):
            parts["centers"].append(cloud.centers[split_idx] + sign * offset)
            parts["log_scales"].append(child_log_scales)
            parts["rotations"].append(cloud.rotations[split_idx])
            parts["opacity_logits"].append(cloud.opacity_logits[split_idx])
            parts["colors"].append(cloud.colors[split_idx])
            row_sources.append(split_idx)

    new_cloud = GaussianCloud(
        centers=np.concatenate(parts["centers"]),
        log_scales=np.concatenate(parts["log_scales"]),
        rotations=np.concatenate(parts["rotations"]),
        opacity_logits=np.concatenate(parts["opacity_logits"]),
        colors=np.concatenate(parts["colors"]),
        generation=cloud.generation + 1,
    )

    source = np.concatenate(row_sources)
    for name in _FIELDS:
        state.m[name] = state.m[name][source]
        state.v[name] = state.v[name][source]
    state.validate_against(new_cloud)

    return new_cloud, DensifyStats.zeros(len(new_cloud))


_FIELDS = ("centers", "log_scales", "rotations", "opacity_logits", "colors")
