"""Adam over the raw cloud parameters.

Each parameter class (centers, log-scales, rotations, opacity logits,
colors) carries its own learning rate.  After every step the rotations
are renormalized to unit quaternions and colors are clipped back to
[0, 1]; the log/logit parameterizations keep scales and opacities legal
without projection.  Moment rows are duplicated and removed alongside
densify/prune events so state stays aligned with the cloud.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .gaussians import GaussianCloud
from .rasterizer import GradientBuffers

PARAM_FIELDS = ("centers", "log_scales", "rotations", "opacity_logits", "colors")

DEFAULT_LRS = {
    "centers": 1.6e-4,
    "log_scales": 5e-3,
    "rotations": 1e-3,
    "opacity_logits": 5e-2,
    "colors": 2.5e-3,
}


@dataclass
class AdamState:
    lrs: dict
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_cloud(cls, cloud: GaussianCloud, lrs=None) -> "AdamState":
        state = cls(lrs=dict(DEFAULT_LRS if lrs is None else lrs))
        missing = set(PARAM_FIELDS) - set(state.lrs)
        if missing:
            raise ValueError(f"learning rates missing for {sorted(missing)}")
        for name in PARAM_FIELDS:
            shape = getattr(cloud, name).shape
            state.m[name] = np.zeros(shape)
            state.v[name] = np.zeros(shape)
        return state

    def duplicate_rows(self, indices: np.ndarray) -> None:
        """Append copies of the given rows (children inherit the parent's
        moments)."""
        for name in PARAM_FIELDS:
            self.m[name] = np.concatenate([self.m[name], self.m[name][indices]])
            self.v[name] = np.concatenate([self.v[name], self.v[name][indices]])

    def keep_rows(self, mask: np.ndarray) -> None:
        for name in PARAM_FIELDS:
            self.m[name] = self.m[name][mask]
            self.v[name] = self.v[name][mask]

    def validate_against(self, cloud: GaussianCloud) -> None:
        for name in PARAM_FIELDS:
            if self.m[name].shape != getattr(cloud, name).shape:
                raise ValueError(f"optimizer state misaligned on {name}")


def adam_step(cloud: GaussianCloud, grads: GradientBuffers, state: AdamState) -> bool:
    """One bias-corrected Adam update, in place.

    Returns False (and leaves everything untouched) when any gradient
    is non-finite.  After the update, quaternions are renormalized and
    colors clipped to [0, 1].
    """
    for name in PARAM_FIELDS:
        if not np.all(np.isfinite(getattr(grads, name))):
            warnings.warn(f"non-finite gradient in {name}; step skipped")
            return False

    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name in PARAM_FIELDS:
        g = getattr(grads, name)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = state.lrs[name] * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        getattr(cloud, name)[...] -= update

    cloud.normalize_rotations()
    np.clip(cloud.colors, 0.0, 1.0, out=cloud.colors)
    return True
