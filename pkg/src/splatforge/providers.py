"""Local stand-ins for the external prior services.

These render a reference cloud to produce depth and mask buffers, which
is what the oracle tests train against.  Real deployments swap in file
or network providers with the same camera -> buffer call shape.
"""

from __future__ import annotations

import numpy as np

from .cameras import Camera
from .gaussians import GaussianCloud
from .guidance import _circular_distance, _resize_bilinear
from .rasterizer import render
from .storage import load_depth, load_image


class GroundTruthDepthPrior:
    """Depth buffers rendered from a known reference cloud.

    Pixels whose reference alpha falls at or below the threshold return
    depth 0, which downstream losses treat as "no prior here".
    """

    def __init__(self, cloud: GaussianCloud, alpha_threshold: float = 0.5):
        self.cloud = cloud
        self.alpha_threshold = alpha_threshold

    def __call__(self, camera: Camera) -> np.ndarray:
        out = render(self.cloud, camera)
        alpha = out.alpha.data[:, :, 0]
        depth = out.depth.data[:, :, 0]
        return np.where(alpha > self.alpha_threshold, depth, 0.0)


class GroundTruthMaskPrior:
    """Coverage masks rendered from a known reference cloud."""

    def __init__(self, cloud: GaussianCloud):
        self.cloud = cloud

    def __call__(self, camera: Camera) -> np.ndarray:
        return render(self.cloud, camera).alpha.data[:, :, 0]


class _FilePlanePrior:
    """Single-channel planes registered per azimuth and served by
    nearest circular match, resampled to the request resolution.
    """

    def __init__(self):
        self.planes = []  # (azimuth_deg, (H, W) array)

    def _register(self, azimuth_deg: float, plane: np.ndarray) -> None:
        plane = np.asarray(plane, dtype=np.float64)
        if plane.ndim != 2:
            raise ValueError("prior planes must be 2-d")
        self.planes.append((float(azimuth_deg), plane))

    def __call__(self, camera: Camera) -> np.ndarray:
        if not self.planes:
            raise ValueError("no prior planes registered")
        az = camera.azimuth_deg
        best = min(
            self.planes,
            key=lambda p: (_circular_distance(az, p[0]), abs(p[0]), p[0]),
        )
        resized = _resize_bilinear(best[1][:, :, np.newaxis], camera.height, camera.width)
        return resized[:, :, 0]


class FileDepthPrior(_FilePlanePrior):
    """Depth planes loaded from disk files, keyed by orbit azimuth."""

    def register(self, azimuth_deg: float, path) -> None:
        self._register(azimuth_deg, load_depth(path))


class FileMaskPrior(_FilePlanePrior):
    """Coverage masks loaded from image files, keyed by orbit azimuth.

    Color images are reduced to their first channel; masks are expected
    to be stored as grayscale anyway.
    """

    def register(self, azimuth_deg: float, path) -> None:
        self._register(azimuth_deg, load_image(path).data[:, :, 0])
