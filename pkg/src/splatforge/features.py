"""Patch-grid image features for the feature-alignment loss.

The interface is one function in, one flat vector out; anything
deterministic qualifies (an external embedding service included).  The
built-in extractor is a deliberately simple stand-in: the image is cut
into a grid x grid array of patches and each patch contributes its mean
color (3 values) plus the mean luminance-gradient magnitude (1 value),
so the vector length is patches * 4.  It also exposes the adjoint
(image gradient for a feature-space gradient) so the loss can flow back
into the renderer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .buffers import ImageBuffer


def _data(image) -> np.ndarray:
    if isinstance(image, ImageBuffer):
        arr = image.data
    else:
        arr = np.asarray(image, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    return arr


def _luminance_gradients(lum):
    # forward differences; the last row/column has no neighbor and stays 0
    gx = np.zeros_like(lum)
    gy = np.zeros_like(lum)
    gx[:, :-1] = lum[:, 1:] - lum[:, :-1]
    gy[:-1, :] = lum[1:, :] - lum[:-1, :]
    return gx, gy


@dataclass
class ToyPatchExtractor:
    """Grid-of-patches features: per patch (mean R, mean G, mean B,
    mean gradient magnitude)."""

    grid: int = 4

    def __post_init__(self):
        if self.grid < 1:
            raise ValueError("grid must be >= 1")

    def _bounds(self, n):
        edges = np.linspace(0, n, self.grid + 1).astype(int)
        return list(zip(edges[:-1], edges[1:]))

    def extract(self, image) -> np.ndarray:
        arr = _data(image)
        if arr.shape[0] < self.grid or arr.shape[1] < self.grid:
            raise ValueError("image smaller than the patch grid")
        lum = arr.mean(axis=2)
        gx, gy = _luminance_gradients(lum)
        mag = np.sqrt(gx**2 + gy**2)
        feats = []
        for r0, r1 in self._bounds(arr.shape[0]):
            for c0, c1 in self._bounds(arr.shape[1]):
                patch = arr[r0:r1, c0:c1]
                feats.extend(patch.reshape(-1, 3).mean(axis=0))
                feats.append(mag[r0:r1, c0:c1].mean())
        return np.asarray(feats, dtype=np.float64)

    def image_gradient(self, image, feature_grad: np.ndarray) -> np.ndarray:
        """Adjoint of extract: pull a feature-space gradient back to the
        image.  Gradient-magnitude terms use the zero subgradient where
        the magnitude vanishes."""
        arr = _data(image)
        H, W, _ = arr.shape
        feature_grad = np.asarray(feature_grad, dtype=np.float64).ravel()
        expected = self.grid * self.grid * 4
        if feature_grad.size != expected:
            raise ValueError(f"feature gradient length {feature_grad.size} != {expected}")

        lum = arr.mean(axis=2)
        gx, gy = _luminance_gradients(lum)
        mag = np.sqrt(gx**2 + gy**2)
        ux = np.divide(gx, mag, out=np.zeros_like(gx), where=mag > 0)
        uy = np.divide(gy, mag, out=np.zeros_like(gy), where=mag > 0)

        g_img = np.zeros((H, W, 3))
        u_mag = np.zeros((H, W))
        k = 0
        for r0, r1 in self._bounds(H):
            for c0, c1 in self._bounds(W):
                npx = (r1 - r0) * (c1 - c0)
                g_img[r0:r1, c0:c1] += feature_grad[k : k + 3] / npx
                u_mag[r0:r1, c0:c1] = feature_grad[k + 3] / npx
                k += 4

        tx = u_mag * ux
        ty = u_mag * uy
        g_lum = np.zeros((H, W))
        g_lum[:, 1:] += tx[:, :-1]
        g_lum[:, :-1] -= tx[:, :-1]
        g_lum[1:, :] += ty[:-1, :]
        g_lum[:-1, :] -= ty[:-1, :]
        g_img += g_lum[:, :, np.newaxis] / 3.0

        orig = image.data if isinstance(image, ImageBuffer) else np.asarray(image)
        if orig.ndim == 2:
            return g_img.sum(axis=2)
        if orig.shape[2] == 1:
            return g_img.sum(axis=2)[:, :, np.newaxis]
        return g_img


def extract_features(image, extractor=None) -> np.ndarray:
    """Flat feature vector for an image; defaults to the patch-grid
    extractor."""
    if extractor is None:
        extractor = ToyPatchExtractor()
    return extractor.extract(image)
