"""Image buffers passed across module boundaries.

Data is a float64 array of shape (height, width, channels) with
channels 1 (mask/depth) or 3 (color).  Color values are clamped to
[0, 1] at I/O boundaries; depth is non-negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ImageBuffer:
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"expected (H, W, 1|3) data, got shape {arr.shape}")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def plane(self) -> np.ndarray:
        """Single-channel data as (H, W)."""
        if self.channels != 1:
            raise ValueError("plane() requires a 1-channel buffer")
        return self.data[:, :, 0]

    def clamped(self) -> "ImageBuffer":
        return ImageBuffer(np.clip(self.data, 0.0, 1.0))

    @classmethod
    def zeros(cls, height: int, width: int, channels: int = 3) -> "ImageBuffer":
        return cls(np.zeros((height, width, channels)))

    @classmethod
    def full(cls, height: int, width: int, value, channels: int = 3) -> "ImageBuffer":
        arr = np.empty((height, width, channels))
        arr[:] = np.asarray(value, dtype=np.float64)
        return cls(arr)
