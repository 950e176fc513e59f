"""Pinhole cameras and the training-view sampling schedule.

Cameras use a y-up world.  An orbit camera at azimuth 0 sits on the +z
axis looking at the target; azimuth grows toward +x; elevation is
positive above the horizontal plane.  Camera space is x-right, y-down,
z-forward, so view-space depth is the camera-space z coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

CANONICAL_AZIMUTHS = (0.0, 90.0, 180.0, -90.0)

DEFAULT_FOV_Y = 49.0
DEFAULT_RADIUS = 2.5


@dataclass
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    fov_y_deg: float
    width: int
    height: int
    near: float = 0.1
    far: float = 100.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.look_at = np.asarray(self.look_at, dtype=np.float64).reshape(3)
        self.up = np.asarray(self.up, dtype=np.float64).reshape(3)
        if not (0.0 < self.near < self.far):
            raise ValueError("require 0 < near < far")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        if not (0.0 < self.fov_y_deg < 180.0):
            raise ValueError("fov must be in (0, 180) degrees")

    @classmethod
    def orbit(
        cls,
        azimuth_deg: float,
        elevation_deg: float,
        radius: float = DEFAULT_RADIUS,
        look_at=(0.0, 0.0, 0.0),
        fov_y_deg: float = DEFAULT_FOV_Y,
        width: int = 256,
        height: int = 256,
        near: float = 0.1,
        far: float = 100.0,
    ) -> "Camera":
        az = math.radians(azimuth_deg)
        el = math.radians(elevation_deg)
        look_at = np.asarray(look_at, dtype=np.float64)
        offset = radius * np.array(
            [math.sin(az) * math.cos(el), math.sin(el), math.cos(az) * math.cos(el)]
        )
        # At the poles the world-up direction is degenerate; tilt it.
        up = np.array([0.0, 1.0, 0.0])
        if abs(math.cos(el)) < 1e-6:
            up = np.array([math.sin(az), 0.0, math.cos(az)]) * (-math.copysign(1.0, math.sin(el)))
        return cls(
            position=look_at + offset,
            look_at=look_at,
            up=up,
            fov_y_deg=fov_y_deg,
            width=width,
            height=height,
            near=near,
            far=far,
        )

    @property
    def azimuth_deg(self) -> float:
        d = self.position - self.look_at
        return math.degrees(math.atan2(d[0], d[2]))

    @property
    def elevation_deg(self) -> float:
        d = self.position - self.look_at
        r = np.linalg.norm(d)
        return math.degrees(math.asin(np.clip(d[1] / r, -1.0, 1.0)))

    @property
    def radius(self) -> float:
        return float(np.linalg.norm(self.position - self.look_at))

    def rotation(self) -> np.ndarray:
        """World-to-camera rotation; rows are (right, down, forward)."""
        forward = self.look_at - self.position
        forward = forward / np.linalg.norm(forward)
        right = np.cross(forward, self.up)
        nr = np.linalg.norm(right)
        if nr < 1e-12:
            raise ValueError("camera up vector is parallel to the view direction")
        right /= nr
        down = np.cross(forward, right)
        return np.stack([right, down, forward])

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        """Map world points (..., 3) into camera space."""
        R = self.rotation()
        return (np.asarray(points, dtype=np.float64) - self.position) @ R.T

    def intrinsics(self) -> tuple[float, float, float, float]:
        """(fx, fy, cx, cy) in pixels; square pixels, principal point at
        the image center.  Pixel (row j, col i) has center (i+0.5, j+0.5).
        """
        fy = (self.height / 2.0) / math.tan(math.radians(self.fov_y_deg) / 2.0)
        return fy, fy, self.width / 2.0, self.height / 2.0

    def resized(self, width: int, height: int) -> "Camera":
        return replace(self, width=width, height=height)

    def quadruple(self) -> list["Camera"]:
        """This view plus the three others at +90/+180/+270 degrees azimuth,
        same elevation and radius (the four-view guidance batch).
        """
        return [
            Camera.orbit(
                self.azimuth_deg + off,
                self.elevation_deg,
                radius=self.radius,
                look_at=self.look_at,
                fov_y_deg=self.fov_y_deg,
                width=self.width,
                height=self.height,
                near=self.near,
                far=self.far,
            )
            for off in (0.0, 90.0, 180.0, 270.0)
        ]


@dataclass
class TrainingPhase:
    """Where we are in the schedule: fraction = step / total_steps."""

    fraction: float

    def __post_init__(self):
        if not (0.0 <= self.fraction <= 1.0):
            raise ValueError("phase fraction must be in [0, 1]")


@dataclass
class CameraSampler:
    """Stateful view sampler for the two-phase schedule.

    Early training draws azimuth uniform in [-180, 180] and elevation
    uniform in [-30, 30] degrees.  Once the final sixth of training is
    reached, draws cycle deterministically through the four canonical
    azimuths at zero elevation.
    """

    rng: np.random.Generator
    radius: float = DEFAULT_RADIUS
    fov_y_deg: float = DEFAULT_FOV_Y
    width: int = 256
    height: int = 256
    azimuth_range: tuple[float, float] = (-180.0, 180.0)
    elevation_range: tuple[float, float] = (-30.0, 30.0)
    fixed_fraction: float = 1.0 / 6.0
    _cycle: int = field(default=0, repr=False)

    def sample(self, phase: TrainingPhase) -> Camera:
        if phase.fraction >= 1.0 - self.fixed_fraction:
            azimuth = CANONICAL_AZIMUTHS[self._cycle % 4]
            elevation = 0.0
            self._cycle += 1
        else:
            azimuth = self.rng.uniform(*self.azimuth_range)
            elevation = self.rng.uniform(*self.elevation_range)
        return Camera.orbit(
            azimuth,
            elevation,
            radius=self.radius,
            fov_y_deg=self.fov_y_deg,
            width=self.width,
            height=self.height,
        )


def sample_training_camera(sampler: CameraSampler, phase: TrainingPhase) -> Camera:
    """Draw the next training camera for the given schedule position."""
    return sampler.sample(phase)
