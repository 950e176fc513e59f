"""Multi-view guidance providers and the view-matching loss.

A guidance provider maps a four-view request (renders, cameras, prompt,
timestep) to four target views.  Training pulls the renders toward the
targets through

    L = w(t) * mean((x - x_hat)^2)    over the four views

whose gradient w.r.t. the renders is w(t) * 2 (x - x_hat) / n.  The
reference provider answers from a table of registered views (nearest
azimuth, ties toward 0 degrees) and makes the whole loop runnable
offline; the remote provider speaks the HTTP/JSON wire protocol and
maps transport failures to distinguishable error classes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import requests

from .buffers import ImageBuffer
from .cameras import Camera
from .wire import parse_response_views, request_payload

TIMESTEP_START = 0.98
TIMESTEP_END = 0.02


class GuidanceError(Exception):
    pass


class GuidanceTimeout(GuidanceError):
    """Deadline exceeded or endpoint unreachable."""


class MalformedResponse(GuidanceError):
    """Response violated the wire protocol (structure, encoding, shape)."""


class ServiceError(GuidanceError):
    """Endpoint answered with a non-200 status."""


def _view_data(v) -> np.ndarray:
    return v.data if isinstance(v, ImageBuffer) else np.asarray(v, dtype=np.float64)


@dataclass
class GuidanceRequest:
    views: list
    cameras: list
    prompt: str
    timestep: float
    weight: float = 1.0

    def __post_init__(self):
        if len(self.views) != 4 or len(self.cameras) != 4:
            raise ValueError("guidance requests carry exactly 4 views and 4 cameras")
        if not (0.0 < self.timestep <= 1.0):
            raise ValueError("timestep must be in (0, 1]")
        if self.weight < 0.0:
            raise ValueError("weight must be >= 0")
        shapes = {np.asarray(_view_data(v)).shape for v in self.views}
        if len(shapes) != 1:
            raise ValueError(f"views disagree on shape: {shapes}")


@dataclass
class GuidanceResponse:
    views: list
    confidence: list | None = None

    def validate_against(self, request: GuidanceRequest) -> None:
        if len(self.views) != 4:
            raise MalformedResponse("response must carry 4 views")
        for got, want in zip(self.views, request.views):
            gs, ws = _view_data(got).shape, _view_data(want).shape
            if gs != ws:
                raise MalformedResponse(f"view shape {gs} does not match request {ws}")
        if self.confidence is not None:
            if len(self.confidence) != 4 or any(not (0.0 <= c <= 1.0) for c in self.confidence):
                raise MalformedResponse("confidence must be 4 values in [0, 1]")


def timestep_at(fraction: float) -> float:
    """Diffusion timestep for a stage-1 progress fraction: linear anneal
    from 0.98 down to 0.02."""
    if not (0.0 <= fraction <= 1.0):
        raise ValueError("fraction must be in [0, 1]")
    return TIMESTEP_START + (TIMESTEP_END - TIMESTEP_START) * fraction


def mv_sds_loss(rendered_views, target_views, weight: float = 1.0):
    """Mean squared error over the four views, scaled by w(t).

    Returns (loss, per-view gradient list w.r.t. the rendered views).
    """
    xs = [_view_data(v) for v in rendered_views]
    ts = [_view_data(v) for v in target_views]
    if len(xs) != len(ts):
        raise ValueError("view count mismatch")
    n = 0
    for x, t in zip(xs, ts):
        if x.shape != t.shape:
            raise ValueError(f"view shapes differ: {x.shape} vs {t.shape}")
        n += x.size
    loss = 0.0
    grads = []
    for x, t in zip(xs, ts):
        diff = x - t
        loss += float(np.sum(diff**2))
        grads.append(weight * 2.0 * diff / n)
    return weight * loss / n, grads


def _circular_distance(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def _resize_bilinear(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    """Pixel-center-aligned bilinear resample."""
    H, W = arr.shape[:2]
    if (H, W) == (height, width):
        return arr
    ys = (np.arange(height) + 0.5) * H / height - 0.5
    xs = (np.arange(width) + 0.5) * W / width - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, H - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, np.newaxis, np.newaxis]
    fx = np.clip(xs - x0, 0.0, 1.0)[np.newaxis, :, np.newaxis]
    a = arr[np.ix_(y0, x0)]
    b = arr[np.ix_(y0, x1)]
    c = arr[np.ix_(y1, x0)]
    d = arr[np.ix_(y1, x1)]
    return (
        a * (1 - fy) * (1 - fx)
        + b * (1 - fy) * fx
        + c * fy * (1 - fx)
        + d * fy * fx
    )


@dataclass
class ReferenceGuidance:
    """Answers every request from a table of registered views.

    Each request camera is matched to the registered view with the
    nearest azimuth (circular distance; ties go to the azimuth closer
    to 0 degrees).  Views are resampled if the request resolution
    differs from the registered one.
    """

    references: list = field(default_factory=list)  # (azimuth_deg, (H, W, 3) array)

    def register(self, azimuth_deg: float, view) -> None:
        self.references.append((float(azimuth_deg), _view_data(view).copy()))

    def __call__(self, request: GuidanceRequest) -> GuidanceResponse:
        if not self.references:
            raise GuidanceError("no reference views registered")
        out = []
        for cam, view in zip(request.cameras, request.views):
            az = cam.azimuth_deg
            best = min(
                self.references,
                key=lambda ref: (_circular_distance(az, ref[0]), abs(ref[0]), ref[0]),
            )
            h, w = _view_data(view).shape[:2]
            out.append(ImageBuffer(_resize_bilinear(best[1], h, w)))
        response = GuidanceResponse(views=out)
        response.validate_against(request)
        return response


@dataclass
class RemoteGuidance:
    """HTTP client for a guidance service.

    POSTs the JSON wire payload and maps failures onto the error
    classes: deadline overruns and unreachable endpoints raise
    GuidanceTimeout, protocol violations MalformedResponse, non-200
    statuses ServiceError.
    """

    endpoint: str
    deadline: float = 10.0
    seed: int = 0
    session: requests.Session | None = None

    def __call__(self, request: GuidanceRequest) -> GuidanceResponse:
        payload = request_payload(request, self.seed)
        http = self.session or requests
        try:
            reply = http.post(self.endpoint, json=payload, timeout=self.deadline)
        except (requests.exceptions.Timeout, requests.exceptions.ConnectionError) as exc:
            raise GuidanceTimeout(f"guidance endpoint did not answer: {exc}") from exc
        if reply.status_code != 200:
            raise ServiceError(f"guidance endpoint returned {reply.status_code}")
        try:
            views, confidence = parse_response_views(reply.json())
        except ValueError as exc:
            raise MalformedResponse(str(exc)) from exc
        response = GuidanceResponse(
            views=[ImageBuffer(v) for v in views], confidence=confidence
        )
        response.validate_against(request)
        return response
