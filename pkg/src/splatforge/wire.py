"""Wire format for the remote guidance protocol.

Requests go out as JSON: prompt, timestep, seed, four camera poses
(azimuth_deg, elevation_deg, radius, fov_deg) and four views as
base64-encoded 8-bit RGB PNGs.  Responses carry four views the same way
plus an optional per-view confidence list.  Images quantize to 255
levels on the wire; values already on the k/255 grid round-trip
exactly.
"""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image

from .buffers import ImageBuffer


def encode_png(view) -> str:
    """Base64 PNG for a float [0,1] color image (H, W, 3)."""
    arr = view.data if isinstance(view, ImageBuffer) else np.asarray(view, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) color image, got {arr.shape}")
    quant = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(quant).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_png(payload: str) -> np.ndarray:
    """Inverse of encode_png; raises ValueError on bad base64 or PNG."""
    try:
        raw = base64.b64decode(payload, validate=True)
        img = Image.open(io.BytesIO(raw))
        img.load()
    except Exception as exc:
        raise ValueError(f"undecodable PNG payload: {exc}") from exc
    if img.mode != "RGB":
        img = img.convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def camera_payload(camera) -> dict:
    return {
        "azimuth_deg": float(camera.azimuth_deg),
        "elevation_deg": float(camera.elevation_deg),
        "radius": float(camera.radius),
        "fov_deg": float(camera.fov_y_deg),
    }


def request_payload(request, seed: int) -> dict:
    """JSON body for a guidance request."""
    return {
        "prompt": request.prompt,
        "timestep": float(request.timestep),
        "seed": int(seed),
        "cameras": [camera_payload(c) for c in request.cameras],
        "views": [encode_png(v) for v in request.views],
    }


def parse_response_views(payload: dict) -> tuple[list[np.ndarray], list[float] | None]:
    """Decode a guidance response body; raises ValueError when the
    structure, encoding, or confidence range is wrong."""
    if not isinstance(payload, dict) or "views" not in payload:
        raise ValueError("response missing 'views'")
    views = payload["views"]
    if not isinstance(views, list) or len(views) != 4:
        raise ValueError(f"expected 4 views, got {len(views) if isinstance(views, list) else type(views)}")
    decoded = [decode_png(v) for v in views]
    confidence = payload.get("confidence")
    if confidence is not None:
        if not isinstance(confidence, list) or len(confidence) != 4:
            raise ValueError("confidence must list 4 values")
        confidence = [float(c) for c in confidence]
        if any(not (0.0 <= c <= 1.0) for c in confidence):
            raise ValueError("confidence values must lie in [0, 1]")
    return decoded, confidence
