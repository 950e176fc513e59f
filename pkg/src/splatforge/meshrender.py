"""Rasterization of triangle meshes into camera views.

Used two ways: depth buffers for occlusion tests during texture baking,
and textured renders (with the bilinear texture-fetch adjoint) for the
texture refinement loop.  Shares the splat renderer's camera
conventions: pixel (row j, col i) samples at center (i+0.5, j+0.5),
depth is camera-space z.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .buffers import ImageBuffer
from .cameras import Camera
from .meshing import Mesh

DEPTH_EPS = 1e-4


@dataclass
class MeshCoverage:
    """Per-pixel surface hit: triangle index (-1 for none), perspective-
    correct barycentric weights, and camera-space depth (inf for none)."""

    tri: np.ndarray
    bary: np.ndarray
    depth: np.ndarray

    def hit(self) -> np.ndarray:
        return self.tri >= 0


def rasterize_mesh(mesh: Mesh, camera: Camera) -> MeshCoverage:
    """Nearest-surface coverage of the mesh in the camera's image."""
    H, W = camera.height, camera.width
    tri = np.full((H, W), -1, dtype=np.int64)
    bary = np.zeros((H, W, 3))
    depth = np.full((H, W), np.inf)
    if mesh.is_empty:
        return MeshCoverage(tri=tri, bary=bary, depth=depth)

    cs = camera.world_to_camera(mesh.vertices)
    z = cs[:, 2]
    fx, fy, cx, cy = camera.intrinsics()
    safe_z = np.where(z > camera.near, z, 1.0)
    px = fx * cs[:, 0] / safe_z + cx
    py = fy * cs[:, 1] / safe_z + cy

    for t, (i0, i1, i2) in enumerate(mesh.triangles):
        if z[i0] <= camera.near or z[i1] <= camera.near or z[i2] <= camera.near:
            continue
        xs = np.array([px[i0], px[i1], px[i2]])
        ys = np.array([py[i0], py[i1], py[i2]])
        lo_x = max(int(np.floor(xs.min() - 0.5)), 0)
        hi_x = min(int(np.ceil(xs.max() - 0.5)) + 1, W)
        lo_y = max(int(np.floor(ys.min() - 0.5)), 0)
        hi_y = min(int(np.ceil(ys.max() - 0.5)) + 1, H)
        if lo_x >= hi_x or lo_y >= hi_y:
            continue

        area = (xs[1] - xs[0]) * (ys[2] - ys[0]) - (xs[2] - xs[0]) * (ys[1] - ys[0])
        if area == 0.0:
            continue
        gx = np.arange(lo_x, hi_x) + 0.5
        gy = np.arange(lo_y, hi_y) + 0.5
        PX, PY = np.meshgrid(gx, gy)
        w0 = ((xs[1] - PX) * (ys[2] - PY) - (xs[2] - PX) * (ys[1] - PY)) / area
        w1 = ((xs[2] - PX) * (ys[0] - PY) - (xs[0] - PX) * (ys[2] - PY)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue

        # perspective-correct interpolation: 1/z is affine in screen space
        inv_z = w0 / z[i0] + w1 / z[i1] + w2 / z[i2]
        pix_z = np.where(inside, 1.0 / np.where(inside, inv_z, 1.0), np.inf)

        window = (slice(lo_y, hi_y), slice(lo_x, hi_x))
        closer = inside & (pix_z < depth[window])
        if not closer.any():
            continue
        depth[window] = np.where(closer, pix_z, depth[window])
        tri[window] = np.where(closer, t, tri[window])
        won_z = np.where(closer, pix_z, 0.0)
        b0 = (w0 / z[i0]) * won_z
        b1 = (w1 / z[i1]) * won_z
        b2 = (w2 / z[i2]) * won_z
        for c, b in enumerate((b0, b1, b2)):
            plane = bary[window + (c,)]
            bary[window + (c,)] = np.where(closer, b, plane)
    return MeshCoverage(tri=tri, bary=bary, depth=depth)


def _texel_weights(uv: np.ndarray, th: int, tw: int):
    """Bilinear texel footprint for UV points: 4 corner indices + weights.
    Texel (r, c) is centered at uv ((c+0.5)/tw, (r+0.5)/th); lookups
    clamp at the atlas edge."""
    u = np.clip(np.clip(uv[..., 0], 0.0, 1.0) * tw - 0.5, 0.0, tw - 1.0)
    v = np.clip(np.clip(uv[..., 1], 0.0, 1.0) * th - 0.5, 0.0, th - 1.0)
    c0 = np.floor(u)
    r0 = np.floor(v)
    fu = u - c0
    fv = v - r0
    c0 = c0.astype(np.int64)
    r0 = r0.astype(np.int64)
    c1 = np.minimum(c0 + 1, tw - 1)
    r1 = np.minimum(r0 + 1, th - 1)
    weights = (
        ((r0, c0), (1 - fv) * (1 - fu)),
        ((r0, c1), (1 - fv) * fu),
        ((r1, c0), fv * (1 - fu)),
        ((r1, c1), fv * fu),
    )
    return weights


def _pixel_uvs(mesh: Mesh, cov: MeshCoverage):
    hit = cov.hit()
    tris = mesh.triangles[cov.tri[hit]]
    b = cov.bary[hit]
    uv = (
        mesh.uvs[tris[:, 0]] * b[:, 0:1]
        + mesh.uvs[tris[:, 1]] * b[:, 1:2]
        + mesh.uvs[tris[:, 2]] * b[:, 2:3]
    )
    return hit, uv


def render_mesh(mesh: Mesh, texture, camera: Camera, background=(1.0, 1.0, 1.0)) -> ImageBuffer:
    """Textured render: nearest surface per pixel, bilinear texture fetch."""
    if mesh.uvs is None:
        raise ValueError("mesh has no uvs")
    tex = texture.data if isinstance(texture, ImageBuffer) else np.asarray(texture, dtype=np.float64)
    th, tw = tex.shape[:2]
    out = np.empty((camera.height, camera.width, 3))
    out[:] = np.asarray(background, dtype=np.float64)
    cov = rasterize_mesh(mesh, camera)
    hit, uv = _pixel_uvs(mesh, cov)
    if not hit.any():
        return ImageBuffer(out)
    color = np.zeros((len(uv), 3))
    for (r, c), w in _texel_weights(uv, th, tw):
        color += tex[r, c] * w[:, None]
    out[hit] = color
    return ImageBuffer(out)


def texture_gradient(mesh: Mesh, texture, camera: Camera, upstream_color: np.ndarray) -> np.ndarray:
    """Adjoint of render_mesh w.r.t. the texture: scatter each covered
    pixel's upstream gradient into its four bilinear texels."""
    if mesh.uvs is None:
        raise ValueError("mesh has no uvs")
    tex = texture.data if isinstance(texture, ImageBuffer) else np.asarray(texture, dtype=np.float64)
    th, tw = tex.shape[:2]
    up = np.asarray(upstream_color, dtype=np.float64)
    if up.shape != (camera.height, camera.width, 3):
        raise ValueError(f"upstream shape {up.shape} does not match the view")
    grad = np.zeros((th, tw, 3))
    cov = rasterize_mesh(mesh, camera)
    hit, uv = _pixel_uvs(mesh, cov)
    if not hit.any():
        return grad
    g = up[hit]
    for (r, c), w in _texel_weights(uv, th, tw):
        np.add.at(grad, (r, c), g * w[:, None])
    return grad
