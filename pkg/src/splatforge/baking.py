"""Texture back-projection from rendered or reference views.

Every texel covered by a UV chart is tied to a surface point; for each
view we test facing angle (camera-space normal z), image bounds, and
occlusion against the mesh's own depth buffer, then paint each texel
from the view that faces it most directly.  Unwritten texels are filled
from their nearest written neighbor afterward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .buffers import ImageBuffer
from .cameras import CANONICAL_AZIMUTHS, Camera
from .meshing import Mesh
from .meshrender import rasterize_mesh

NORMAL_Z_THRESHOLD = 0.1
OCCLUSION_EPS = 1e-3
BAKE_ELEVATIONS = (0.0, 30.0, -30.0)


@dataclass
class TexturedMesh:
    mesh: Mesh
    texture: ImageBuffer
    written: np.ndarray  # texels painted by back-projection (pre-dilation)

    def validate(self) -> None:
        self.mesh.validate()
        if self.mesh.uvs is None:
            raise ValueError("textured mesh requires uvs")
        th, tw = self.texture.data.shape[:2]
        if self.written.shape != (th, tw):
            raise ValueError("written mask must match the texture")


def default_baking_cameras(radius=2.5, fov_y_deg=49.0, size=256) -> list:
    """Four canonical azimuths at elevations 0 and +-30, plus top and
    bottom views."""
    cams = []
    for el in BAKE_ELEVATIONS:
        for az in CANONICAL_AZIMUTHS:
            cams.append(
                Camera.orbit(az, el, radius=radius, fov_y_deg=fov_y_deg, width=size, height=size)
            )
    cams.append(Camera.orbit(0.0, 90.0, radius=radius, fov_y_deg=fov_y_deg, width=size, height=size))
    cams.append(Camera.orbit(0.0, -90.0, radius=radius, fov_y_deg=fov_y_deg, width=size, height=size))
    return cams


def _texel_surface(mesh: Mesh, texture_size: int):
    """Rasterize UV charts onto the texel grid: for each covered texel,
    the surface point and unit normal interpolated from its triangle."""
    uv = mesh.uvs * texture_size
    tri_of = np.full((texture_size, texture_size), -1, dtype=np.int64)
    bary = np.zeros((texture_size, texture_size, 3))
    for t, (a, b, c) in enumerate(mesh.triangles):
        pa, pb, pc = uv[a], uv[b], uv[c]
        lo_x = max(int(np.floor(min(pa[0], pb[0], pc[0]) - 0.5)), 0)
        hi_x = min(int(np.ceil(max(pa[0], pb[0], pc[0]) - 0.5)) + 1, texture_size)
        lo_y = max(int(np.floor(min(pa[1], pb[1], pc[1]) - 0.5)), 0)
        hi_y = min(int(np.ceil(max(pa[1], pb[1], pc[1]) - 0.5)) + 1, texture_size)
        if lo_x >= hi_x or lo_y >= hi_y:
            continue
        area = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1])
        if area == 0.0:
            continue
        gx, gy = np.meshgrid(
            np.arange(lo_x, hi_x) + 0.5, np.arange(lo_y, hi_y) + 0.5
        )
        w0 = ((pb[0] - gx) * (pc[1] - gy) - (pc[0] - gx) * (pb[1] - gy)) / area
        w1 = ((pc[0] - gx) * (pa[1] - gy) - (pa[0] - gx) * (pc[1] - gy)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        window = (slice(lo_y, hi_y), slice(lo_x, hi_x))
        tri_of[window] = np.where(inside, t, tri_of[window])
        for k, w in enumerate((w0, w1, w2)):
            bary[window + (k,)] = np.where(inside, w, bary[window + (k,)])

    covered = tri_of >= 0
    rows, cols = np.nonzero(covered)
    tris = mesh.triangles[tri_of[rows, cols]]
    b = bary[rows, cols]
    pos = (
        mesh.vertices[tris[:, 0]] * b[:, 0:1]
        + mesh.vertices[tris[:, 1]] * b[:, 1:2]
        + mesh.vertices[tris[:, 2]] * b[:, 2:3]
    )
    nrm = (
        mesh.normals[tris[:, 0]] * b[:, 0:1]
        + mesh.normals[tris[:, 1]] * b[:, 1:2]
        + mesh.normals[tris[:, 2]] * b[:, 2:3]
    )
    lengths = np.linalg.norm(nrm, axis=1, keepdims=True)
    nrm = np.divide(nrm, lengths, out=np.zeros_like(nrm), where=lengths > 0)
    return covered, rows, cols, pos, nrm


def _bilinear_sample(image: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    H, W = image.shape[:2]
    u = np.clip(px - 0.5, 0.0, W - 1.0)
    v = np.clip(py - 0.5, 0.0, H - 1.0)
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fu = (u - x0)[:, None]
    fv = (v - y0)[:, None]
    return (
        image[y0, x0] * (1 - fv) * (1 - fu)
        + image[y0, x1] * (1 - fv) * fu
        + image[y1, x0] * fv * (1 - fu)
        + image[y1, x1] * fv * fu
    )


def bake_texture(
    mesh: Mesh,
    views,
    normal_threshold: float = NORMAL_Z_THRESHOLD,
    texture_size: int = 256,
) -> TexturedMesh:
    """Paint the UV atlas from (camera, image) pairs.

    Each texel takes its color from the admissible view with the largest
    facing cosine; views are pre-sorted by camera position so the
    selection does not depend on the caller's list order.
    """
    if mesh.uvs is None:
        raise ValueError("mesh has no uvs")
    views = list(views)
    if not views:
        raise ValueError("no views to bake from")

    covered, rows, cols, pos, nrm = _texel_surface(mesh, texture_size)
    texture = np.zeros((texture_size, texture_size, 3))
    written = np.zeros((texture_size, texture_size), dtype=bool)
    if len(rows) == 0:
        return TexturedMesh(mesh=mesh, texture=ImageBuffer(texture), written=written)

    best_cos = np.full(len(rows), -np.inf)
    color = np.zeros((len(rows), 3))

    def camera_key(pair):
        p = pair[0].position
        return (float(p[0]), float(p[1]), float(p[2]))

    for camera, image in sorted(views, key=camera_key):
        img = image.data if isinstance(image, ImageBuffer) else np.asarray(image, dtype=np.float64)
        forward = camera.rotation()[2]
        facing = -(nrm @ forward)

        cs = camera.world_to_camera(pos)
        z = cs[:, 2]
        in_front = z > camera.near
        fx, fy, cx, cy = camera.intrinsics()
        safe_z = np.where(in_front, z, 1.0)
        px = fx * cs[:, 0] / safe_z + cx
        py = fy * cs[:, 1] / safe_z + cy
        in_image = (
            in_front
            & (px >= 0.0)
            & (px <= camera.width)
            & (py >= 0.0)
            & (py <= camera.height)
        )

        depth = rasterize_mesh(mesh, camera).depth
        ix = np.clip(px.astype(np.int64), 0, camera.width - 1)
        iy = np.clip(py.astype(np.int64), 0, camera.height - 1)
        visible = in_image & (z <= depth[iy, ix] + OCCLUSION_EPS * np.maximum(z, 1.0))

        take = visible & (facing >= normal_threshold) & (facing > best_cos)
        if not take.any():
            continue
        sampled = _bilinear_sample(img, px[take], py[take])
        color[take] = sampled
        best_cos[take] = facing[take]

    painted = best_cos > -np.inf
    texture[rows[painted], cols[painted]] = color[painted]
    written[rows[painted], cols[painted]] = True

    if written.any() and not written.all():
        # fill the rest (gutters included) from the nearest painted texel
        _, (ny, nx) = ndimage.distance_transform_edt(~written, return_indices=True)
        texture = texture[ny, nx]

    out = TexturedMesh(mesh=mesh, texture=ImageBuffer(texture), written=written)
    out.validate()
    return out
