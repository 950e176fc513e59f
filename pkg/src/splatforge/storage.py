"""File formats: point clouds, images, depth maps, meshes, turntables.

The cloud format is a small ASCII header followed by packed
little-endian float32 records, so round trips are lossless at f32.
Meshes go to Wavefront-style text plus a PNG texture; depth maps to
16-bit grayscale PNG with the scale in a sidecar file.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

from .buffers import ImageBuffer
from .gaussians import GaussianCloud
from .meshing import Mesh

CLOUD_MAGIC = "splatforge-cloud"
CLOUD_VERSION = 1
CLOUD_FIELDS = "center:3f scale:3f rotation:4f opacity:1f color:3f"
FLOATS_PER_RECORD = 14
DEPTH_SCALE_SUFFIX = ".scale"


def save_cloud(cloud: GaussianCloud, path) -> None:
    header = (
        f"{CLOUD_MAGIC} {CLOUD_VERSION}\n"
        f"count {len(cloud)}\n"
        f"fields {CLOUD_FIELDS}\n"
        "end\n"
    )
    records = np.hstack(
        [
            cloud.centers,
            cloud.log_scales,
            cloud.rotations,
            cloud.opacity_logits[:, None],
            cloud.colors,
        ]
    ).astype("<f4")
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(records.tobytes())


def load_cloud(path) -> GaussianCloud:
    with open(path, "rb") as f:
        blob = f.read()
    end = blob.find(b"end\n")
    if end < 0:
        raise ValueError(f"{path}: not a cloud file (no header terminator)")
    header_size = end + 4
    lines = blob[:end].decode("ascii", errors="replace").splitlines()
    if not lines or not lines[0].startswith(CLOUD_MAGIC):
        raise ValueError(f"{path}: not a cloud file (bad magic)")
    version = lines[0].split()[-1]
    if version != str(CLOUD_VERSION):
        raise ValueError(
            f"{path}: unsupported cloud format version {version} "
            f"(supported: {CLOUD_VERSION})"
        )
    fields = {}
    for line in lines[1:]:
        key, _, rest = line.partition(" ")
        fields[key] = rest
    if fields.get("fields") != CLOUD_FIELDS:
        raise ValueError(f"{path}: unexpected field layout {fields.get('fields')!r}")
    count = int(fields["count"])

    body = blob[header_size:]
    expected = count * FLOATS_PER_RECORD * 4
    if len(body) < expected:
        raise ValueError(
            f"{path}: truncated at byte {header_size + len(body)}; "
            f"need {expected} record bytes after the header, got {len(body)}"
        )
    records = np.frombuffer(body[:expected], dtype="<f4").reshape(count, FLOATS_PER_RECORD)
    records = records.astype(np.float64)
    return GaussianCloud(
        centers=records[:, 0:3],
        log_scales=records[:, 3:6],
        rotations=records[:, 6:10],
        opacity_logits=records[:, 10],
        colors=records[:, 11:14],
    )


def save_image(image, path) -> None:
    data = image.data if isinstance(image, ImageBuffer) else np.asarray(image)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    as_u8 = np.clip(np.round(data * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(as_u8).save(path)


def load_image(path) -> ImageBuffer:
    if not os.path.exists(path):
        raise FileNotFoundError(f"image not found: {path}")
    img = Image.open(path).convert("RGB")
    return ImageBuffer(np.asarray(img, dtype=np.float64) / 255.0)


def save_depth(depth, path) -> None:
    """16-bit grayscale PNG; the max depth goes to a sidecar so the
    quantization scale survives."""
    plane = np.asarray(depth, dtype=np.float64)
    if plane.ndim == 3:
        plane = plane[:, :, 0]
    finite = plane[np.isfinite(plane)]
    scale = float(finite.max()) if finite.size and finite.max() > 0 else 1.0
    quantized = np.clip(np.where(np.isfinite(plane), plane, 0.0) / scale, 0.0, 1.0)
    as_u16 = np.round(quantized * 65535.0).astype(np.uint16)
    Image.fromarray(as_u16).save(path)
    with open(f"{path}{DEPTH_SCALE_SUFFIX}", "w") as f:
        f.write(f"{scale!r}\n")


def load_depth(path) -> np.ndarray:
    sidecar = f"{path}{DEPTH_SCALE_SUFFIX}"
    if not os.path.exists(path):
        raise FileNotFoundError(f"depth map not found: {path}")
    if not os.path.exists(sidecar):
        raise FileNotFoundError(f"depth sidecar not found: {sidecar}")
    with open(sidecar) as f:
        scale = float(f.read().strip())
    img = Image.open(path)
    data = np.asarray(img, dtype=np.float64)
    return data / 65535.0 * scale


def save_mesh(mesh: Mesh, path_base, texture=None) -> None:
    """Write <base>.obj (+ .mtl and <base>.png when textured).

    The V texture coordinate is flipped on write, matching the usual
    bottom-left origin of the format; load_mesh flips it back.
    """
    obj_path = f"{path_base}.obj"
    name = os.path.basename(path_base)
    with open(obj_path, "w") as f:
        f.write("# splatforge mesh\n")
        if texture is not None:
            f.write(f"mtllib {name}.mtl\n")
        for v in mesh.vertices:
            f.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for n in mesh.normals:
            f.write(f"vn {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}\n")
        if mesh.uvs is not None:
            for uv in mesh.uvs:
                f.write(f"vt {uv[0]:.9g} {1.0 - uv[1]:.9g}\n")
        if texture is not None:
            f.write("usemtl material0\n")
        for tri in mesh.triangles:
            a, b, c = (int(i) + 1 for i in tri)
            if mesh.uvs is not None:
                f.write(f"f {a}/{a}/{a} {b}/{b}/{b} {c}/{c}/{c}\n")
            else:
                f.write(f"f {a}//{a} {b}//{b} {c}//{c}\n")
    if texture is not None:
        with open(f"{path_base}.mtl", "w") as f:
            f.write("newmtl material0\n")
            f.write(f"map_Kd {name}.png\n")
        save_image(texture, f"{path_base}.png")


def load_mesh(path_base):
    """Read a mesh written by save_mesh; returns (Mesh, texture or None)."""
    obj_path = f"{path_base}.obj"
    if not os.path.exists(obj_path):
        raise FileNotFoundError(f"mesh not found: {obj_path}")
    verts, normals, uvs, tris = [], [], [], []
    with open(obj_path) as f:
        for line in f:
            parts = line.split()
            if not parts or parts[0] == "#":
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vn":
                normals.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vt":
                uvs.append([float(parts[1]), 1.0 - float(parts[2])])
            elif parts[0] == "f":
                tris.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    mesh = Mesh(
        vertices=np.array(verts, dtype=np.float64).reshape(-1, 3),
        normals=np.array(normals, dtype=np.float64).reshape(-1, 3),
        triangles=np.array(tris, dtype=np.int64).reshape(-1, 3),
        uvs=np.array(uvs, dtype=np.float64).reshape(-1, 2) if uvs else None,
    )
    texture = None
    png_path = f"{path_base}.png"
    if os.path.exists(png_path):
        texture = load_image(png_path)
    return mesh, texture


def turntable_strip(render_fn, width: int, height: int, frames: int = 8) -> ImageBuffer:
    """Horizontal strip of orbit renders at elevation 0.

    render_fn(camera) -> ImageBuffer; frames evenly spaced azimuths."""
    from .cameras import Camera

    panels = []
    for i in range(frames):
        az = 360.0 * i / frames
        cam = Camera.orbit(az, 0.0, width=width, height=height)
        panels.append(render_fn(cam).data)
    return ImageBuffer(np.hstack(panels))
