"""UV atlas construction.

Triangles are grouped into charts by growing regions whose face normals
stay within a fixed cone of the seed face, each chart is flattened by
planar projection along the seed normal (the cone bound keeps every
projected triangle non-degenerate), and chart rectangles are packed
into the unit square with a skyline packer, keeping a gutter between
chart contents.  Vertices are duplicated per chart so UVs are
per-vertex.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .meshing import Mesh

CONE_COS = 0.5  # grow a chart while face normal . seed normal >= this
DEGENERATE_AREA = 1e-12
PACK_OCCUPANCY = 0.55


@dataclass
class UnwrapReport:
    charts: int = 0
    degenerate: list = field(default_factory=list)
    uv_scale: float = 0.0  # world units -> UV units


def _face_geometry(mesh: Mesh):
    v = mesh.vertices
    t = mesh.triangles
    cross = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    normals = np.divide(
        cross, 2 * areas[:, None], out=np.zeros_like(cross), where=areas[:, None] > 0
    )
    return normals, areas


def _adjacency(triangles: np.ndarray):
    edge_faces = defaultdict(list)
    for f, t in enumerate(triangles):
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            edge_faces[(min(a, b), max(a, b))].append(f)
    neighbors = defaultdict(list)
    for faces in edge_faces.values():
        for i in faces:
            for j in faces:
                if i != j:
                    neighbors[i].append(j)
    return neighbors


def _grow_charts(mesh: Mesh, normals, areas):
    """Greedy seeded region growth; returns (list of face-index lists,
    degenerate face list)."""
    nf = len(mesh.triangles)
    degenerate = [f for f in range(nf) if areas[f] <= DEGENERATE_AREA]
    skip = set(degenerate)
    neighbors = _adjacency(mesh.triangles)
    assigned = np.full(nf, -1, dtype=np.int64)
    charts = []
    for seed in range(nf):
        if assigned[seed] >= 0 or seed in skip:
            continue
        chart_id = len(charts)
        seed_n = normals[seed]
        members = [seed]
        assigned[seed] = chart_id
        queue = [seed]
        while queue:
            f = queue.pop(0)
            for g in neighbors[f]:
                if assigned[g] >= 0 or g in skip:
                    continue
                if float(normals[g] @ seed_n) >= CONE_COS:
                    assigned[g] = chart_id
                    members.append(g)
                    queue.append(g)
        charts.append((members, seed_n))
    return charts, degenerate


def _flatten_chart(mesh: Mesh, faces, seed_normal):
    """Project the chart's vertices onto the seed plane.  Returns
    (local vertex ids, local triangles, 2-d coords, extent)."""
    n = seed_normal
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(n)))] = 1.0
    u = np.cross(n, helper)
    u /= np.linalg.norm(u)
    w = np.cross(n, u)

    used = []
    local = {}
    tris = np.empty((len(faces), 3), dtype=np.int64)
    for row, f in enumerate(faces):
        for col, vid in enumerate(mesh.triangles[f]):
            vid = int(vid)
            if vid not in local:
                local[vid] = len(used)
                used.append(vid)
            tris[row, col] = local[vid]
    pts = mesh.vertices[used]
    coords = np.stack([pts @ u, pts @ w], axis=1)
    coords -= coords.min(axis=0)
    return used, tris, coords, coords.max(axis=0)


class _Skyline:
    """Bottom-left skyline packer over a fixed-width bin."""

    def __init__(self, width: float, height: float):
        self.width = width
        self.height = height
        self.segments = [(0.0, 0.0, width)]  # (x, y, length)

    def _fit_at(self, index: int, w: float):
        x, y, _ = self.segments[index]
        if x + w > self.width:
            return None
        top = y
        reach = x + w
        for sx, sy, sl in self.segments[index:]:
            if sx >= reach:
                break
            top = max(top, sy)
        return top

    def place(self, w: float, h: float):
        best = None
        for i in range(len(self.segments)):
            y = self._fit_at(i, w)
            if y is None or y + h > self.height:
                continue
            x = self.segments[i][0]
            if best is None or (y, x) < (best[1], best[0]):
                best = (x, y)
        if best is None:
            return None
        x, y = best
        self._raise(x, y + h, w)
        return x, y

    def _raise(self, x: float, top: float, w: float):
        reach = x + w
        out = []
        for sx, sy, sl in self.segments:
            end = sx + sl
            if end <= x or sx >= reach:
                out.append((sx, sy, sl))
                continue
            if sx < x:
                out.append((sx, sy, x - sx))
            if end > reach:
                out.append((reach, sy, end - reach))
        out.append((x, top, w))
        out.sort()
        merged = [out[0]]
        for seg in out[1:]:
            px, py, pl = merged[-1]
            if seg[1] == py and abs(px + pl - seg[0]) < 1e-12:
                merged[-1] = (px, py, pl + seg[2])
            else:
                merged.append(seg)
        self.segments = merged


def uv_unwrap(mesh: Mesh, texture_size: int = 256, gutter_texels: float = 2.0):
    """Assign packed per-vertex UVs.

    Returns (new mesh with duplicated per-chart vertices and uvs,
    UnwrapReport).  Degenerate triangles are dropped and reported.
    """
    if texture_size < 1:
        raise ValueError("texture_size must be >= 1")
    if gutter_texels < 0:
        raise ValueError("gutter_texels must be >= 0")
    if mesh.is_empty:
        out = Mesh(
            vertices=mesh.vertices.copy(),
            normals=mesh.normals.copy(),
            triangles=mesh.triangles.copy(),
            uvs=np.zeros((len(mesh.vertices), 2)),
        )
        return out, UnwrapReport()

    normals, areas = _face_geometry(mesh)
    charts, degenerate = _grow_charts(mesh, normals, areas)
    flat = [_flatten_chart(mesh, faces, n) for faces, n in charts]

    gutter = gutter_texels / texture_size  # UV units
    extents = np.array([f[3] for f in flat])
    world_area = float(np.prod(extents + 1e-12, axis=1).sum())
    scale = np.sqrt(PACK_OCCUPANCY / max(world_area, 1e-12))

    for _ in range(60):
        packer = _Skyline(1.0, 1.0)
        order = sorted(
            range(len(flat)), key=lambda i: (-extents[i][1], -extents[i][0], i)
        )
        positions = [None] * len(flat)
        ok = True
        for i in order:
            w, h = extents[i] * scale + 2 * gutter
            pos = packer.place(float(w), float(h))
            if pos is None:
                ok = False
                break
            positions[i] = (pos[0] + gutter, pos[1] + gutter)
        if ok:
            break
        scale *= 0.85
    else:
        raise RuntimeError("could not pack charts into the atlas")

    verts, norms, uvs, tri_rows = [], [], [], []
    offset = 0
    for (used, tris, coords, _), pos in zip(flat, positions):
        verts.append(mesh.vertices[used])
        norms.append(mesh.normals[used])
        uvs.append(coords * scale + np.asarray(pos))
        tri_rows.append(tris + offset)
        offset += len(used)

    out = Mesh(
        vertices=np.concatenate(verts),
        normals=np.concatenate(norms),
        triangles=np.concatenate(tri_rows),
        uvs=np.clip(np.concatenate(uvs), 0.0, 1.0),
    )
    out.validate()
    report = UnwrapReport(charts=len(charts), degenerate=degenerate, uv_scale=float(scale))
    return out, report
