"""Isosurface extraction from the density grid.

Marching cubes itself comes from scikit-image; this wrapper converts
index-space output to world coordinates, settles the orientation so
closed surfaces have positive signed volume, and treats "no crossings"
as a legitimate empty mesh.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from skimage import measure

from .density import DensityGrid

DEFAULT_ISO_FRACTION = 0.2


@dataclass
class Mesh:
    vertices: np.ndarray
    normals: np.ndarray
    triangles: np.ndarray
    uvs: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.uvs is not None:
            self.uvs = np.asarray(self.uvs, dtype=np.float64).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.triangles)

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def validate(self) -> None:
        if len(self.normals) != len(self.vertices):
            raise ValueError("normals must pair with vertices")
        if len(self) and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle indices out of range")
        if len(self.vertices):
            norms = np.linalg.norm(self.normals, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ValueError("normals must be unit length")
        if self.uvs is not None:
            if len(self.uvs) != len(self.vertices):
                raise ValueError("uvs must pair with vertices")
            if self.uvs.size and (self.uvs.min() < 0.0 or self.uvs.max() > 1.0):
                raise ValueError("uvs must lie in [0, 1]")

    def signed_volume(self) -> float:
        """One sixth of the summed triple products; positive for closed
        surfaces wound outward."""
        v = self.vertices
        a = v[self.triangles[:, 0]]
        b = v[self.triangles[:, 1]]
        c = v[self.triangles[:, 2]]
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def empty_mesh() -> Mesh:
    return Mesh(
        vertices=np.zeros((0, 3)),
        normals=np.zeros((0, 3)),
        triangles=np.zeros((0, 3), dtype=np.int64),
    )


def marching_cubes(grid: DensityGrid, iso: float | None = None) -> Mesh:
    """Extract the iso-level surface of the grid in world coordinates.

    iso defaults to 0.2 of the maximum sample.  A level the samples
    never cross yields an empty mesh.
    """
    samples = grid.samples
    if iso is None:
        iso = DEFAULT_ISO_FRACTION * float(samples.max())
    if not (samples.min() < iso < samples.max()):
        return empty_mesh()

    verts, faces, normals, _ = measure.marching_cubes(samples, level=iso)
    vertices = grid.origin + verts * grid.spacing
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = np.divide(normals, lengths, out=np.zeros_like(normals), where=lengths > 0)
    degenerate = (lengths[:, 0] == 0).nonzero()[0]
    if len(degenerate):
        normals[degenerate] = np.array([1.0, 0.0, 0.0])

    mesh = Mesh(vertices=vertices, normals=normals, triangles=faces)
    if mesh.signed_volume() < 0:
        mesh.triangles = mesh.triangles[:, ::-1].copy()
    return mesh
