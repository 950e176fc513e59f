import numpy as np
import pytest

from splatforge.baking import (
    TexturedMesh,
    bake_texture,
    default_baking_cameras,
)
from splatforge.buffers import ImageBuffer
from splatforge.cameras import Camera
from splatforge.density import DensityGrid
from splatforge.meshing import Mesh, marching_cubes
from splatforge.meshrender import render_mesh
from splatforge.unwrap import uv_unwrap


def quad_mesh():
    """Unit quad in the z=0 plane facing +z, uvs covering most of the
    atlas with a small margin."""
    verts = np.array([[-0.5, -0.5, 0.0], [0.5, -0.5, 0.0], [0.5, 0.5, 0.0], [-0.5, 0.5, 0.0]])
    normals = np.tile([0.0, 0.0, 1.0], (4, 1))
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    uvs = np.array([[0.1, 0.1], [0.9, 0.1], [0.9, 0.9], [0.1, 0.9]])
    return Mesh(vertices=verts, normals=normals, triangles=tris, uvs=uvs)


def sphere_mesh(res=24):
    axis = np.linspace(-0.8, 0.8, res)
    X, Y, Z = np.meshgrid(axis, axis, axis, indexing="ij")
    samples = np.exp(-(X**2 + Y**2 + Z**2) / (2 * 0.25**2))
    grid = DensityGrid(
        origin=np.array([-0.8, -0.8, -0.8]),
        spacing=np.full(3, axis[1] - axis[0]),
        samples=samples,
    )
    mesh = marching_cubes(grid, iso=np.exp(-2.0))
    flat, _ = uv_unwrap(mesh, texture_size=128)
    return flat


def flat_view(az, el, value, size=64):
    cam = Camera.orbit(az, el, radius=2.5, width=size, height=size)
    return cam, ImageBuffer(np.full((size, size, 3), value, dtype=np.float64))


def test_front_view_paints_every_covered_texel():
    quad = quad_mesh()
    baked = bake_texture(quad, [flat_view(0.0, 0.0, 0.5)], texture_size=64)
    # uv 0.1..0.9 of a 64 atlas covers texel centers 6.5..57.5
    interior = np.zeros((64, 64), dtype=bool)
    interior[6:58, 6:58] = True
    assert baked.written[interior].all()
    assert not baked.written[~interior].any()
    np.testing.assert_allclose(baked.texture.data[baked.written], 0.5)


def test_grazing_view_writes_nothing():
    quad = quad_mesh()  # normal +z, side camera sees it edge-on
    baked = bake_texture(quad, [flat_view(90.0, 0.0, 1.0)], texture_size=64)
    assert baked.written.sum() == 0


def test_back_view_rejected_by_facing():
    quad = quad_mesh()
    baked = bake_texture(quad, [flat_view(180.0, 0.0, 1.0)], texture_size=64)
    assert baked.written.sum() == 0


def test_best_facing_view_wins():
    quad = quad_mesh()
    views = [flat_view(40.0, 0.0, 0.25), flat_view(0.0, 0.0, 0.75)]
    baked = bake_texture(quad, views, texture_size=64)
    np.testing.assert_allclose(baked.texture.data[baked.written], 0.75)


def test_view_order_does_not_matter():
    mesh = sphere_mesh(res=16)
    views = [flat_view(az, 0.0, az / 360.0) for az in (0.0, 90.0, 180.0, -90.0)]
    a = bake_texture(mesh, views, texture_size=128)
    b = bake_texture(mesh, list(reversed(views)), texture_size=128)
    np.testing.assert_array_equal(a.texture.data, b.texture.data)
    np.testing.assert_array_equal(a.written, b.written)


def test_dilation_fills_gutter_from_nearest():
    quad = quad_mesh()
    baked = bake_texture(quad, [flat_view(0.0, 0.0, 0.5)], texture_size=64)
    assert not baked.written[0, 0]
    np.testing.assert_allclose(baked.texture.data[0, 0], 0.5)


def test_occluded_texels_not_painted_through():
    # a small quad hovers in front of a big one; behind it the big
    # quad's texels must survive untouched by the front view
    big = quad_mesh()
    small = np.array([[-0.2, -0.2, 0.5], [0.2, -0.2, 0.5], [0.2, 0.2, 0.5], [-0.2, 0.2, 0.5]])
    verts = np.vstack([big.vertices, small])
    normals = np.tile([0.0, 0.0, 1.0], (8, 1))
    tris = np.vstack([big.triangles, big.triangles + 4])
    uvs = np.vstack([big.uvs, np.array([[0.3, 0.3], [0.7, 0.3], [0.7, 0.7], [0.3, 0.7]]) * 0.0])
    # give the small quad its own uv island in a corner
    uvs[4:] = np.array([[0.92, 0.92], [0.98, 0.92], [0.98, 0.98], [0.92, 0.98]])
    mesh = Mesh(vertices=verts, normals=normals, triangles=tris, uvs=uvs)

    baked = bake_texture(mesh, [flat_view(0.0, 0.0, 1.0)], texture_size=64)
    # center of the big quad's island maps to world points hidden by the
    # small quad
    assert not baked.written[29, 29]
    # but the big quad's periphery is visible and painted
    assert baked.written[10, 10]


def test_sphere_coverage_before_dilation():
    mesh = sphere_mesh(res=24)
    views = []
    for az in range(0, 360, 45):
        views.append(flat_view(float(az), 0.0, 1.0))
    views.append(flat_view(0.0, 90.0, 1.0))
    views.append(flat_view(0.0, -90.0, 1.0))
    baked = bake_texture(mesh, views, texture_size=128)
    covered = baked.written.sum()
    # count texels under any chart by baking with an always-facing hack:
    # dilation never marks written, so compare against uv rasterization
    from splatforge.baking import _texel_surface

    chart_texels = _texel_surface(mesh, 128)[0].sum()
    assert covered / chart_texels >= 0.95


def test_no_views_raises():
    with pytest.raises(ValueError):
        bake_texture(quad_mesh(), [])


def test_missing_uvs_raises():
    quad = quad_mesh()
    bare = Mesh(vertices=quad.vertices, normals=quad.normals, triangles=quad.triangles)
    with pytest.raises(ValueError):
        bake_texture(bare, [flat_view(0.0, 0.0, 1.0)])


def test_default_baking_cameras_cover_poles():
    cams = default_baking_cameras()
    assert len(cams) == 14
    els = sorted(round(c.elevation_deg) for c in cams)
    assert els[0] == -90 and els[-1] == 90


def test_textured_mesh_validation():
    quad = quad_mesh()
    tex = ImageBuffer(np.zeros((8, 8, 3)))
    good = TexturedMesh(mesh=quad, texture=tex, written=np.zeros((8, 8), dtype=bool))
    good.validate()
    bad = TexturedMesh(mesh=quad, texture=tex, written=np.zeros((4, 8), dtype=bool))
    with pytest.raises(ValueError):
        bad.validate()


def test_bakes_rendered_views_back_to_source_texture():
    # round trip: render a textured sphere, bake from those renders,
    # compare against the source texture on written texels
    mesh = sphere_mesh(res=16)
    from splatforge.baking import _texel_surface

    covered, rows, cols, pos, _ = _texel_surface(mesh, 128)
    src = np.zeros((128, 128, 3))
    src[rows, cols] = np.clip(pos + 0.5, 0.0, 1.0)
    src_buf = ImageBuffer(src)

    views = []
    for az in range(0, 360, 45):
        cam = Camera.orbit(float(az), 0.0, radius=2.5, width=96, height=96)
        views.append((cam, render_mesh(mesh, src_buf, cam)))
    for el in (90.0, -90.0):
        cam = Camera.orbit(0.0, el, radius=2.5, width=96, height=96)
        views.append((cam, render_mesh(mesh, src_buf, cam)))

    baked = bake_texture(mesh, views, texture_size=128)
    err = np.abs(baked.texture.data[baked.written] - src[baked.written])
    assert err.mean() < 0.05
