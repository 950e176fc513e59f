import numpy as np
import pytest

from splatforge.cameras import (
    CANONICAL_AZIMUTHS,
    Camera,
    CameraSampler,
    TrainingPhase,
    sample_training_camera,
)


def test_orbit_front_position():
    # azimuth 0, elevation 0 sits on +z at the given radius
    cam = Camera.orbit(azimuth_deg=0.0, elevation_deg=0.0, radius=2.5)
    assert np.allclose(cam.position, [0.0, 0.0, 2.5])


def test_orbit_azimuth_90_is_plus_x():
    cam = Camera.orbit(azimuth_deg=90.0, elevation_deg=0.0, radius=2.0)
    assert np.allclose(cam.position, [2.0, 0.0, 0.0], atol=1e-12)


def test_orbit_elevation_raises_camera():
    cam = Camera.orbit(azimuth_deg=0.0, elevation_deg=30.0, radius=2.0)
    assert np.isclose(cam.position[1], 2.0 * np.sin(np.radians(30.0)))


def test_orbit_looks_at_origin():
    cam = Camera.orbit(azimuth_deg=37.0, elevation_deg=-12.0, radius=3.0)
    fwd = cam.rotation()[2]
    expect = -cam.position / np.linalg.norm(cam.position)
    assert np.allclose(fwd, expect)


def test_orbit_angle_recovery():
    cam = Camera.orbit(azimuth_deg=-120.0, elevation_deg=25.0, radius=2.5)
    assert np.isclose(cam.azimuth_deg, -120.0)
    assert np.isclose(cam.elevation_deg, 25.0)
    assert np.isclose(cam.radius, 2.5)


def test_rotation_is_orthonormal():
    cam = Camera.orbit(azimuth_deg=73.0, elevation_deg=-28.0, radius=2.5)
    R = cam.rotation()
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(R), 1.0)


def test_world_to_camera_center_on_axis():
    cam = Camera.orbit(azimuth_deg=45.0, elevation_deg=10.0, radius=2.5)
    t = cam.world_to_camera(np.zeros((1, 3)))
    # origin projects onto the optical axis at distance = radius
    assert np.allclose(t[0, :2], 0.0, atol=1e-12)
    assert np.isclose(t[0, 2], 2.5)


def test_intrinsics_center_and_focal():
    cam = Camera.orbit(0.0, 0.0, 2.5, width=640, height=480, fov_y_deg=60.0)
    fx, fy, cx, cy = cam.intrinsics()
    assert fx == fy
    assert np.isclose(fy, 240.0 / np.tan(np.radians(30.0)))
    assert cx == 320.0 and cy == 240.0


def test_resized_keeps_fov():
    cam = Camera.orbit(0.0, 0.0, 2.5, width=512, height=512)
    small = cam.resized(128, 128)
    assert small.width == 128 and small.height == 128
    assert np.isclose(small.fov_y_deg, cam.fov_y_deg)
    _, fy_small, _, _ = small.intrinsics()
    _, fy_big, _, _ = cam.intrinsics()
    assert np.isclose(fy_big / fy_small, 4.0)


def test_camera_validation():
    with pytest.raises(ValueError):
        Camera.orbit(0.0, 0.0, 2.5, near=1.0, far=0.5)
    with pytest.raises(ValueError):
        Camera.orbit(0.0, 0.0, 2.5, fov_y_deg=181.0)


def test_quadruple_offsets():
    cam = Camera.orbit(azimuth_deg=30.0, elevation_deg=15.0, radius=2.5)
    quad = cam.quadruple()
    az = [c.azimuth_deg for c in quad]
    expected = [30.0, 120.0, -150.0, -60.0]
    assert np.allclose(az, expected)
    assert all(np.isclose(c.elevation_deg, 15.0) for c in quad)


def test_sampler_ranges_respected():
    sampler = CameraSampler(rng=np.random.default_rng(9))
    for frac in np.linspace(0.0, 0.8, 40):
        cam = sample_training_camera(sampler, TrainingPhase(float(frac)))
        assert -180.0 <= cam.azimuth_deg <= 180.0
        assert -30.0 - 1e-9 <= cam.elevation_deg <= 30.0 + 1e-9


def test_sampler_final_sixth_cycles_canonical_views():
    sampler = CameraSampler(rng=np.random.default_rng(9))
    seen = [sample_training_camera(sampler, TrainingPhase(0.9)).azimuth_deg for _ in range(8)]
    expect = list(CANONICAL_AZIMUTHS) * 2
    assert np.allclose(seen, expect)


def test_sampler_deterministic():
    a = CameraSampler(rng=np.random.default_rng(4))
    b = CameraSampler(rng=np.random.default_rng(4))
    ca = sample_training_camera(a, TrainingPhase(0.2))
    cb = sample_training_camera(b, TrainingPhase(0.2))
    assert np.allclose(ca.position, cb.position)


def test_phase_bounds():
    with pytest.raises(ValueError):
        TrainingPhase(1.5)
