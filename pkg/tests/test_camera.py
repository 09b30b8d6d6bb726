import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from signpos.camera import (
    KITTI_00_02,
    KITTI_04_10,
    Calibration,
    CameraIntrinsics,
    RadialDistortion,
    distort,
    perturb,
    perturb_calibration,
    project,
    undistort,
)
from signpos.errors import BehindCamera, InvalidCalibration, InvalidPerturbation, NonConvergence

D_00 = RadialDistortion(-0.363, 0.151)


def test_distort_fixed_points():
    assert np.array_equal(distort([0.0, 0.0], D_00), [0.0, 0.0])
    p = np.array([[0.3, -0.2], [0.7, 0.1]])
    assert np.array_equal(distort(p, RadialDistortion()), p)


def test_distort_scalar_oracle():
    expected = 0.5 * (1 - 0.363 * 0.25 + 0.151 * 0.0625)
    assert distort([0.5, 0.0], D_00) == pytest.approx([expected, 0.0], abs=1e-15)


def test_undistort_origin_and_roundtrip():
    assert np.allclose(undistort([0.0, 0.0], D_00), [0.0, 0.0], atol=0)
    assert np.allclose(undistort(distort([0.3, -0.2], D_00), D_00), [0.3, -0.2], atol=1e-8)


def test_undistort_grid_roundtrip():
    g = np.linspace(-0.7, 0.7, 10)
    pts = np.stack(np.meshgrid(g, g), axis=-1).reshape(-1, 2)
    assert np.max(np.abs(undistort(distort(pts, D_00), D_00) - pts)) < 1e-8
    assert np.max(np.abs(distort(undistort(pts * 0.8, D_00), D_00) - pts * 0.8)) < 1e-10


def test_undistort_nonconvergence_outside_monotone_regime():
    # r (1 - r^2) peaks at ~0.385, so r_d = 0.5 has no preimage
    with pytest.raises(NonConvergence):
        undistort([0.5, 0.0], RadialDistortion(-1.0, 0.0))


@settings(max_examples=200, deadline=None)
@given(
    l1=st.floats(-0.4, 0.2), l2=st.floats(0.0, 0.2),
    x=st.floats(-0.55, 0.55), y=st.floats(-0.55, 0.55),
)
def test_roundtrip_property(l1, l2, x, y):
    d = RadialDistortion(l1, l2)
    radius = math.hypot(x, y)
    if not d.is_monotone(max(radius, 1e-3)):
        return
    p = np.array([x, y])
    assert np.max(np.abs(undistort(distort(p, d), d) - p)) < 1e-8


def test_project_examples():
    k = KITTI_00_02.intrinsics
    assert np.allclose(project([0, 0, 1], k), [k.cx, k.cy])
    assert project([1, 0, 1], k)[0] == pytest.approx(1654.907, abs=1e-9)
    k4 = KITTI_04_10.intrinsics
    expected = [959.198 * 0.2 / 4 + 694.438, 952.932 * -0.1 / 4 + 241.679]
    assert np.allclose(project([0.2, -0.1, 4], k4), expected, atol=1e-12)


@pytest.mark.parametrize("z", [0.0, -1.0])
def test_project_behind_camera(z):
    with pytest.raises(BehindCamera):
        project([0.1, 0.1, z], KITTI_00_02.intrinsics)


@settings(max_examples=100, deadline=None)
@given(x=st.floats(-5, 5), y=st.floats(-5, 5), z=st.floats(0.1, 50), a=st.floats(0.01, 100))
def test_project_homogeneous(x, y, z, a):
    k = KITTI_04_10.intrinsics
    p = np.array([x, y, z])
    assert np.allclose(project(a * p, k), project(p, k), rtol=1e-12, atol=1e-9)


def test_perturb_examples():
    k, d = KITTI_00_02.intrinsics, KITTI_00_02.distortion
    assert perturb(k, d) == (k, d)
    k2, _ = perturb(k, d, focal=10)
    assert k2.fx == pytest.approx(1056.1265, abs=1e-9)
    assert k2.cx == k.cx
    _, d2 = perturb(k, d, distortion=-15)
    assert d2.lambda1 == pytest.approx(-0.30855, abs=1e-12)
    assert d2.lambda2 == pytest.approx(0.151 * 0.85, abs=1e-12)
    _, d3 = perturb(k, d, distortion=(10, -10))
    assert d3.lambda1 == pytest.approx(-0.363 * 1.1) and d3.lambda2 == pytest.approx(0.151 * 0.9)


@pytest.mark.parametrize("pct", [-15.0, -3.0, 7.5, 15.0])
def test_perturb_compensating_inverse(pct):
    c = KITTI_04_10
    back = 100.0 * (1.0 / (1.0 + pct / 100.0) - 1.0)
    c2 = perturb_calibration(perturb_calibration(c, pct, pct, pct), back, back, back)
    for a, b in zip(c.to_dict().values(), c2.to_dict().values()):
        assert b == pytest.approx(a, rel=1e-12)


@pytest.mark.parametrize("kw", [{"focal": 101}, {"principal": -100.5}, {"focal": -100}, {"principal": -100},
                                {"distortion": (100, 0)}])
def test_perturb_invalid(kw):
    with pytest.raises(InvalidPerturbation):
        perturb(KITTI_00_02.intrinsics, D_00, **kw)


def test_calibration_invariants():
    k = CameraIntrinsics(900, 900, 640, 360, 1280, 720)
    with pytest.raises(InvalidCalibration):
        Calibration(k, RadialDistortion(-1.5, 0.0))
    with pytest.raises(InvalidCalibration):
        CameraIntrinsics(900, 900, 1300, 360, 1280, 720)
    with pytest.raises(InvalidCalibration):
        CameraIntrinsics(-1, 900, 640, 360, 1280, 720)
    with pytest.raises(InvalidCalibration):
        RadialDistortion(float("nan"), 0.0)


def test_calibration_dict_roundtrip():
    c = KITTI_04_10
    assert Calibration.from_dict(c.to_dict()) == c
    bad = dict(c.to_dict(), fx="960")
    with pytest.raises(InvalidCalibration):
        Calibration.from_dict(bad)
    with pytest.raises(InvalidCalibration):
        Calibration.from_dict({"fx": 1.0})


def test_working_radius_covers_corners():
    k = KITTI_00_02.intrinsics
    corner = np.linalg.norm(k.to_normalized([0.0, 0.0]))
    assert k.working_radius >= corner * 1.05 - 1e-12


def test_pixel_roundtrip_through_calibration():
    c = KITTI_00_02
    uv = np.array([[10.0, 10.0], [700.0, 250.0], [1380.0, 500.0]])
    assert np.allclose(c.distort_pixels(c.undistort_pixels(uv)), uv, atol=1e-6)
