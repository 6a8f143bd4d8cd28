import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from conerace import dynamics as dyn
from conerace.errors import DegenerateConfigurationError, ProjectionError
from conerace.sensors import (
    KINDS,
    CameraIntrinsics,
    Homography,
    SensorSampler,
    SensorSchedule,
    apply_homography,
    body_to_pixel,
    camera_model,
    estimate_homography,
    reference_homography,
    sample_sensors,
    world_to_body,
)
from conerace.track import TrackSpec, generate_loop

TRACK = generate_loop(TrackSpec(shape="circle", min_radius=15.0))
STATE = np.array([0.0, 0.0, 0.0, 5.0, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0])


def test_schedule_validation():
    with pytest.raises(ValueError):
        SensorSchedule(rates={"gnss_pos": 0.0})
    with pytest.raises(ValueError):
        SensorSchedule(dropouts={"lidar_odom": [(1.0, 3.0), (2.0, 4.0)]})
    with pytest.raises(ValueError):
        SensorSchedule(dropouts={"sonar": [(1.0, 2.0)]})


def test_default_rates_and_tick_schedule():
    sch = SensorSchedule()
    assert sch.rates["ins"] == 100.0 and sch.rates["gnss_pos"] == 10.0
    kinds_at = lambda t: {m.kind for m in sample_sensors(STATE, TRACK, sch, t, np.random.default_rng(0))}
    assert kinds_at(0.1) == set(KINDS)
    assert kinds_at(0.13) == {"ins", "wheel_speed"}


def test_dropout_omits_sensor():
    sch = SensorSchedule(dropouts={"lidar_odom": [(1.0, 2.0)]})
    kinds = {m.kind for m in sample_sensors(STATE, TRACK, sch, 1.5, np.random.default_rng(0))}
    assert "lidar_odom" not in kinds and "gnss_pos" in kinds


def test_zero_noise_gnss_is_truth():
    sch = SensorSchedule(gnss_sigma=0.0)
    s = STATE.copy()
    s[:2] = (3.25, -1.5)
    m = next(m for m in sample_sensors(s, TRACK, sch, 0.0, np.random.default_rng(1)) if m.kind == "gnss_pos")
    assert np.array_equal(m.payload, s[:2])


def test_empirical_noise_matches_configured_sigma():
    sch = SensorSchedule(rates={"gnss_pos": 10.0, "wheel_speed": 10.0, "lidar_odom": 10.0})
    sampler = SensorSampler(sch, TRACK, rng=np.random.default_rng(7))
    gnss, wheel, yaw = [], [], []
    for k in range(10**4):
        for m in sampler.sample(STATE, k * 0.1):
            if m.kind == "gnss_pos":
                gnss.append(m.payload - STATE[:2])
            elif m.kind == "wheel_speed":
                wheel.append(m.payload[0] - STATE[dyn.IU])
            elif m.kind == "lidar_odom":
                yaw.append(m.payload[2] - STATE[dyn.IPSI])
    assert np.all(np.abs(np.std(gnss, axis=0) / sch.gnss_sigma - 1) < 0.05)
    assert abs(np.std(wheel) / sch.wheel_sigma - 1) < 0.05
    assert abs(np.std(yaw) / sch.lidar_yaw_sigma - 1) < 0.05


def test_measurement_covariances_are_spd():
    sch = SensorSchedule()
    for kind in KINDS:
        c = sch.covariance(kind)
        assert np.allclose(c, c.T) and np.linalg.eigvalsh(c).min() > 0


def test_cone_scan_points_per_cone_and_range():
    sampler = SensorSampler(SensorSchedule(), TRACK, rng=np.random.default_rng(3))
    vis, _ = sampler.visible_cones(STATE)
    scan = next(m for m in sampler.sample(STATE, 0.0) if m.kind == "cone_scan")
    assert 5 * len(vis) <= len(scan.payload) <= 20 * len(vis)
    assert np.all(np.hypot(*vis.T) <= 10.0)


def test_streams_are_reproducible():
    a = SensorSampler(SensorSchedule(), TRACK, rng=np.random.default_rng(9))
    b = SensorSampler(SensorSchedule(), TRACK, rng=np.random.default_rng(9))
    for k in range(20):
        for ma, mb in zip(a.sample(STATE, k * 0.01), b.sample(STATE, k * 0.01)):
            assert ma.kind == mb.kind and np.array_equal(ma.payload, mb.payload)


def test_sampling_time_must_not_decrease():
    s = SensorSampler(SensorSchedule(), TRACK)
    s.sample(STATE, 1.0)
    with pytest.raises(ValueError):
        s.sample(STATE, 0.5)


SQUARE = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]


def test_homography_unit_square_identity():
    H = estimate_homography(list(zip(SQUARE, SQUARE)))
    assert np.allclose(H.matrix, np.eye(3), atol=1e-12)


def test_homography_scaled_square():
    H = estimate_homography([(p, (2 * p[0], 2 * p[1])) for p in SQUARE])
    assert np.allclose(H.matrix, np.diag([2.0, 2.0, 1.0]), atol=1e-12)


def test_apply_identity_and_translation():
    assert apply_homography(Homography(np.eye(3)), (3.0, -4.0)) == (3.0, -4.0)
    T = np.eye(3)
    T[2, :2] = (1.5, -2.0)  # row-vector convention: [u v 1] @ H
    assert apply_homography(Homography(T), (3.0, -4.0)) == pytest.approx((4.5, -6.0))


def test_apply_at_horizon_raises():
    M = np.eye(3)
    M[0, 2] = 1.0  # w' = u + 1
    with pytest.raises(ProjectionError):
        apply_homography(Homography(M), (-1.0, 0.0))


def test_degenerate_pairs_raise():
    pts = [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (0.0, 1.0)]
    with pytest.raises(DegenerateConfigurationError):
        estimate_homography(list(zip(pts, SQUARE)))


quads = st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=4, max_size=4)


def _well_spread(pts):
    for i in range(4):
        p, q, r = [pts[j] for j in range(4) if j != i]
        area = abs((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))
        if area < 50.0:
            return False
    return True


def _oracle_h(pairs):
    # DLT with a 9-vector null space, independent of the 8x8 a33 = 1 solve
    rows = []
    for (u, v), (x, y) in pairs:
        rows.append([u, v, 1, 0, 0, 0, -x * u, -x * v, -x])
        rows.append([0, 0, 0, u, v, 1, -y * u, -y * v, -y])
    h = np.linalg.svd(np.array(rows))[2][-1]
    return h.reshape(3, 3)


@given(quads, quads)
def test_homography_round_trip_random_quads(src, dst):
    assume(_well_spread(src) and _well_spread(dst))
    pairs = list(zip(src, dst))
    try:
        H = estimate_homography(pairs)
    except DegenerateConfigurationError:
        assume(False)
    for uv, xy in pairs:
        assert np.allclose(apply_homography(H, uv), xy, atol=1e-9 * max(1.0, np.abs(xy).max()))
    G = _oracle_h(pairs)
    for uv, _ in pairs:
        w = G @ np.array([uv[0], uv[1], 1.0])
        assert np.allclose(apply_homography(H, uv), w[:2] / w[2], atol=1e-7)


@given(st.floats(-1e3, 1e3).filter(lambda c: abs(c) > 1e-3), st.floats(0, 1280), st.floats(400, 720))
def test_homography_scale_invariance(c, u, v):
    H = reference_homography(CameraIntrinsics())
    scaled = Homography(c * H.matrix)
    assert np.allclose(apply_homography(scaled, (u, v)), apply_homography(H, (u, v)), rtol=1e-12, atol=1e-12)


def test_camera_axis_cone_hits_center_column():
    cam = CameraIntrinsics()
    u, _ = body_to_pixel(8.0, 0.0, cam)
    assert u == pytest.approx(cam.cx)


@given(st.floats(2.0, 12.0), st.floats(0.1, 5.0))
def test_camera_mirror_symmetry(x, y):
    cam = CameraIntrinsics()
    a, b = body_to_pixel(x, y, cam), body_to_pixel(x, -y, cam)
    assume(a is not None and b is not None)
    assert a[0] - cam.cx == pytest.approx(cam.cx - b[0]) and a[1] == pytest.approx(b[1])


def test_camera_behind_is_invisible():
    assert body_to_pixel(-3.0, 0.0, CameraIntrinsics()) is None


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-3.1, 3.1), st.floats(2.0, 14.0), st.floats(-0.7, 0.7))
def test_camera_round_trip_through_reference_homography(x, y, psi, rho, bearing):
    cam = CameraIntrinsics()
    H = reference_homography(cam)
    pose = (x, y, psi)
    xb, yb = rho * math.cos(bearing), rho * math.sin(bearing)
    cone = (x + math.cos(psi) * xb - math.sin(psi) * yb, y + math.sin(psi) * xb + math.cos(psi) * yb)
    px = camera_model(pose, cone, cam)
    assume(px is not None)
    assert np.allclose(apply_homography(H, px), world_to_body(pose, *cone), atol=1e-6)
