import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conerace.errors import OffTrackError
from conerace.track import (
    CONE_RADIUS,
    Track,
    TrackSpec,
    benchmark_spec,
    curvature_at,
    generate_loop,
    path_frame,
    sample_primitives_at,
)


def test_circle_cone_geometry():
    tr = generate_loop(TrackSpec(shape="circle", min_radius=15.0, width=4.0, spacing=5.0))
    n = math.ceil(2 * math.pi * 15 / 5)
    assert len(tr.blue_cones) == len(tr.red_cones) == n
    center = np.array([0.0, 15.0])
    assert np.allclose(np.linalg.norm(tr.blue_cones - center, axis=1), 13.0)
    assert np.allclose(np.linalg.norm(tr.red_cones - center, axis=1), 17.0)


def test_generation_is_deterministic():
    spec = TrackSpec(n_segments=6, min_radius=8.0)
    a, b = generate_loop(spec, seed=4), generate_loop(spec, seed=4)
    assert np.array_equal(a.blue_cones, b.blue_cones) and np.array_equal(a.red_cones, b.red_cones)


def test_benchmark_loop_dimensions():
    tr = generate_loop(benchmark_spec())
    assert tr.width == 4.0 and tr.spacing == 5.0
    assert 190.0 < tr.length < 210.0


@given(st.integers(0, 2**31 - 1), st.integers(4, 8), st.floats(5.0, 12.0))
def test_random_loops_keep_cones_apart(seed, n, radius):
    spec = TrackSpec(n_segments=n, min_radius=radius)
    tr = generate_loop(spec, seed=seed)
    for cones in (tr.blue_cones, tr.red_cones):
        d = np.linalg.norm(cones[:, None] - cones[None], axis=-1)
        np.fill_diagonal(d, np.inf)
        assert d.min() >= 0.5 * spec.spacing
    # closure and total turning
    assert abs(sum(p.length * p.kappa for p in tr.primitives) - 2 * math.pi) < 1e-2


@given(st.integers(0, 1000))
def test_blue_left_red_right(seed):
    tr = generate_loop(TrackSpec(), seed=seed)
    path = tr.reference_path()
    for cone, sign in ((tr.blue_cones[3], 1), (tr.red_cones[3], -1)):
        _, ey, _, _ = path.project(*cone)
        assert np.sign(ey) == sign and abs(abs(ey) - 0.5 * tr.width) < 0.05


def test_spec_validation():
    with pytest.raises(ValueError):
        generate_loop(TrackSpec(min_radius=3.0))
    with pytest.raises(ValueError):
        generate_loop(TrackSpec(width=2.0))


_STADIUM = generate_loop(TrackSpec(shape="stadium", min_radius=10.0, straight_length=20.0))
_DENSE = _STADIUM.reference_path(ds=0.01)


@pytest.fixture(scope="module")
def stadium():
    return generate_loop(TrackSpec(shape="stadium", min_radius=10.0, straight_length=20.0))


def test_path_frame_on_path(stadium):
    path = stadium.reference_path()
    i = 37
    ey, epsi, s = path_frame(path, (path.x[i], path.y[i], path.heading[i]))
    assert abs(ey) < 1e-9 and abs(epsi) < 1e-9 and s == pytest.approx(path.s[i])


def test_path_frame_left_offset_on_straight(stadium):
    path = stadium.reference_path()
    ey, epsi, s = path_frame(path, (5.0, 0.3, 0.0))
    assert ey == pytest.approx(0.3) and abs(epsi) < 1e-12 and s == pytest.approx(5.0)


def test_path_frame_off_track(stadium):
    with pytest.raises(OffTrackError):
        path_frame(stadium.reference_path(), (5.0, 40.0, 0.0))


def test_projection_near_junction_matches_brute_force(stadium):
    path = stadium.reference_path()
    dense = sample_primitives_at(stadium.primitives, stadium.start, np.linspace(0, stadium.length, 10**4, endpoint=False))
    rng = np.random.default_rng(0)
    for _ in range(20):
        # around the first straight-to-arc junction at s = 20
        p = np.array([20.0, 0.0]) + rng.uniform(-1.5, 1.5, 2)
        ey, _, s = path_frame(path, (p[0], p[1], 0.0))
        d = np.hypot(dense[:, 0] - p[0], dense[:, 1] - p[1])
        assert abs(abs(ey) - d.min()) < 1e-3


@given(st.floats(0.0, 1.0), st.floats(-1.5, 1.5), st.floats(-0.5, 0.5))
def test_path_frame_round_trip(frac, ey, epsi):
    # polyline projection shifts s by about ey * kappa * ds / 2 on arcs
    tr = _STADIUM
    path = _DENSE
    s = frac * tr.length * 0.999
    x, y, h, _ = sample_primitives_at(tr.primitives, tr.start, [s])[0]
    pose = (x - ey * math.sin(h), y + ey * math.cos(h), h + epsi)
    e, ep, s_hat = path_frame(path, pose)
    assert abs(e - ey) < 1e-3 and abs(ep - epsi) < 1e-3
    L = path.length
    assert abs((s_hat - s + L / 2) % L - L / 2) < 1e-3


def test_curvature_values(stadium):
    path = stadium.reference_path()
    assert curvature_at(path, 10.0) == 0.0
    assert curvature_at(path, 20.0 + 0.5 * math.pi * 10.0) == pytest.approx(0.1)
    mid = curvature_at(path, 20.0 + 0.5 * (path.s[1] - path.s[0]) * 0.999)
    assert 0.0 <= mid <= 0.1


def test_curvature_transition_matches_heading_difference(stadium):
    path = stadium.reference_path(ds=0.01)
    s = np.linspace(19.0, 21.0, 201)
    h = path.heading_at(s)
    fd = np.gradient(h, s)
    assert np.all(fd > -1e-6) and np.all(fd < 0.1 + 1e-3)


def test_curvature_integral_is_full_turn(stadium):
    path = stadium.reference_path()
    ds = np.diff(np.append(path.s, path.length + path.s[0]))
    assert abs((path.kappa * ds).sum() - 2 * math.pi) < 1e-2


def test_reference_path_invariants(stadium):
    path = stadium.reference_path()
    assert np.all(np.diff(path.s) > 0)
    assert np.all(path.ey_min < 0) and np.all(path.ey_max > 0)
    assert np.allclose(path.ey_max, 0.5 * stadium.width - CONE_RADIUS)


def test_open_path_curvature_range_error():
    from conerace.planner import build_reference

    pts = np.column_stack([np.linspace(0, 10, 11), np.zeros(11)])
    path = build_reference(pts, closed=False)
    with pytest.raises(ValueError):
        curvature_at(path, 50.0)


def test_csv_round_trip(tmp_path, stadium):
    stadium.to_csv(tmp_path / "t.csv")
    back = Track.from_csv(tmp_path / "t.csv")
    assert np.array_equal(back.blue_cones, stadium.blue_cones)
    assert np.array_equal(back.red_cones, stadium.red_cones)
    assert back.width == pytest.approx(stadium.width)
