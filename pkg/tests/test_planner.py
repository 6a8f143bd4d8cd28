import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conerace.errors import InsufficientTrackError, PlanningError
from conerace.planner import (
    build_reference,
    circumcircle_curvature,
    exploration_reference,
    pair_cones,
    pair_indices,
    reference_from_cones,
    self_intersects,
)
from conerace.track import TrackSpec, generate_loop, path_frame


def test_parallel_rows_give_centerline():
    xs = np.arange(0.0, 30.0, 5.0)
    blue = np.column_stack([xs, np.full_like(xs, 2.0)])
    red = np.column_stack([xs, np.full_like(xs, -2.0)])
    mid = pair_cones(blue, red)
    assert np.allclose(mid, np.column_stack([xs, np.zeros_like(xs)]))


def test_single_pair_midpoint():
    assert pair_indices([(1.0, 2.0)], [(1.0, -2.0)]) == [(0, 0)]
    with pytest.raises(InsufficientTrackError):
        pair_cones([(1.0, 2.0)], [(1.0, -2.0)])


def test_concentric_arcs_pair_onto_mid_circle():
    a = np.linspace(0, 2 * math.pi, 19, endpoint=False)
    u = np.column_stack([np.cos(a), np.sin(a)])
    mid = pair_cones(13.0 * u, 17.0 * u)
    assert np.abs(np.hypot(*mid.T) - 15.0).max() < 1e-6
    # order follows the travel direction: blue inside means counter-clockwise
    ang = np.unwrap(np.arctan2(mid[:, 1], mid[:, 0]))
    assert np.all(np.diff(ang) > 0)


def test_gate_drops_far_cones():
    blue = [(0.0, 2.0), (5.0, 2.0), (40.0, 2.0)]
    red = [(0.0, -2.0), (5.0, -2.0), (60.0, -2.0)]
    assert len(pair_cones(blue, red)) == 2


def test_too_few_pairs_raises():
    with pytest.raises(InsufficientTrackError):
        pair_cones([(0.0, 2.0), (5.0, 2.0)], [(0.0, -20.0), (5.0, -20.0)])


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=30)
def test_pairing_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    blue, red = rng.uniform(0, 30, (8, 2)), rng.uniform(0, 30, (9, 2))
    ab = {(i, j) for i, j in pair_indices(blue, red)}
    ba = {(i, j) for j, i in pair_indices(red, blue)}
    assert ab == ba


def test_collinear_midpoints_have_zero_curvature():
    mid = np.column_stack([np.linspace(0, 20, 9), np.zeros(9)])
    ref = build_reference(mid, closed=False)
    assert np.abs(ref.kappa).max() < 1e-12
    assert circumcircle_curvature((0, 0), (1, 1), (2, 2)) == 0.0


@pytest.mark.parametrize("R", [8.0, 15.0, 30.0])
def test_circle_curvature_within_two_percent(R):
    a = np.linspace(0, 2 * math.pi, 40, endpoint=False)
    ref = build_reference(R * np.column_stack([np.cos(a), np.sin(a)]), closed=True, ds=0.5)
    assert np.abs(ref.kappa * R - 1.0).max() < 0.02
    assert np.allclose(np.diff(ref.s), ref.s[1] - ref.s[0]) and ref.s[1] == pytest.approx(0.5, rel=0.02)


def test_circumcircle_oracle():
    # three points on a radius-4 circle traversed clockwise
    pts = [4 * np.array([math.cos(t), math.sin(t)]) for t in (1.0, 0.5, 0.0)]
    assert circumcircle_curvature(*pts) == pytest.approx(-0.25)


def test_round_trip_on_generating_midpoints():
    track = generate_loop(TrackSpec(shape="random", min_radius=8.0, n_segments=6), seed=4)
    mid = pair_cones(track.blue_cones, track.red_cones)
    ref = build_reference(mid, closed=True)
    for p in mid:
        e_y, _, _ = path_frame(ref, (p[0], p[1], 0.0))
        assert abs(e_y) < 0.05


def test_figure_eight_midpoints_raise():
    t = np.linspace(0, 2 * math.pi, 30, endpoint=False)
    eight = np.column_stack([10 * np.sin(t), 5 * np.sin(2 * t)])
    assert self_intersects(eight, closed=True)
    with pytest.raises(PlanningError):
        build_reference(eight, closed=True)


def test_build_reference_needs_three_points():
    with pytest.raises(InsufficientTrackError):
        build_reference([(0.0, 0.0), (1.0, 0.0)])


def test_corridor_from_cone_gap():
    track = generate_loop(TrackSpec(shape="circle", min_radius=15.0))
    ref = reference_from_cones(track.blue_cones, track.red_cones)
    assert np.all(ref.ey_max > 1.5) and np.all(ref.ey_max < 2.0)
    assert np.allclose(ref.ey_min, -ref.ey_max)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=15)
def test_reference_curvature_bounded_by_track(seed):
    spec = TrackSpec(shape="random", min_radius=10.0, n_segments=6)
    track = generate_loop(spec, seed=seed)
    try:
        ref = reference_from_cones(track.blue_cones, track.red_cones, start=track.start)
    except (PlanningError, InsufficientTrackError):
        return
    assert np.abs(ref.kappa).max() <= 1.1 / track.min_radius


def test_exploration_reference_starts_behind_vehicle():
    xs = np.arange(0.0, 30.0, 5.0)
    blue = np.column_stack([xs, np.full_like(xs, 2.0)])
    red = np.column_stack([xs, np.full_like(xs, -2.0)])
    ref = exploration_reference(blue, red, (2.0, 0.3, 0.0))
    assert not ref.closed
    assert ref.x[0] == pytest.approx(0.0) and ref.x[-1] == pytest.approx(25.0)
    # the tail sits behind the vehicle at its lateral offset
    assert ref.y[0] == pytest.approx(0.3)
    e_y, _, _ = path_frame(ref, (2.0, 0.3, 0.0))
    assert 0.0 < e_y < 0.3
    with pytest.raises(InsufficientTrackError):
        exploration_reference(blue, red, (24.0, 0.0, 0.0))
