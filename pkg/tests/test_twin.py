import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rootguide.se3 import Pose, Rotation, angular_distance
from rootguide.twin import (
    SettleTimeout,
    TwinParams,
    face_alignment_error,
    face_tilt,
    mechanical_energy,
    predict_resting_pose,
    resting_axis,
    simulate_drop,
)

HALF = (0.15, 0.1, 0.125)


def test_already_at_rest():
    init = Pose(np.array([0.3, -0.2, HALF[2]]), Rotation.from_yaw(0.7))
    pose, t = predict_resting_pose(init, (np.zeros(3), np.zeros(3)))
    np.testing.assert_allclose(pose.position, init.position, atol=1e-6)
    assert angular_distance(pose.rotation, init.rotation) < 1e-5
    assert t == pytest.approx(0.0, abs=1e-9)


def test_vertical_drop_no_bounce():
    init = Pose(np.array([0.1, 0.2, 0.5]), Rotation.from_yaw(0.4))
    pose, t = predict_resting_pose(init, (np.zeros(3), np.zeros(3)), TwinParams(restitution=0.0))
    assert abs(pose.position[2] - HALF[2]) < 5e-3
    assert np.linalg.norm(pose.position[:2] - init.position[:2]) < 1e-3
    assert abs(pose.rotation.yaw - 0.4) < 1e-5
    # free fall from 0.375 m above contact takes about 0.28 s
    assert 0.25 < t < 0.6


def test_energy_non_increasing_frictionless():
    p = TwinParams(restitution=0.0, friction=0.0)
    init = Pose(np.array([0.0, 0.0, 0.6]), Rotation.from_axis_angle([1, 1, 0], 0.3))
    res = simulate_drop(init, np.zeros(3), np.zeros(3), p, record_every=1)
    e = mechanical_energy(res.states, p)
    assert np.max(np.diff(e)) <= 1e-6
    assert res.settled


def test_energy_non_increasing_with_friction():
    p = TwinParams(restitution=0.0, friction=0.8)
    init = Pose(np.array([0.0, 0.0, 0.4]), Rotation.from_axis_angle([0, 1, 0], 0.2))
    res = simulate_drop(init, np.array([0.5, 0, 0]), np.zeros(3), p, record_every=1)
    assert np.max(np.diff(mechanical_energy(res.states, p))) <= 1e-6


def test_bounce_height_scales_with_restitution():
    init = Pose(np.array([0.0, 0.0, 0.625]), Rotation.identity())

    def apex(e):
        res = simulate_drop(init, np.zeros(3), np.zeros(3), TwinParams(restitution=e), record_every=1)
        z = res.states[:, 3]
        first_contact = np.argmax(z < HALF[2] + 1e-3)
        return z[first_contact:].max() - HALF[2]

    # drop height above contact is 0.5 m; rebound height is e^2 times that
    assert apex(0.0) < 1e-3
    assert apex(0.5) == pytest.approx(0.25 * 0.5, rel=0.05)


def test_free_flight_conserves_angular_momentum():
    init = Pose(np.array([0.0, 0.0, 50.0]), Rotation.from_axis_angle([1, 2, 3], 0.4))
    p = TwinParams(max_sim_time=0.5)
    res = simulate_drop(init, np.zeros(3), np.array([1.0, -2.0, 3.0]), p, record_every=10)
    L = res.states[:, 11:14]
    np.testing.assert_allclose(L, np.broadcast_to(L[0], L.shape), atol=1e-12)


def test_settle_timeout_carries_state():
    init = Pose(np.array([0.0, 0.0, 2.0]), Rotation.identity())
    with pytest.raises(SettleTimeout) as info:
        predict_resting_pose(init, (np.zeros(3), np.zeros(3)), TwinParams(max_sim_time=0.1))
    err = info.value
    assert err.last_pose.position[2] < 2.0
    assert err.last_velocity[0][2] < -0.9


def test_edge_balance_is_not_rest():
    # balanced exactly on an edge: slow at first, but must topple onto a face
    tilt = math.atan2(HALF[0], HALF[2])
    init = Pose(np.array([0.0, 0.0, math.hypot(HALF[0], HALF[2]) + 1e-4]), Rotation.from_axis_angle([0, 1, 0], tilt + 0.01))
    pose, _ = predict_resting_pose(init, (np.zeros(3), np.zeros(3)), TwinParams(restitution=0.0))
    assert math.degrees(face_tilt(pose.rotation)) < 1.0


def test_wall_plane_blocks_box():
    wall = ((-1.0, 0.0, 0.0), -0.5)  # free where x <= 0.5
    p = TwinParams(extra_planes=(wall,))
    init = Pose(np.array([0.0, 0.0, 0.4]), Rotation.identity())
    pose, _ = predict_resting_pose(init, (np.array([3.0, 0, 0]), np.zeros(3)), p)
    assert pose.position[0] <= 0.5 - HALF[0] + 0.01


def test_refined_keeps_settle_window():
    p = TwinParams().refined(10)
    assert p.sim_dt == pytest.approx(1e-4)
    assert p.settle_frames * p.sim_dt == pytest.approx(0.05)


@pytest.mark.parametrize(
    "kw",
    [dict(restitution=1.5), dict(friction=-0.1), dict(sim_dt=0.0), dict(box_half_extents=(0.1, 0.0, 0.1)), dict(impact_substeps=0)],
)
def test_param_validation(kw):
    with pytest.raises(ValueError):
        TwinParams(**kw)


def test_face_helpers():
    assert face_tilt(Rotation.from_yaw(1.0)) == pytest.approx(0.0, abs=1e-12)
    r = Rotation.from_axis_angle([1, 0, 0], math.pi / 2)
    assert resting_axis(r) == 1
    assert math.degrees(face_alignment_error(Rotation.identity(), r)) == pytest.approx(90.0)
    assert face_alignment_error(Rotation.identity(), Rotation.from_yaw(2.0)) == pytest.approx(0.0, abs=1e-7)


@settings(max_examples=25, deadline=None)
@given(
    h=st.floats(0.3, 1.2),
    rv=st.tuples(*[st.floats(-0.6, 0.6)] * 3),
    v=st.tuples(*[st.floats(-1, 1)] * 3),
    w=st.tuples(*[st.floats(-2, 2)] * 3),
    e=st.floats(0, 0.5),
    mu=st.floats(0.3, 1.2),
)
def test_rests_flat_on_a_face(h, rv, v, w, e, mu):
    init = Pose(np.array([0.0, 0.0, h]), Rotation.from_rotvec(rv))
    p = TwinParams(restitution=e, friction=mu)
    pose, _ = predict_resting_pose(init, (v, w), p)
    assert math.degrees(face_tilt(pose.rotation)) < 1.0
    assert abs(pose.position[2] - HALF[resting_axis(pose.rotation)]) < 5e-3
