import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.sparse import lil_matrix
from scipy.sparse.csgraph import dijkstra

from conftest import poses, random_pose
from rootguide.planner import (
    ConfigError,
    InvalidEndpoint,
    OccupancyMap,
    PathPlanner,
    PlanarWaypoint,
    Unreachable,
    astar,
    build_sequence,
    goal_observation,
    interpolate_trajectory,
    lift_waypoints,
    line_of_sight,
    path_length,
    plan_path,
    segment_cells,
)
from rootguide.se3 import Pose, Rotation, angular_distance, rot6d_decode


def dijkstra_cost(grid: np.ndarray, start, goal) -> float:
    """Oracle: full-graph Dijkstra with the same 8-connected, no-corner-cut rule."""
    ny, nx = grid.shape
    idx = lambda x, y: y * nx + x  # noqa: E731
    g = lil_matrix((nx * ny, nx * ny))
    for y in range(ny):
        for x in range(nx):
            if grid[y, x]:
                continue
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    if dx == dy == 0:
                        continue
                    jx, jy = x + dx, y + dy
                    if not (0 <= jx < nx and 0 <= jy < ny) or grid[jy, jx]:
                        continue
                    if dx and dy and (grid[y, jx] or grid[jy, x]):
                        continue
                    g[idx(x, y), idx(jx, jy)] = math.hypot(dx, dy)
    d = dijkstra(g.tocsr(), indices=idx(*start))
    return float(d[idx(*goal)])


class TestPlanPath:
    def test_empty_straight(self):
        m = OccupancyMap.empty([-1.0, -1.0], [4.0, 2.0], 0.05)
        path = plan_path(m, PlanarWaypoint(0, 0, 0), PlanarWaypoint(2, 0, 0))
        assert len(path) == 2
        assert [(w.x, w.y) for w in path] == [(0, 0), (2, 0)]
        assert all(w.psi == 0 for w in path)

    def test_wall_detour(self):
        m = OccupancyMap.empty([-1.0, -2.0], [4.0, 4.0], 0.05)
        m.add_box([0.9, -1.0], [1.1, 1.0])
        start, goal = PlanarWaypoint(0, 0, 0), PlanarWaypoint(2, 0, 0)
        path = plan_path(m, start, goal, inflation_radius=0.1)
        assert path_length(path) > 2.0
        inflated = m.inflated(0.1)
        for a, b in zip(path, path[1:]):
            assert line_of_sight(inflated, (a.x, a.y), (b.x, b.y))
        for w in path:
            ix, iy = inflated.to_cell(w.x, w.y)
            assert not inflated.grid[iy, ix]
        assert path[-1].psi == goal.psi

    def test_tangent_yaw(self):
        m = OccupancyMap.empty([-1.0, -2.0], [4.0, 4.0], 0.05)
        m.add_box([0.9, -1.0], [1.1, 1.0])
        path = plan_path(m, PlanarWaypoint(0, 0, 0), PlanarWaypoint(2, 0, 1.0), 0.1)
        for a, b in zip(path, path[1:]):
            assert a.psi == pytest.approx(math.atan2(b.y - a.y, b.x - a.x))

    def test_random_maps_vs_dijkstra(self):
        rng = np.random.default_rng(7)
        done = 0
        while done < 20:
            m = OccupancyMap(np.zeros(2), 0.1, rng.random((24, 24)) < 0.25)
            free = np.argwhere(~m.grid)
            (sy, sx), (gy, gx) = free[rng.choice(len(free), 2, replace=False)]
            oracle = dijkstra_cost(m.grid, (sx, sy), (gx, gy))
            if not np.isfinite(oracle):
                with pytest.raises(Unreachable):
                    astar(m.grid, (sx, sy), (gx, gy))
                continue
            _, cost = astar(m.grid, (sx, sy), (gx, gy))
            assert cost == pytest.approx(oracle, abs=1e-9)
            start = PlanarWaypoint(*m.cell_center(sx, sy), 0.0)
            goal = PlanarWaypoint(*m.cell_center(gx, gy), 0.0)
            path = plan_path(m, start, goal)
            assert path_length(path) <= 1.01 * oracle * m.cell_size + 1e-9
            for a, b in zip(path, path[1:]):
                assert line_of_sight(m, (a.x, a.y), (b.x, b.y))
            done += 1

    def test_occupied_start(self):
        m = OccupancyMap.empty([0, 0], [1, 1], 0.1)
        m.add_box([0.0, 0.0], [0.3, 0.3])
        with pytest.raises(InvalidEndpoint):
            plan_path(m, PlanarWaypoint(0.15, 0.15, 0), PlanarWaypoint(0.8, 0.8, 0))

    def test_out_of_bounds_goal(self):
        m = OccupancyMap.empty([0, 0], [1, 1], 0.1)
        with pytest.raises(InvalidEndpoint):
            plan_path(m, PlanarWaypoint(0.5, 0.5, 0), PlanarWaypoint(5, 5, 0))

    def test_unreachable(self):
        m = OccupancyMap.empty([0, 0], [2, 1], 0.1)
        m.add_box([0.95, -1], [1.05, 2])
        with pytest.raises(Unreachable):
            plan_path(m, PlanarWaypoint(0.5, 0.5, 0), PlanarWaypoint(1.5, 0.5, 0))

    def test_session_reuse(self):
        m = OccupancyMap.empty([-1.0, -2.0], [4.0, 4.0], 0.05)
        m.add_box([0.9, -1.0], [1.1, 1.0])
        planner = PathPlanner(m, 0.1)
        a = planner.plan(PlanarWaypoint(0, 0, 0), PlanarWaypoint(2, 0, 0))
        b = planner.plan(PlanarWaypoint(0, 0, 0), PlanarWaypoint(2, 0, 0))
        assert a == b


def test_segment_cells_diagonal_corner():
    m = OccupancyMap.empty([0, 0], [1, 1], 0.1)
    cells = segment_cells(m, (0.05, 0.05), (0.25, 0.25))
    # passes through lattice corners: must claim the side cells too
    assert {(1, 0), (0, 1), (1, 1), (2, 2)} <= set(cells)


def test_pgm_round_trip(tmp_path):
    m = OccupancyMap.empty([-1.0, 0.5], [2.0, 1.0], 0.1)
    m.add_box([-0.5, 0.6], [0.0, 0.9])
    m.save(tmp_path / "map.pgm")
    assert (tmp_path / "map.pgm").read_bytes()[:2] == b"P5"
    back = OccupancyMap.load(tmp_path / "map.pgm")
    np.testing.assert_array_equal(back.grid, m.grid)
    np.testing.assert_allclose(back.origin, m.origin)
    assert back.cell_size == m.cell_size


class TestLift:
    def test_single(self):
        (p,) = lift_waypoints([PlanarWaypoint(0, 0, 0)], 0.75)
        np.testing.assert_array_equal(p.position, [0, 0, 0.75])
        assert angular_distance(p.rotation, Rotation.identity()) == 0.0

    def test_yaw90(self):
        (p,) = lift_waypoints([PlanarWaypoint(1, 2, math.pi / 2)], 0.75)
        np.testing.assert_array_equal(p.position, [1, 2, 0.75])
        assert angular_distance(p.rotation, Rotation.from_yaw(math.pi / 2)) < 1e-15

    def test_rejects_nonpositive_height(self):
        with pytest.raises(ConfigError):
            lift_waypoints([PlanarWaypoint(0, 0, 0)], 0.0)


class TestBuildSequence:
    def test_degenerate_cycle(self):
        p = Pose.from_xyz_yaw(0, 0, 0.75, 0)
        seq = build_sequence(p, p, p, [], 0.75)
        assert len(seq) == 7
        assert all(pose.position[2] == 0.75 for pose, _ in seq)

    def test_squat_pick(self):
        cur = Pose.from_xyz_yaw(0, 0, 0.75, 0)
        tgt = Pose.from_xyz_yaw(1, 0, 0.45, 0)
        end = Pose.from_xyz_yaw(3, 0, 0.45, 0)
        nav = lift_waypoints([PlanarWaypoint(2, 0, 0)], 0.75)
        seq = build_sequence(cur, tgt, end, nav, 0.75)
        assert seq[1][0].position[2] == 0.75
        assert seq[2][0].position[2] == 0.45
        assert [c for _, c in seq] == [False, False, True, True, True, True, True, False]

    def test_random_structure(self, rng):
        for _ in range(50):
            m = int(rng.integers(0, 8))
            nav = [random_pose(rng) for _ in range(m)]
            cur, tgt, end = (random_pose(rng) for _ in range(3))
            seq = build_sequence(cur, tgt, end, nav, 0.75)
            assert len(seq) == m + 7
            contacts = [c for _, c in seq]
            i_target, i_end = 2, m + 5
            assert seq[i_target][0] is tgt and seq[i_end][0] is end
            assert contacts == [i_target <= i <= i_end for i in range(m + 7)]


class TestInterpolate:
    def test_single_waypoint(self):
        p = Pose.from_xyz_yaw(1, 1, 0.75, 0.3)
        traj = interpolate_trajectory([(p, True)], 0.2, 0.6, 0.02)
        assert len(traj) == 1 and traj.frames[0].pose is p and traj.frames[0].contact

    def test_slow_profile_one_meter(self):
        a = Pose.identity()
        b = Pose(np.array([1.0, 0, 0]), Rotation.identity())
        traj = interpolate_trajectory([(a, False), (b, True)], 0.2, 0.6, 0.02)
        assert len(traj) == 251
        steps = np.linalg.norm(np.diff(traj.positions, axis=0), axis=1)
        assert steps.max() == pytest.approx(0.004, abs=1e-12)
        assert traj.frames[-1].pose is b
        assert not traj.frames[0].contact and all(f.contact for f in traj.frames[1:])

    def test_rotation_bound(self):
        a = Pose.identity()
        b = Pose(np.zeros(3), Rotation.from_yaw(1.2))
        traj = interpolate_trajectory([(a, False), (b, False)], 0.2, 0.6, 0.02)
        assert len(traj) == 101

    @pytest.mark.parametrize("v,w,dt", [(0, 1, 0.02), (1, 0, 0.02), (1, 1, 0), (-1, 1, 0.02)])
    def test_config_error(self, v, w, dt):
        with pytest.raises(ConfigError):
            interpolate_trajectory([(Pose.identity(), False)], v, w, dt)

    def test_random_velocity_bounds(self, rng):
        for _ in range(30):
            wps = [(random_pose(rng), bool(rng.integers(2))) for _ in range(int(rng.integers(2, 6)))]
            v, w, dt = rng.uniform(0.1, 1.0), rng.uniform(0.3, 2.0), 0.02
            traj = interpolate_trajectory(wps, v, w, dt)
            steps = np.linalg.norm(np.diff(traj.positions, axis=0), axis=1)
            assert np.all(steps <= v * dt + 1e-9)
            for f0, f1 in zip(traj.frames, traj.frames[1:]):
                assert angular_distance(f0.pose.rotation, f1.pose.rotation) <= w * dt + 1e-9
            # passes through every waypoint
            visited = [f.pose for f in traj.frames]
            for pose, _ in wps:
                assert any(q is pose for q in visited)

    def test_reparameterisation(self, rng):
        wps = [(random_pose(rng), False) for _ in range(4)]
        slow = interpolate_trajectory(wps, 0.2, 0.6, 0.02)
        fast = interpolate_trajectory(wps, 0.4, 1.2, 0.02)
        assert len(fast) - 1 >= (len(slow) - 1) / 2 - len(wps)
        assert len(fast) <= len(slow)
        # geometric path unchanged: every fast frame lies on the slow polyline segments
        for f in fast.frames:
            d = np.min(np.linalg.norm(slow.positions - f.pose.position, axis=1))
            assert d <= 0.2 * 0.02 + 1e-9


class TestGoalObservation:
    def test_identity(self, rng):
        p = random_pose(rng)
        g = goal_observation(p, (p, True))
        np.testing.assert_allclose(g.delta_p, 0, atol=1e-12)
        np.testing.assert_allclose(g.delta_r, [1, 0, 0, 1, 0, 0], atol=1e-12)
        assert g.contact is True
        assert g.as_vector().shape == (10,)

    @given(st.floats(-math.pi, math.pi))
    def test_ahead(self, yaw):
        cur = Pose.from_xyz_yaw(1, -2, 0.75, yaw)
        ref = Pose(cur.apply([1.0, 0, 0]), cur.rotation)
        g = goal_observation(cur, (ref, False))
        np.testing.assert_allclose(g.delta_p, [1, 0, 0], atol=1e-12)

    def test_reconstruction(self, rng):
        for _ in range(1000):
            cur, ref = random_pose(rng), random_pose(rng)
            g = goal_observation(cur, (ref, False))
            back = cur * Pose(g.delta_p, rot6d_decode(g.delta_r))
            assert np.linalg.norm(back.position - ref.position) < 1e-9
            assert angular_distance(back.rotation, ref.rotation) < 1e-9

    @given(poses, poses, poses)
    def test_global_transform_invariance(self, cur, ref, g):
        a = goal_observation(cur, (ref, True))
        b = goal_observation(g * cur, (g * ref, True))
        np.testing.assert_allclose(a.delta_p, b.delta_p, atol=1e-9)
        np.testing.assert_allclose(a.delta_r, b.delta_r, atol=1e-9)
