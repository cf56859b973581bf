import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from insertbench.errors import FormatError
from insertbench.geometry import (
    DEG,
    MM,
    BoardLayout,
    CrossSection,
    Pose6,
    Socket,
    apply_correction,
    board_from_dict,
    board_to_dict,
    contact_patch,
    contains_with_clearance,
    corrective_label,
    make_task,
    points_in_polygon,
    resolve_task,
    task_from_dict,
    task_to_dict,
    transform_to_eef,
    transform_to_world,
    wrap_angle,
)

angles = st.floats(-math.pi, math.pi, allow_nan=False)
coords = st.floats(-0.5, 0.5, allow_nan=False)
poses = st.builds(Pose6, coords, coords, coords, st.floats(-1.4, 1.4), st.floats(-1.4, 1.4), angles)


def monte_carlo_patch(task, offset, theta_z, n=1_000_000, seed=0):
    """Area and centroid of (peg minus hole) by uniform point sampling."""
    peg = task.peg.placed(offset, theta_z)
    lo, hi = peg.min(0), peg.max(0)
    rng = np.random.default_rng(seed)
    pts = lo + rng.random((n, 2)) * (hi - lo)
    inside = points_in_polygon(pts[:, 0], pts[:, 1], peg) & ~points_in_polygon(pts[:, 0], pts[:, 1], task.hole.vertices)
    area = inside.mean() * np.prod(hi - lo)
    return area, pts[inside].mean(0) - offset


class TestPose6:
    def test_angles_wrapped_into_half_open_interval(self):
        p = Pose6(0, 0, 0, 3 * math.pi, -math.pi, 7.0)
        assert p.theta_x == pytest.approx(math.pi)
        assert p.theta_y == pytest.approx(math.pi)
        assert -math.pi < p.theta_z <= math.pi

    def test_wrap_angle_maps_minus_pi_to_pi(self):
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)
        assert np.all(wrap_angle(np.array([-math.pi, 0.0, math.pi])) > -math.pi)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            Pose6(float("nan"))

    def test_mm_deg_round_trip(self):
        p = Pose6.from_mm_deg(1.5, -2.0, 3.0, 10, -20, 30)
        assert np.allclose(p.to_mm_deg(), [1.5, -2.0, 3.0, 10, -20, 30])

    @given(poses, poses)
    def test_compose_with_inverse_is_identity(self, a, b):
        ident = a.compose(a.inverse())
        assert np.allclose(ident.as_array(), 0, atol=1e-9)
        back = a.compose(b).compose(b.inverse())
        assert np.allclose(back.rotation(), a.rotation(), atol=1e-9)
        assert np.allclose(back.position, a.position, atol=1e-9)

    @given(poses)
    def test_quaternion_is_unit_and_matches_rotation(self, p):
        q = p.quaternion()
        assert np.linalg.norm(q) == pytest.approx(1.0)
        w, x, y, z = q
        r = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )
        assert np.allclose(r, p.rotation(), atol=1e-12)


class TestFrames:
    def test_eef_position_maps_to_origin(self):
        p = Pose6(0.1, -0.2, 0.3, 0.4, -0.5, 0.6)
        assert np.allclose(transform_to_eef(p.position, p), 0, atol=1e-15)

    def test_identity_pose_leaves_point(self):
        assert np.array_equal(transform_to_eef([1.0, 2.0, 3.0], Pose6()), [1.0, 2.0, 3.0])

    def test_round_trip_100_random_points(self, rng):
        for _ in range(100):
            pose = Pose6(*rng.uniform(-1, 1, 3), *rng.uniform(-math.pi, math.pi, 3))
            pt = rng.uniform(-1, 1, 3)
            assert np.allclose(transform_to_world(transform_to_eef(pt, pose), pose), pt, atol=1e-12, rtol=0)

    @given(poses, st.lists(st.tuples(coords, coords, coords), min_size=2, max_size=2))
    def test_transforms_are_rigid(self, pose, pts):
        a, b = (np.array(p) for p in pts)
        d0 = np.linalg.norm(a - b)
        d1 = np.linalg.norm(transform_to_eef(a, pose) - transform_to_eef(b, pose))
        assert abs(d0 - d1) < 1e-12


class TestCorrections:
    @given(poses, poses)
    def test_apply_correction_inverts_label(self, goal, pose):
        out = apply_correction(pose, corrective_label(goal, pose))
        assert abs(out.x - goal.x) < 1e-9 and abs(out.y - goal.y) < 1e-9
        assert np.allclose(wrap_angle(out.angles - goal.angles), 0, atol=1e-9)
        assert out.z == pose.z

    @given(poses, poses, poses)
    def test_label_invariant_under_world_transform(self, goal, pose, world):
        # dx, dy in the heading frame, so a planar world motion leaves labels unchanged
        w = Pose6(world.x, world.y, 0, 0, 0, world.theta_z)
        a = corrective_label(goal, pose)
        moved_goal = w.compose(Pose6(goal.x, goal.y, goal.z, 0, 0, goal.theta_z))
        moved_pose = w.compose(Pose6(pose.x, pose.y, pose.z, 0, 0, pose.theta_z))
        b = corrective_label(
            Pose6(moved_goal.x, moved_goal.y, goal.z, goal.theta_x, goal.theta_y, moved_goal.theta_z),
            Pose6(moved_pose.x, moved_pose.y, pose.z, pose.theta_x, pose.theta_y, moved_pose.theta_z),
        )
        assert np.allclose(a, b, atol=1e-9)


class TestContainment:
    def test_square_aligned_contained(self, square):
        assert contains_with_clearance(square, (0, 0), 0)

    def test_offset_beyond_clearance(self, square):
        assert not contains_with_clearance(square, (1.5 * MM, 0), 0)

    def test_rotation_45_does_not_fit(self, square):
        # oracle: the rotated square's half diagonal exceeds the hole half side
        assert 20 * MM * math.sqrt(2) / 2 > 11 * MM
        assert not contains_with_clearance(square, (0, 0), 45 * DEG)

    def test_boundary_contact_is_not_contained(self, square):
        assert not contains_with_clearance(square, (1.0 * MM, 0), 0)
        assert contains_with_clearance(square, (0.999 * MM, 0), 0)

    @given(st.floats(0.2, 3.0), st.floats(0.0, 1.0), st.floats(-1, 1), st.floats(-1, 1))
    def test_monotone_in_clearance(self, c_mm, extra, ux, uy):
        tight = make_task("square", 20 * MM, c_mm * MM)
        loose = make_task("square", 20 * MM, (c_mm + extra + 0.01) * MM)
        off = (ux * c_mm * MM, uy * c_mm * MM)
        if contains_with_clearance(tight, off, 0.0):
            assert contains_with_clearance(loose, off, 0.0)

    def test_threading_swaps_roles(self, suite):
        t = suite["thread_square_1mm"]
        assert contains_with_clearance(t, (0, 0), 0)
        assert not contains_with_clearance(t, (1.5 * MM, 0), 0)


class TestContactPatch:
    def test_aligned_patch_is_empty(self, square):
        area, c = contact_patch(square, (0, 0), 0)
        assert area == 0 and np.array_equal(c, [0, 0])

    def test_disjoint_patch_is_whole_peg(self, square):
        area, c = contact_patch(square, (30 * MM, 0), 0)
        assert area == pytest.approx(square.peg.area)
        assert np.allclose(c, square.peg.centroid, atol=1e-12)

    def test_two_mm_offset_matches_monte_carlo(self, square):
        area, c = contact_patch(square, (2 * MM, 0), 0)
        mc_area, mc_c = monte_carlo_patch(square, np.array([2 * MM, 0]), 0.0)
        assert c[0] > 0 and c[1] == pytest.approx(0, abs=1e-12)
        assert np.allclose(c, mc_c, atol=1e-4)
        assert area == pytest.approx(mc_area, rel=0.02)

    @given(st.floats(-15, 15), st.floats(-15, 15), st.floats(-math.pi, math.pi))
    def test_zero_area_iff_contained(self, x_mm, y_mm, th):
        from insertbench.geometry import standard_tasks

        t = standard_tasks()["square_1mm"]
        area, _ = contact_patch(t, (x_mm * MM, y_mm * MM), th)
        assert (area == 0) == contains_with_clearance(t, (x_mm * MM, y_mm * MM), th)

    @given(st.floats(-15, 15))
    def test_symmetric_offset_along_x_has_zero_y_centroid(self, x_mm):
        from insertbench.geometry import standard_tasks

        t = standard_tasks()["square_1mm"]
        _, c = contact_patch(t, (x_mm * MM, 0), 0)
        assert abs(c[1]) < 1e-12


class TestTaskAndBoard:
    def test_zero_clearance_rejected(self):
        with pytest.raises(FormatError):
            make_task("square", 20 * MM, 0.0)

    def test_self_intersecting_polygon_rejected(self):
        with pytest.raises(FormatError):
            CrossSection(np.array([[0, 0], [1, 1], [1, 0], [0, 1]], float))

    def test_task_json_round_trip(self, suite):
        for t in suite.values():
            back = task_from_dict(task_to_dict(t))
            assert np.allclose(back.peg.vertices, t.peg.vertices, atol=1e-15)
            assert np.allclose(back.hole.vertices, t.hole.vertices, atol=1e-15)
            assert back.clearance == pytest.approx(t.clearance)
            assert back.mode == t.mode

    def test_unknown_task_name(self):
        with pytest.raises(FormatError):
            resolve_task("hexagon_2mm")

    def test_overlapping_sockets_rejected(self, square):
        with pytest.raises(FormatError):
            BoardLayout(Pose6(), [Socket(square), Socket(square, Pose6(5 * MM, 0, 0))])

    def test_board_json_round_trip(self, suite):
        b = BoardLayout(
            Pose6.from_mm_deg(10, 20, 0, 0, 0, 30),
            [Socket(suite["square_1mm"], Pose6.from_mm_deg(-30)), Socket(suite["circle_1mm"], Pose6.from_mm_deg(30))],
        )
        back = board_from_dict(board_to_dict(b))
        assert np.allclose(back.board_pose.as_array(), b.board_pose.as_array())
        assert [s.task.task_id for s in back.sockets] == ["square_1mm", "circle_1mm"]

    def test_goal_world_pose_composes_board_and_socket(self, square):
        b = BoardLayout(Pose6.from_mm_deg(100, 0, 0, 0, 0, 90), [Socket(square, Pose6.from_mm_deg(10))])
        g = b.goal_world_pose(0)
        assert np.allclose(g.position, [0.1, 0.01, -5 * MM], atol=1e-12)
