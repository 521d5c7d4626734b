import numpy as np
import pytest

from terrainmotion import losses, rotmath
from terrainmotion.motion import (
    BodyShape,
    MotionClip,
    Skeleton,
    clip_joint_positions_fk,
    clip_surface_points,
    transform_clip,
)
from terrainmotion.terrain import TerrainGrid, gen_random_boxes
from terrainmotion.toydata import make_hover_clip, make_standing_clip, make_walk_clip


def point_skeleton():
    """A single near-point body at the root; its one sample sits within 1e-9
    of the root origin."""
    dot = BodyShape("capsule", {"p0": [0, 0, 0], "p1": [0, 0, 0], "radius": 1e-9}, 1)
    return Skeleton(
        name="point",
        joint_names=[],
        parent=np.array([], dtype=int),
        offset=np.zeros((0, 3)),
        bodies=[],
        root_body=dot,
        key_bodies=[],
        foot_joints=[],
    )


def point_clip(positions):
    positions = np.atleast_2d(positions)
    n = len(positions)
    return MotionClip(
        fps=30.0,
        root_pos=positions,
        root_rot=np.zeros((n, 3)),
        joint_rot=np.zeros((n, 0, 3)),
        joint_pos=np.zeros((n, 0, 3)),
        contacts=np.zeros((n, 0)),
    )


def random_clip(skeleton, rng, n=6, z=1.2):
    j = skeleton.num_joints
    clip = MotionClip(
        fps=30.0,
        root_pos=np.column_stack(
            [
                rng.uniform(1.5, 4.5, n),
                rng.uniform(1.5, 4.5, n),
                rng.uniform(z - 0.2, z + 0.2, n),
            ]
        ),
        root_rot=rng.normal(scale=0.3, size=(n, 3)),
        joint_rot=rng.normal(scale=0.3, size=(n, j, 3)),
        joint_pos=np.zeros((n, j, 3)),
        contacts=(rng.uniform(size=(n, j)) > 0.7).astype(float),
    )
    clip.joint_pos = clip_joint_positions_fk(skeleton, clip)
    return clip


def brute_force_penetration(clip, skeleton, grid):
    """Oracle: full scan over every cell for every surface point."""
    pts, _ = clip_surface_points(skeleton, clip)
    pts = pts.reshape(-1, 3)
    total = 0.0
    n, m = grid.shape
    for p in pts:
        best = np.inf
        for i in range(n):
            for j in range(m):
                cx = grid.x0 + i * grid.dx
                cy = grid.y0 + j * grid.dy
                qx = abs(p[0] - cx) - grid.dx / 2
                qy = abs(p[1] - cy) - grid.dy / 2
                qz = p[2] - grid.heights[i, j]
                outside = np.sqrt(
                    max(qx, 0) ** 2 + max(qy, 0) ** 2 + max(qz, 0) ** 2
                )
                best = min(best, outside + min(max(qx, qy, qz), 0.0))
        total += -min(best, 0.0)
    return total


class TestPenetration:
    def test_hovering_clip_zero(self, skeleton, flat_terrain):
        clip = make_hover_clip(skeleton, num_frames=4, height=2.0)
        assert losses.penetration_loss(clip, skeleton, flat_terrain) == 0.0

    def test_single_point_depth(self):
        # coarse cells so the depth is smaller than the half cell width and
        # the union-of-boxes distance equals the depth below the top
        coarse = TerrainGrid(0.0, 0.0, 1.0, 1.0, np.zeros((8, 8)))
        sk = point_skeleton()
        clip = point_clip([[3.1, 2.9, -0.3]])
        got = losses.penetration_loss(clip, sk, coarse)
        assert np.isclose(got, 0.3, atol=1e-8)

    def test_matches_brute_force(self, rng):
        grid = gen_random_boxes(grid=(8, 8), num_boxes=5, seed=10)
        sk = point_skeleton()
        clip = point_clip(rng.uniform([0, 0, -1.0], [3.2, 3.2, 1.0], size=(40, 3)))
        got = losses.penetration_loss(clip, sk, grid)
        want = brute_force_penetration(clip, sk, grid)
        assert np.isclose(got, want, atol=1e-9)

    def test_matches_brute_force_full_body(self, skeleton, rng):
        grid = gen_random_boxes(grid=(8, 8), num_boxes=5, seed=11)
        clip = random_clip(skeleton, rng, n=2, z=0.6)
        got = losses.penetration_loss(clip, skeleton, grid)
        want = brute_force_penetration(clip, skeleton, grid)
        assert np.isclose(got, want, atol=1e-9)

    def test_non_negative(self, skeleton, rng):
        grid = gen_random_boxes(grid=(8, 8), num_boxes=6, seed=1)
        for _ in range(5):
            clip = random_clip(skeleton, rng, n=3, z=0.8)
            assert losses.penetration_loss(clip, skeleton, grid) >= 0.0


class TestContact:
    def test_zero_labels(self, skeleton, flat_terrain):
        clip = make_hover_clip(skeleton, num_frames=3, height=1.0)
        assert losses.contact_loss(clip, skeleton, flat_terrain) == 0.0

    def test_foot_resting_exactly(self, skeleton, flat_terrain):
        clip = make_standing_clip(skeleton, num_frames=3)
        assert losses.contact_loss(clip, skeleton, flat_terrain) < 1e-12

    def test_hovering_foot_distance(self, skeleton, flat_terrain):
        clip = make_standing_clip(skeleton, num_frames=4)
        clip.root_pos[:, 2] += 0.1
        clip.joint_pos[:, :, 2] += 0.1
        got = losses.contact_loss(clip, skeleton, flat_terrain)
        # two feet in contact, each hovering 0.1, over 4 frames
        assert np.isclose(got, 0.8, atol=1e-9)

    def test_binarization_threshold(self, skeleton, flat_terrain):
        clip = make_standing_clip(skeleton, num_frames=2)
        clip.root_pos[:, 2] += 0.1
        clip.joint_pos[:, :, 2] += 0.1
        clip.contacts[:] = 0.49  # below threshold: no active contacts
        assert losses.contact_loss(clip, skeleton, flat_terrain) == 0.0


class TestJerk:
    def test_constant_velocity_zero(self, skeleton):
        clip = make_hover_clip(skeleton, num_frames=10)
        clip.root_pos[:, 0] = np.arange(10) * 0.1
        clip.joint_pos = clip_joint_positions_fk(skeleton, clip)
        assert losses.jerk_loss(clip, jerk_max=0.0) < 1e-9

    def test_cubic_below_threshold(self):
        fps = 30.0
        n = 12
        t = np.arange(n) / fps
        pos = np.zeros((n, 1, 3))
        pos[:, 0, 0] = t**3  # jerk = 6
        clip = MotionClip(
            fps=fps,
            root_pos=np.zeros((n, 3)),
            root_rot=np.zeros((n, 3)),
            joint_rot=np.zeros((n, 1, 3)),
            joint_pos=pos,
            contacts=np.zeros((n, 1)),
        )
        assert losses.jerk_loss(clip, jerk_max=1000.0) == 0.0
        assert np.allclose(losses.joint_jerk(clip), 6.0, atol=1e-6)

    def test_impulse_excess_exact(self):
        # integrate a prescribed jerk profile so the third difference
        # recovers it exactly, with a single exceedance of 500
        fps = 30.0
        n = 16
        jerk_max = 1000.0
        profile = np.zeros((n - 3, 1, 3))
        profile[5, 0, 0] = jerk_max + 500.0
        pos = np.zeros((n, 1, 3))
        for f in range(n - 3):
            pos[f + 3] = profile[f] / fps**3 + 3 * pos[f + 2] - 3 * pos[f + 1] + pos[f]
        clip = MotionClip(
            fps=fps,
            root_pos=np.zeros((n, 3)),
            root_rot=np.zeros((n, 3)),
            joint_rot=np.zeros((n, 1, 3)),
            joint_pos=pos,
            contacts=np.zeros((n, 1)),
        )
        assert np.isclose(losses.jerk_loss(clip, jerk_max=jerk_max), 500.0, atol=1e-6)

    def test_too_short(self, skeleton):
        clip = make_hover_clip(skeleton, num_frames=3)
        with pytest.raises(ValueError):
            losses.jerk_loss(clip, jerk_max=0.0)

    def test_high_jerk_fraction(self):
        fps = 30.0
        n = 23
        profile = np.zeros((n - 3, 1, 3))
        profile[4, 0, 0] = 20000.0
        pos = np.zeros((n, 1, 3))
        for f in range(n - 3):
            pos[f + 3] = profile[f] / fps**3 + 3 * pos[f + 2] - 3 * pos[f + 1] + pos[f]
        clip = MotionClip(
            fps=fps,
            root_pos=np.zeros((n, 3)),
            root_rot=np.zeros((n, 3)),
            joint_rot=np.zeros((n, 1, 3)),
            joint_pos=pos,
            contacts=np.zeros((n, 1)),
        )
        assert np.isclose(losses.high_jerk_frame_fraction(clip, 11666.0), 1.0 / 20.0)


class TestReconstruction:
    def test_identical_zero(self, skeleton, rng):
        clip = random_clip(skeleton, rng)
        assert losses.reconstruction_loss(clip, clip) < 1e-20

    def test_single_joint_rotation_offset(self, skeleton, rng):
        clip = random_clip(skeleton, rng)
        pred = clip.copy()
        theta = 0.3
        q = rotmath.quat_from_expmap(pred.joint_rot[2, 5])
        dq = rotmath.quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), theta)
        pred.joint_rot[2, 5] = rotmath.expmap_from_quat(rotmath.quat_mul(dq, q))
        got = losses.reconstruction_loss(pred, clip)
        assert np.isclose(got, theta**2, atol=1e-9)

    def test_uniform_position_offset(self, skeleton, rng):
        clip = random_clip(skeleton, rng)
        pred = clip.copy()
        j = clip.num_joints
        pred.root_pos = pred.root_pos.copy()
        pred.joint_pos = pred.joint_pos.copy()
        pred.root_pos[0] += [0.1, 0.0, 0.0]
        pred.joint_pos[0] += [0.1, 0.0, 0.0]
        got = losses.reconstruction_loss(pred, clip)
        assert np.isclose(got, (j + 1) * 0.01, atol=1e-9)

    def test_contact_error(self, skeleton, rng):
        clip = random_clip(skeleton, rng)
        pred = clip.copy()
        pred.contacts = pred.contacts.copy()
        pred.contacts[1, 3] += 0.25
        assert np.isclose(losses.reconstruction_loss(pred, clip), 0.0625, atol=1e-12)

    def test_symmetric(self, skeleton, rng):
        a = random_clip(skeleton, rng)
        b = random_clip(skeleton, rng)
        assert np.isclose(
            losses.reconstruction_loss(a, b), losses.reconstruction_loss(b, a), atol=1e-9
        )

    def test_shape_mismatch(self, skeleton, rng):
        a = random_clip(skeleton, rng, n=4)
        b = random_clip(skeleton, rng, n=5)
        with pytest.raises(ValueError):
            losses.reconstruction_loss(a, b)


class TestVelocity:
    def test_identical_zero(self, skeleton, rng):
        clip = random_clip(skeleton, rng)
        assert losses.velocity_loss(clip, clip) == 0.0

    def test_constant_offset_invariant(self, skeleton, rng):
        clip = random_clip(skeleton, rng)
        pred = clip.copy()
        pred.root_pos = pred.root_pos + np.array([0.4, -0.2, 0.1])
        pred.joint_pos = pred.joint_pos + np.array([0.4, -0.2, 0.1])
        assert np.isclose(losses.velocity_loss(pred, clip), 0.0, atol=1e-18)

    def test_root_drift(self, skeleton):
        n = 10
        target = make_hover_clip(skeleton, num_frames=n)
        pred = target.copy()
        drift = 0.01 * np.arange(n)
        pred.root_pos = pred.root_pos.copy()
        pred.root_pos[:, 0] += drift
        got = losses.velocity_loss(pred, target, fps=30.0)
        assert np.isclose(got, (n - 1) * 0.09, atol=1e-9)

    def test_too_short(self, skeleton):
        clip = make_hover_clip(skeleton, num_frames=1)
        with pytest.raises(ValueError):
            losses.velocity_loss(clip, clip)


class TestJointConsistency:
    def test_fk_consistent_zero(self, skeleton, rng):
        clip = random_clip(skeleton, rng)
        assert losses.joint_consistency_loss(clip, skeleton) < 1e-20

    def test_single_displacement(self, skeleton, rng):
        clip = random_clip(skeleton, rng)
        clip.joint_pos = clip.joint_pos.copy()
        clip.joint_pos[3, 7, 2] += 0.2
        assert np.isclose(losses.joint_consistency_loss(clip, skeleton), 0.04, atol=1e-9)

    def test_rigid_invariance(self, skeleton, rng):
        clip = random_clip(skeleton, rng)
        frame = rotmath.LocalFrame(origin=np.array([2.0, -1.0, 0.3]), heading=1.1)
        moved = transform_clip(clip, frame, to_local=True)
        a = losses.joint_consistency_loss(clip, skeleton)
        b = losses.joint_consistency_loss(moved, skeleton)
        assert np.isclose(a, b, atol=1e-9)


class TestSelection:
    def test_artifact_free_complete_zero(self, skeleton, flat_terrain):
        clip = make_walk_clip(skeleton, num_frames=40)
        score = losses.selection_score(clip, skeleton, flat_terrain, reached_end=True)
        assert score < 1e-9

    def test_incomplete_penalty_exact(self, skeleton, flat_terrain, rng):
        clip = random_clip(skeleton, rng)
        done = losses.selection_score(clip, skeleton, flat_terrain, reached_end=True)
        failed = losses.selection_score(clip, skeleton, flat_terrain, reached_end=False)
        assert failed - done == 1000.0

    def test_batch_argmin_matches_exhaustive(self, skeleton, flat_terrain, rng):
        clips = [random_clip(skeleton, rng, n=3, z=1.0 + 0.2 * i) for i in range(6)]
        flags = [bool(i % 2) for i in range(6)]
        scores = [
            losses.selection_score(c, skeleton, flat_terrain, f)
            for c, f in zip(clips, flags)
        ]
        assert int(np.argmin(scores)) == min(
            range(6), key=lambda i: scores[i]
        )


class TestRigidInvariance:
    def test_penetration_contact_under_world_rotation(self, skeleton, rng):
        # rotate both the clip and the (square, origin-centered) terrain by
        # 90 degrees: grid stays axis-aligned, losses must not change
        n = 12
        half = (n - 1) / 2 * 0.4
        heights = rng.uniform(-0.5, 0.5, (n, n))
        grid = TerrainGrid(-half, -half, 0.4, 0.4, heights)
        rot_grid = TerrainGrid(-half, -half, 0.4, 0.4, np.rot90(heights, k=1))

        clip = random_clip(skeleton, rng, n=3, z=0.4)
        clip.root_pos[:, :2] -= 2.4  # keep inside the rotated grid
        clip.joint_pos = clip_joint_positions_fk(skeleton, clip)
        frame = rotmath.LocalFrame(origin=np.zeros(3), heading=-np.pi / 2)
        rot_clip = transform_clip(clip, frame, to_local=True)

        a_pen = losses.penetration_loss(clip, skeleton, grid)
        b_pen = losses.penetration_loss(rot_clip, skeleton, rot_grid)
        assert np.isclose(a_pen, b_pen, atol=1e-9)
        a_con = losses.contact_loss(clip, skeleton, grid)
        b_con = losses.contact_loss(rot_clip, skeleton, rot_grid)
        assert np.isclose(a_con, b_con, atol=1e-9)
        assert a_pen > 0  # the fixture actually exercises the losses
