import math

import numpy as np
import pytest
from scipy import stats as scistats

from terrainmotion import tracking
from terrainmotion.motion import forward_kinematics


def perfect_state(skeleton, rng=None, contacts=1.0):
    j = skeleton.num_joints
    if rng is None:
        joint_rot = np.zeros((j, 3))
        root_rot = np.zeros(3)
    else:
        joint_rot = rng.normal(scale=0.4, size=(j, 3))
        root_rot = rng.normal(scale=0.4, size=3)
    root_pos = np.array([0.5, -0.2, 0.9])
    key = forward_kinematics(skeleton, root_pos, root_rot, joint_rot)[
        list(skeleton.key_bodies)
    ]
    return tracking.CharacterState(
        root_pos=root_pos,
        root_rot=root_rot,
        root_vel=np.array([1.0, 0.0, 0.0]),
        root_angvel=np.array([0.0, 0.2, 0.0]),
        joint_rot=joint_rot,
        joint_vel=np.zeros((j, 3)),
        key_pos=key,
        contacts=np.full(j, contacts),
    )


class TestRewardTotal:
    def test_perfect_tracking_total_two(self, skeleton, rng):
        ref = perfect_state(skeleton, rng)
        char = perfect_state(skeleton, np.random.default_rng(1234))
        out = tracking.reward_total(char, ref)
        assert out.pose == 1.0
        assert out.pose_velocity == 1.0
        assert out.root == 1.0
        assert out.root_velocity == 1.0
        assert out.key == 1.0
        assert out.contact == 1.0
        assert out.total == 2.0

    def test_contact_all_mismatch_is_minus_one(self, skeleton):
        ref = perfect_state(skeleton, contacts=0.0)
        char = perfect_state(skeleton, contacts=1.0)
        out = tracking.reward_total(char, ref)
        assert out.contact == -1.0

    def test_contact_missing_contact_scores_zero(self, skeleton):
        ref = perfect_state(skeleton, contacts=1.0)
        char = perfect_state(skeleton, contacts=0.0)
        out = tracking.reward_total(char, ref)
        assert out.contact == 0.0

    def test_single_joint_rotation_error(self, skeleton):
        ref = perfect_state(skeleton)
        char = perfect_state(skeleton)
        char.joint_rot = char.joint_rot.copy()
        char.joint_rot[3] = [0.0, 0.0, 0.5]
        out = tracking.reward_total(char, ref)
        assert abs(out.pose - math.exp(-0.25 * 0.25)) < 1e-12

    def test_joint_velocity_term(self, skeleton):
        ref = perfect_state(skeleton)
        char = perfect_state(skeleton)
        char.joint_vel = char.joint_vel.copy()
        char.joint_vel[2] = [2.0, 0.0, 0.0]
        out = tracking.reward_total(char, ref)
        assert abs(out.pose_velocity - math.exp(-0.01 * 4.0)) < 1e-12

    def test_root_terms(self, skeleton):
        ref = perfect_state(skeleton)
        char = perfect_state(skeleton)
        char.root_pos = char.root_pos + np.array([0.2, 0.0, 0.0])
        out = tracking.reward_total(char, ref)
        assert abs(out.root - math.exp(-5.0 * 0.04)) < 1e-12

        char = perfect_state(skeleton)
        char.root_vel = char.root_vel + np.array([0.0, 0.3, 0.0])
        out = tracking.reward_total(char, ref)
        assert abs(out.root_velocity - math.exp(-0.09)) < 1e-12

        char = perfect_state(skeleton)
        char.root_angvel = char.root_angvel + np.array([0.0, 0.0, 1.0])
        out = tracking.reward_total(char, ref)
        assert abs(out.root_velocity - math.exp(-0.1)) < 1e-12

    def test_key_body_term(self, skeleton):
        ref = perfect_state(skeleton)
        char = perfect_state(skeleton)
        char.key_pos = char.key_pos.copy()
        char.key_pos[0] += [0.1, 0.0, 0.0]
        out = tracking.reward_total(char, ref)
        assert abs(out.key - math.exp(-10.0 * 0.01)) < 1e-12

    def test_joint_weights_scale_pose_error(self, skeleton):
        ref = perfect_state(skeleton)
        char = perfect_state(skeleton)
        char.joint_rot = char.joint_rot.copy()
        char.joint_rot[3] = [0.0, 0.0, 0.5]
        w = np.ones(skeleton.num_joints)
        w[3] = 2.0
        out = tracking.reward_total(char, ref, joint_weights=w)
        assert abs(out.pose - math.exp(-0.25 * 2.0 * 0.25)) < 1e-12

    def test_components_bounded(self, skeleton, rng):
        for _ in range(20):
            ref = perfect_state(skeleton, rng)
            char = perfect_state(skeleton, rng)
            char.contacts = (rng.uniform(size=skeleton.num_joints) > 0.5).astype(float)
            ref.contacts = (rng.uniform(size=skeleton.num_joints) > 0.5).astype(float)
            out = tracking.reward_total(char, ref)
            for r in (out.pose, out.pose_velocity, out.root, out.root_velocity, out.key):
                assert 0.0 < r <= 1.0
            assert -1.0 <= out.contact <= 1.0
            assert -1.0 < out.total <= 2.0

    def test_any_perturbation_strictly_decreases(self, skeleton, rng):
        ref = perfect_state(skeleton, rng)
        fields = [
            "root_pos", "root_rot", "root_vel", "root_angvel",
            "joint_rot", "joint_vel", "key_pos",
        ]
        for field in fields:
            char = perfect_state(skeleton, np.random.default_rng(1234))
            arr = getattr(char, field).copy()
            flat = arr.reshape(-1)
            flat[int(rng.integers(0, flat.size))] += 1e-3
            setattr(char, field, arr)
            out = tracking.reward_total(char, ref)
            assert out.total < 2.0

    def test_shape_mismatch(self, skeleton):
        ref = perfect_state(skeleton)
        char = perfect_state(skeleton)
        char.joint_rot = char.joint_rot[:-1]
        with pytest.raises(ValueError):
            tracking.reward_total(char, ref)


class TestPoseTermination:
    def test_identical_poses(self, skeleton):
        a = perfect_state(skeleton)
        assert not tracking.pose_termination(a, a, skeleton)

    def test_foot_exempt(self, skeleton):
        # folding the knee all the way moves only the ankle (a leaf joint):
        # 0.80 m of foot deviation, past the 0.7 m threshold, no termination
        ref = perfect_state(skeleton)
        char = perfect_state(skeleton)
        char.joint_rot = char.joint_rot.copy()
        for side in ("l", "r"):
            char.joint_rot[skeleton.joint_index(f"{side}_knee"), 1] = np.pi
        ref_pos = forward_kinematics(skeleton, ref.root_pos, ref.root_rot, ref.joint_rot)
        char_pos = forward_kinematics(skeleton, char.root_pos, char.root_rot, char.joint_rot)
        dev = np.linalg.norm(char_pos - ref_pos, axis=-1)
        assert dev[skeleton.foot_joints[0]] > 0.7
        assert not tracking.pose_termination(char, ref, skeleton)

    def test_head_past_threshold(self, skeleton):
        ref = perfect_state(skeleton)
        char = perfect_state(skeleton)
        char.root_pos = char.root_pos + np.array([0.0, 0.0, 0.71])
        assert tracking.pose_termination(char, ref, skeleton, threshold=0.7)
        assert not tracking.pose_termination(char, ref, skeleton, threshold=0.72)

    def test_monotone_in_threshold(self, skeleton, rng):
        ref = perfect_state(skeleton, rng)
        char = perfect_state(skeleton, rng)
        thresholds = [0.1, 0.3, 0.5, 0.7, 1.0]
        flags = [tracking.pose_termination(char, ref, skeleton, t) for t in thresholds]
        # terminating at tau implies terminating at any smaller tau
        for a, b in zip(flags, flags[1:]):
            assert a or not b


class TestPrioritizedSampling:
    def test_weight_formula(self):
        stats = [tracking.FailureStats(rate=r) for r in (0.0, 0.0, 1.0)]
        p = tracking.sampling_weights(stats)
        want = np.array([0.01, 0.01, 1.0]) / 1.02
        assert np.allclose(p, want, atol=1e-12)

    def test_floor_keeps_all_positive(self, rng):
        stats = [tracking.FailureStats(rate=r) for r in (0.0, 0.5, 1.0, 0.0)]
        p = tracking.sampling_weights(stats)
        assert np.all(p > 0.0)
        assert np.isclose(p.sum(), 1.0)

    def test_single_clip_always_chosen(self, rng):
        stats = [tracking.FailureStats(rate=0.3)]
        draws = tracking.prioritized_sample(stats, rng, 50)
        assert np.all(draws == 0)

    def test_uniform_rates_chi_square(self, rng):
        stats = [tracking.FailureStats(rate=0.5) for _ in range(8)]
        draws = tracking.prioritized_sample(stats, rng, 100000)
        counts = np.bincount(draws, minlength=8)
        _, p = scistats.chisquare(counts)
        assert p > 0.01

    def test_empirical_matches_weights(self, rng):
        stats = [tracking.FailureStats(rate=r) for r in (0.0, 0.2, 0.9, 0.05)]
        p = tracking.sampling_weights(stats)
        draws = tracking.prioritized_sample(stats, rng, 100000)
        counts = np.bincount(draws, minlength=4)
        _, pval = scistats.chisquare(counts, f_exp=p * 100000)
        assert pval > 0.01

    def test_empty_stats_rejected(self, rng):
        with pytest.raises(ValueError):
            tracking.sampling_weights([])

    def test_ema_update(self):
        s = tracking.FailureStats()
        assert s.rate == 1.0  # fresh clips assumed failing
        s.record(False)
        assert s.rate == 0.0 and s.attempts == 1 and s.failures == 0
        s.record(True)
        assert s.rate == 0.5 and s.failures == 1
        for _ in range(500):
            s.record(False)
        assert s.rate < 0.05
        assert s.weight >= tracking.MIN_SAMPLING_WEIGHT


class TestJointTrackingError:
    def test_identical_zero(self, rng):
        seq = rng.normal(size=(10, 14, 3))
        assert tracking.joint_tracking_error(seq, seq) == 0.0

    def test_uniform_offset(self, rng):
        seq = rng.normal(size=(10, 14, 3))
        off = seq + np.array([0.0, 0.05, 0.0])
        assert np.isclose(tracking.joint_tracking_error(off, seq), 0.05, atol=1e-12)

    def test_matches_double_loop_oracle(self, rng):
        a = rng.normal(size=(6, 5, 3))
        b = rng.normal(size=(6, 5, 3))
        total = 0.0
        for f in range(6):
            for j in range(5):
                total += np.sqrt(np.sum((a[f, j] - b[f, j]) ** 2))
        want = total / 30.0
        assert np.isclose(tracking.joint_tracking_error(a, b), want, atol=1e-12)

    def test_length_mismatch(self, rng):
        with pytest.raises(ValueError):
            tracking.joint_tracking_error(np.zeros((3, 2, 3)), np.zeros((4, 2, 3)))
