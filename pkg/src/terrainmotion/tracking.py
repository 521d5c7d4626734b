"""Motion-tracking rewards, pose termination, and prioritized clip sampling.

Pure functions consumable by any external simulator: nothing here steps
physics or trains a policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rotmath
from .motion import forward_kinematics

REWARD_WEIGHTS = {
    "pose": 0.5,
    "pose_velocity": 0.1,
    "root": 0.15,
    "root_velocity": 0.1,
    "key": 0.15,
}
POSE_TERMINATION_DIST = 0.7  # m
MIN_SAMPLING_WEIGHT = 0.01


@dataclass
class CharacterState:
    """Instantaneous character (or reference) state for reward evaluation."""

    root_pos: np.ndarray       # (3,)
    root_rot: np.ndarray       # (3,) exp map
    root_vel: np.ndarray       # (3,)
    root_angvel: np.ndarray    # (3,)
    joint_rot: np.ndarray      # (J, 3)
    joint_vel: np.ndarray      # (J, 3) local angular velocities
    key_pos: np.ndarray        # (num_key, 3)
    contacts: np.ndarray       # (J,) binary

    def __post_init__(self):
        self.root_pos = np.asarray(self.root_pos, dtype=np.float64).reshape(3)
        self.root_rot = np.asarray(self.root_rot, dtype=np.float64).reshape(3)
        self.root_vel = np.asarray(self.root_vel, dtype=np.float64).reshape(3)
        self.root_angvel = np.asarray(self.root_angvel, dtype=np.float64).reshape(3)
        self.joint_rot = np.asarray(self.joint_rot, dtype=np.float64)
        self.joint_vel = np.asarray(self.joint_vel, dtype=np.float64)
        self.key_pos = np.asarray(self.key_pos, dtype=np.float64)
        self.contacts = np.asarray(self.contacts, dtype=np.float64)


@dataclass
class RewardBreakdown:
    pose: float
    pose_velocity: float
    root: float
    root_velocity: float
    key: float
    contact: float
    total: float


def _check_states(char, ref):
    if char.joint_rot.shape != ref.joint_rot.shape or char.key_pos.shape != ref.key_pos.shape:
        raise ValueError("character and reference state shapes differ")


def reward_total(char, ref, joint_weights=None):
    """Full tracking reward and its six components.

    The exponential components each lie in (0, 1]; the contact term both
    rewards matched contacts and penalizes spurious ones, so it lies in
    [-1, 1] and the total in (-1, 2].
    """
    _check_states(char, ref)
    j = char.joint_rot.shape[0]
    w = np.ones(j) if joint_weights is None else np.asarray(joint_weights, dtype=np.float64)

    q_c = rotmath.quat_from_expmap(char.joint_rot)
    q_r = rotmath.quat_from_expmap(ref.joint_rot)
    pose_err = np.sum(rotmath.quat_diff(q_r, q_c) ** 2, axis=-1)
    r_pose = math.exp(-0.25 * float(np.sum(w * pose_err)))

    vel_err = np.sum((ref.joint_vel - char.joint_vel) ** 2, axis=-1)
    r_pose_vel = math.exp(-0.01 * float(np.sum(w * vel_err)))

    rq_c = rotmath.quat_from_expmap(char.root_rot)
    rq_r = rotmath.quat_from_expmap(ref.root_rot)
    root_rot_err = float(np.sum(rotmath.quat_diff(rq_r, rq_c) ** 2))
    root_pos_err = float(np.sum((ref.root_pos - char.root_pos) ** 2))
    r_root = math.exp(-5.0 * (root_pos_err + 0.1 * root_rot_err))

    root_vel_err = float(np.sum((ref.root_vel - char.root_vel) ** 2))
    root_angvel_err = float(np.sum((ref.root_angvel - char.root_angvel) ** 2))
    r_root_vel = math.exp(-(root_vel_err + 0.1 * root_angvel_err))

    key_err = float(np.sum((ref.key_pos - char.key_pos) ** 2))
    r_key = math.exp(-10.0 * key_err)

    c_hat = ref.contacts
    c = char.contacts
    r_contact = float(np.mean(c_hat * c - (1.0 - c_hat) * c))

    total = math.fsum(
        [
            REWARD_WEIGHTS["pose"] * r_pose,
            REWARD_WEIGHTS["pose_velocity"] * r_pose_vel,
            REWARD_WEIGHTS["root"] * r_root,
            REWARD_WEIGHTS["root_velocity"] * r_root_vel,
            REWARD_WEIGHTS["key"] * r_key,
            r_contact,
        ]
    )
    return RewardBreakdown(
        pose=r_pose,
        pose_velocity=r_pose_vel,
        root=r_root,
        root_velocity=r_root_vel,
        key=r_key,
        contact=r_contact,
        total=total,
    )


def pose_termination(char, ref, skeleton, threshold=POSE_TERMINATION_DIST):
    """True (terminate) iff any non-foot joint's world position deviates
    from the reference by more than ``threshold`` meters."""
    pos_c = forward_kinematics(skeleton, char.root_pos, char.root_rot, char.joint_rot)
    pos_r = forward_kinematics(skeleton, ref.root_pos, ref.root_rot, ref.joint_rot)
    dev = np.linalg.norm(pos_c - pos_r, axis=-1)
    mask = np.ones(skeleton.num_joints, dtype=bool)
    mask[list(skeleton.foot_joints)] = False
    return bool(np.any(dev[mask] > threshold))


@dataclass
class FailureStats:
    """Per-clip tracking failure statistics.

    ``rate`` is a running failure-rate estimate updated as an exponential
    moving average with horizon ``EMA_HORIZON`` attempts; fresh clips start
    at rate 1 so they are sampled early.
    """

    attempts: int = 0
    failures: int = 0
    rate: float = 1.0

    EMA_HORIZON = 100

    @property
    def weight(self):
        return max(self.rate, MIN_SAMPLING_WEIGHT)

    def record(self, failed):
        self.attempts += 1
        self.failures += int(failed)
        alpha = 1.0 / min(self.attempts, self.EMA_HORIZON)
        self.rate += alpha * (float(failed) - self.rate)


def sampling_weights(stats):
    """Normalized multinomial probabilities: max(rate, 0.01) renormalized."""
    if not stats:
        raise ValueError("need at least one clip")
    w = np.array([s.weight for s in stats], dtype=np.float64)
    return w / w.sum()


def prioritized_sample(stats, rng, n):
    """Draw n clip indices from the prioritized multinomial distribution."""
    p = sampling_weights(stats)
    return rng.choice(len(stats), size=n, p=p)


def joint_tracking_error(char_seq, ref_seq):
    """Mean Euclidean joint-position error over frames and joints."""
    a = np.asarray(char_seq, dtype=np.float64)
    b = np.asarray(ref_seq, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("sequence shapes differ")
    return float(np.mean(np.linalg.norm(a - b, axis=-1)))
