# Tracking rewards, pose termination, and prioritized clip sampling: the
# reward-side math an RL tracker would consume.
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from terrainmotion.motion import default_skeleton, forward_kinematics
from terrainmotion.tracking import (
    CharacterState,
    FailureStats,
    pose_termination,
    prioritized_sample,
    reward_total,
    sampling_weights,
)

out_dir = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(out_dir, exist_ok=True)

skeleton = default_skeleton()
j = skeleton.num_joints


def state(root_offset=0.0, pose_noise=0.0, rng=None):
    joint_rot = np.zeros((j, 3))
    if pose_noise and rng is not None:
        joint_rot += rng.normal(scale=pose_noise, size=(j, 3))
    root_pos = np.array([root_offset, 0.0, 0.9])
    key = forward_kinematics(skeleton, root_pos, np.zeros(3), joint_rot)[
        list(skeleton.key_bodies)
    ]
    return CharacterState(
        root_pos=root_pos,
        root_rot=np.zeros(3),
        root_vel=np.zeros(3),
        root_angvel=np.zeros(3),
        joint_rot=joint_rot,
        joint_vel=np.zeros((j, 3)),
        key_pos=key,
        contacts=np.ones(j),
    )


ref = state()
print("perfect tracking total:", reward_total(ref, ref).total)

# reward decay as the character drifts from the reference
rng = np.random.default_rng(0)
offsets = np.linspace(0.0, 1.0, 21)
totals = [reward_total(state(root_offset=d), ref).total for d in offsets]
terminated = [pose_termination(state(root_offset=d), ref, skeleton) for d in offsets]
first_term = offsets[int(np.argmax(terminated))]
print("pose termination first fires at root offset", first_term, "m")

# prioritized sampling: failure rates floored at 0.01 and renormalized
stats = [FailureStats(rate=r) for r in (0.9, 0.4, 0.1, 0.0, 0.0)]
probs = sampling_weights(stats)
draws = prioritized_sample(stats, np.random.default_rng(1), 100000)
freq = np.bincount(draws, minlength=len(stats)) / 100000
print("target probabilities:", np.round(probs, 4))
print("empirical over 1e5:  ", np.round(freq, 4))

fig, axes = plt.subplots(1, 2, figsize=(11, 4))
axes[0].plot(offsets, totals, "o-")
axes[0].axvline(first_term, color="r", ls="--", label="pose termination")
axes[0].set_xlabel("root offset (m)")
axes[0].set_ylabel("total reward")
axes[0].legend()
axes[0].set_title("tracking reward vs drift")
x = np.arange(len(stats))
axes[1].bar(x - 0.2, probs, width=0.4, label="target")
axes[1].bar(x + 0.2, freq, width=0.4, label="empirical")
axes[1].set_xlabel("clip")
axes[1].legend()
axes[1].set_title("prioritized sampling frequencies")
fig.tight_layout()
fig.savefig(os.path.join(out_dir, "tracking_rewards.png"), dpi=110)
print("wrote", os.path.join(out_dir, "tracking_rewards.png"))
