# Kinematic motion correction: Adam on root and joint channels against
# regularization + penetration + contact + jerk losses.
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from terrainmotion.losses import contact_loss, jerk_loss, penetration_loss
from terrainmotion.motion import clip_joint_positions_fk, default_skeleton
from terrainmotion.optimize import OptimizeConfig, optimize_motion
from terrainmotion.terrain import TerrainGrid
from terrainmotion.toydata import make_hover_clip, make_standing_clip

out_dir = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(out_dir, exist_ok=True)

skeleton = default_skeleton()
flat = TerrainGrid(0, 0, 0.4, 0.4, np.zeros((24, 24)))

# Fixture 1: a standing pose sunk 5 cm into the ground with contact-labeled
# feet. The default weights (regularization 1, everything else 1000) and
# 3000 Adam iterations at step size 1e-3 lift it back out.
sunk = make_standing_clip(skeleton, num_frames=6)
sunk.root_pos[:, 2] -= 0.05
sunk.joint_pos = clip_joint_positions_fk(skeleton, sunk)
print("sunk standing clip, before:")
print("  penetration:", round(penetration_loss(sunk, skeleton, flat), 3))
print("  contact:    ", round(contact_loss(sunk, skeleton, flat), 5))

fixed, report = optimize_motion(sunk, skeleton, flat, OptimizeConfig())
print("after 3000 iterations:")
print("  penetration:", penetration_loss(fixed, skeleton, flat))
print("  contact:    ", round(contact_loss(fixed, skeleton, flat), 6))

# Fixture 2: a root impulse mid-clip spikes the jerk to thousands of
# m/s^3; the jerk hinge flattens it below the 1000 m/s^3 limit while the
# regularizer keeps the motion close to the source.
jerky = make_hover_clip(skeleton, num_frames=12, height=2.0)
jerky.root_pos = jerky.root_pos.copy()
jerky.root_pos[6, 0] += 0.08
jerky.joint_pos = clip_joint_positions_fk(skeleton, jerky)
print("\nimpulse clip, jerk excess before:", round(jerk_loss(jerky, 1000.0), 1))
smoothed, report2 = optimize_motion(
    jerky, skeleton, flat, OptimizeConfig(iters=800)
)
print("after 800 iterations:", round(jerk_loss(smoothed, 1000.0), 4))
print("root moved at most",
      round(float(np.abs(smoothed.root_pos - jerky.root_pos).max()), 4), "m")

fig, axes = plt.subplots(1, 2, figsize=(11, 4))
axes[0].semilogy(report.loss_trace)
axes[0].set_title("sunk clip: loss trace")
axes[0].set_xlabel("iteration")
axes[1].semilogy(report2.loss_trace)
axes[1].set_title("impulse clip: loss trace")
axes[1].set_xlabel("iteration")
fig.tight_layout()
fig.savefig(os.path.join(out_dir, "correction_trace.png"), dpi=110)
print("wrote", os.path.join(out_dir, "correction_trace.png"))
