# Motion quality losses against terrain, local heightmap sampling, and
# non-interfering terrain augmentation around a motion clip.
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from terrainmotion.losses import contact_loss, jerk_loss, penetration_loss
from terrainmotion.motion import anchor_local_frame, default_skeleton
from terrainmotion.terrain import (
    TerrainGrid,
    augment_with_boxes,
    compute_noninterference_bounds,
    sample_local_heightmap,
)
from terrainmotion.toydata import make_walk_clip

out_dir = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(out_dir, exist_ok=True)

skeleton = default_skeleton()
flat = TerrainGrid(0, 0, 0.4, 0.4, np.zeros((24, 24)))
walk = make_walk_clip(skeleton, num_frames=120)

print("grounded walk on flat terrain:")
print("  penetration:", penetration_loss(walk, skeleton, flat))
print("  contact:    ", contact_loss(walk, skeleton, flat))
print("  jerk excess over 1000 m/s^3:", jerk_loss(walk, 1000.0))

# sink the clip 5 cm: every frame now penetrates
sunk = walk.copy()
sunk.root_pos[:, 2] -= 0.05
sunk.joint_pos[:, :, 2] -= 0.05
print("after sinking 5 cm, penetration:",
      round(penetration_loss(sunk, skeleton, flat), 3))

# the 31x31 local heightmap the generator conditions on, sampled around
# the clip's 40th frame
frame = anchor_local_frame(walk, 40)
hm = sample_local_heightmap(flat, frame)
print("heightmap relative to root height: all",
      round(float(hm.values.mean()), 3))

# non-interfering augmentation: compute per-cell height bounds from the
# clip, stack random boxes, clamp back into the bounds
bounds = compute_noninterference_bounds(walk, skeleton, flat)
aug = augment_with_boxes(flat, bounds, num_boxes=12, seed=5)
print("augmented terrain: max height", round(aug.heights.max(), 2))
print("  penetration of the guarded clip:",
      penetration_loss(walk, skeleton, aug))

fig, axes = plt.subplots(1, 3, figsize=(14, 4))
axes[0].imshow(hm.values.T, origin="lower", cmap="terrain")
axes[0].set_title("local heightmap (31x31)")
axes[1].imshow(aug.heights.T, origin="lower", cmap="terrain")
axes[1].plot(walk.root_pos[:, 0] / 0.4, walk.root_pos[:, 1] / 0.4, "r-")
axes[1].set_title("augmented terrain + root path")
finite = np.isfinite(bounds.upper)
shown = np.where(finite, bounds.upper, np.nan)
axes[2].imshow(shown.T, origin="lower", cmap="viridis")
axes[2].set_title("upper height bounds under the clip")
fig.tight_layout()
fig.savefig(os.path.join(out_dir, "losses_and_heightmaps.png"), dpi=110)
print("wrote", os.path.join(out_dir, "losses_and_heightmaps.png"))
