# Build 2.5D box terrains, query their signed distance field, and export
# meshes for offline viewing.
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from terrainmotion.terrain import (
    gen_random_boxes,
    gen_random_walk,
    save_terrain,
    save_terrain_obj,
    sd_terrain,
    slice_terrain,
)

out_dir = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(out_dir, exist_ok=True)

# Random Boxes: overwrite random patches on a flat 16x16 grid, then pool
# 2x2 blocks so no single-cell gaps or walls survive.
boxes = gen_random_boxes(grid=(16, 16), num_boxes=10, seed=7)
print("random boxes:", boxes.shape, "height range",
      round(boxes.heights.min(), 2), "..", round(boxes.heights.max(), 2))

# Random walks carve connected corridors at random heights; used as the
# out-of-distribution test terrain family.
walk = gen_random_walk(grid=(32, 32), num_paths=10, seed=7)

# A big terrain can be sliced into training-sized windows that keep their
# world coordinates.
big = gen_random_boxes(grid=(100, 100), num_boxes=60, seed=3)
patch = slice_terrain(big, (40, 40), (16, 16))
print("slice keeps world coords: x0", patch.x0, "vs parent cell 40 at",
      big.x0 + 40 * big.dx)

# The signed distance field is the min over per-cell boxes whose bottoms
# extend to -infinity: negative inside, exact Euclidean outside.
probe = np.array(
    [
        [3.0, 3.0, 3.0],   # high above
        [3.0, 3.0, -0.1],  # just under a top surface
        [-2.0, -2.0, 0.0], # outside the grid
    ]
)
print("sd at probes:", np.round(sd_terrain(probe, boxes), 3))

# a vertical slice of the field
xs = np.linspace(-1, 7, 200)
zs = np.linspace(-2.5, 3.5, 150)
xx, zz = np.meshgrid(xs, zs)
pts = np.stack([xx, np.full_like(xx, 3.0), zz], axis=-1)
field = sd_terrain(pts, boxes)

fig, axes = plt.subplots(1, 3, figsize=(14, 4))
axes[0].imshow(boxes.heights.T, origin="lower", cmap="terrain")
axes[0].set_title("random boxes (16x16)")
axes[1].imshow(walk.heights.T, origin="lower", cmap="terrain")
axes[1].set_title("random walks (32x32)")
im = axes[2].contourf(xx, zz, field, levels=21, cmap="RdBu")
axes[2].contour(xx, zz, field, levels=[0.0], colors="k")
axes[2].set_title("SDF slice at y=3.0")
fig.colorbar(im, ax=axes[2])
fig.tight_layout()
fig.savefig(os.path.join(out_dir, "terrain_and_sdf.png"), dpi=110)
print("wrote", os.path.join(out_dir, "terrain_and_sdf.png"))

save_terrain(boxes, os.path.join(out_dir, "boxes.json"))
save_terrain_obj(boxes, os.path.join(out_dir, "boxes.obj"))
print("wrote boxes.json / boxes.obj")
