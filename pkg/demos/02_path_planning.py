# Navigation graphs over terrain cells: walkable steps, jump edges across
# gaps, wall exclusion, and stochastic-cost A*.
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from terrainmotion.navgraph import astar_plan, build_graph
from terrainmotion.terrain import TerrainGrid, gen_random_boxes

out_dir = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(out_dir, exist_ok=True)

# Two plateaus separated by a low gap: cliff cells on either rim get
# directed jump edges as long as no wall blocks the elevated chord.
heights = np.zeros((10, 6))
heights[:4, :] = 2.0
heights[6:, :] = 2.0
plateaus = TerrainGrid(0, 0, 0.4, 0.4, heights)
graph = build_graph(plateaus)
jump = graph.edge_kind == 1


def crossing_count(g):
    j = g.edge_kind == 1
    src_rows = g.edge_src[j] // 6
    dst_rows = g.edge_dst[j] // 6
    return int(np.sum((src_rows <= 3) & (dst_rows >= 6))
               + np.sum((src_rows >= 6) & (dst_rows <= 3)))


print("gap-crossing jump edges:", crossing_count(graph))

walled = heights.copy()
walled[4:6, :] = 3.3  # above the 2.0 + 1.2 clearance chord
graph_walled = build_graph(TerrainGrid(0, 0, 0.4, 0.4, walled))
print("gap-crossing jump edges with a wall:", crossing_count(graph_walled))

# A* on a random 16x16 terrain. Costs are squared horizontal distance
# (weight 1) plus squared vertical distance (weight 0.15) plus a uniform
# draw in [0, 0.5]; with the stochastic term disabled the result is the
# deterministic shortest path.
grid = gen_random_boxes(grid=(16, 16), num_boxes=10, seed=11)
nav = build_graph(grid)
det = astar_plan(nav, (0, 0), (15, 15), seed=0, c_max=0.0)
print("deterministic cost:", round(det.total_cost, 4), "len", len(det.waypoints))
for seed in (1, 2, 3):
    p = astar_plan(nav, (0, 0), (15, 15), seed=seed)
    print(f"stochastic seed {seed}: cost {p.total_cost:.3f} len {len(p.waypoints)}")

fig, axes = plt.subplots(1, 2, figsize=(11, 5))
axes[0].imshow(plateaus.heights.T, origin="lower", cmap="terrain")
for e in np.nonzero(jump)[0]:
    a = graph.node(int(graph.edge_src[e]))
    b = graph.node(int(graph.edge_dst[e]))
    axes[0].plot([a.cell[0], b.cell[0]], [a.cell[1], b.cell[1]], "r-", lw=0.5)
axes[0].set_title("jump edges across a gap")

axes[1].imshow(grid.heights.T, origin="lower", cmap="terrain")
cells = np.array(det.cells())
axes[1].plot(cells[:, 0], cells[:, 1], "w.-")
axes[1].set_title("A* path (deterministic costs)")
fig.tight_layout()
fig.savefig(os.path.join(out_dir, "path_planning.png"), dpi=110)
print("wrote", os.path.join(out_dir, "path_planning.png"))
