# The whole pipeline end to end: terrain -> nav graph -> A* -> batched
# autoregressive generation -> selection -> kinematic correction ->
# metrics, with a replay-oracle denoiser standing in for a trained model.
import json
import os

from terrainmotion.motion import default_skeleton, save_clip
from terrainmotion.pipeline import PipelineConfig, cmd_pipeline
from terrainmotion.toydata import make_walk_clip

out_dir = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(out_dir, exist_ok=True)

skeleton = default_skeleton()
walk = make_walk_clip(skeleton, num_frames=150)
walk_path = os.path.join(out_dir, "walk.json")
save_clip(walk, walk_path)

config = PipelineConfig(
    seed=42,
    out_dir=os.path.join(out_dir, "run"),
    terrain_grid=(16, 16),
    terrain_num_boxes=0,           # flat world keeps the oracle grounded
    denoiser_kind="replay",
    denoiser_clip=walk_path,
    anchor_height=float(walk.root_pos[1, 2]),
    batch=4,
    max_seconds=4.0,
    diffusion_K=50,
    opt_iters=300,
    start=(2, 8),
    goal=(12, 8),
    deterministic=True,
)
run_dir = cmd_pipeline(config)
print("pipeline artifacts in", run_dir)
for name in sorted(os.listdir(run_dir)):
    print("  ", name)

manifest = json.load(open(os.path.join(run_dir, "manifest.json")))
print("manifest covers", len(manifest["files"]), "files, seed", manifest["seed"])

report = json.load(open(os.path.join(run_dir, "opt_report.json")))
print("selection scores:", [round(s, 6) for s in report["selection_scores"]])
print("best clip index:", report["best_index"])
print("final corrected losses:", {
    k: round(v, 6) for k, v in report["final"].items()
})

# The oracle batch scores ~0 (no artifacts, path completed). The corrected
# clip trades a little contact precision for smoothing the window-seam
# jerk below the 1000 m/s^3 optimization limit; both appear in metrics.csv.
print()
print("metrics.csv:")
print(open(os.path.join(run_dir, "metrics.csv")).read())
