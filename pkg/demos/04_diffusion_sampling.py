# Diffusion sampling machinery: noise schedule, forward noising, DDIM with
# an oracle denoiser, and blended denoising.
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from terrainmotion import diffusion as df
from terrainmotion.motion import default_skeleton, window
from terrainmotion.rotmath import LocalFrame
from terrainmotion.terrain import TerrainGrid, sample_local_heightmap
from terrainmotion.toydata import make_walk_clip

out_dir = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(out_dir, exist_ok=True)

schedule = df.make_schedule(1000)
print("alpha_bar at K:", schedule.alpha_bar[-1], "(near-pure noise)")

skeleton = default_skeleton()
walk = make_walk_clip(skeleton, num_frames=90)
target = df.encode_clip(window(walk, 10))
rng = np.random.default_rng(0)

# forward noising at increasing k
noise_levels = [0, 100, 400, 1000]
traces = [df.q_sample(target, k, schedule, rng) for k in noise_levels]

# DDIM with a constant oracle contracts onto the oracle's motion from any
# starting noise, at any stride
flat = TerrainGrid(0, 0, 0.4, 0.4, np.zeros((24, 24)))
ctx = df.GenerationContext(
    heightmap=sample_local_heightmap(flat, LocalFrame(np.zeros(3), 0.0))
)
den = df.ConstantDenoiser(target)
for stride in (1, 5, 1000):
    out = df.ddim_sample(
        den, ctx, schedule, df.GenerationConfig(ddim_stride=stride), rng,
        skeleton.num_joints,
    )
    err = np.max(np.abs(df.encode_clip(out) - target))
    print(f"DDIM stride {stride:4d}: max abs error vs oracle {err:.2e}")


# blended denoising trades past-frame continuity against terrain
# compliance; with fixed branches it is exactly linear in s
class TwoBranch:
    def __call__(self, k, x_k, context):
        return np.full_like(np.asarray(x_k), 2.0 if context.mask_prev else 1.0)


prev = window(walk, 0).slice(0, 2)
ctx_prev = df.GenerationContext(prev_frames=prev)
sweep = [0.0, 0.25, 0.5, 0.65, 0.75, 1.0]
blends = [
    float(df.blend_denoise(TwoBranch(), 5, np.zeros(4), ctx_prev, s)[0])
    for s in sweep
]
print("blend sweep:", dict(zip(sweep, blends)))

fig, axes = plt.subplots(1, 2, figsize=(11, 4))
for k, tr in zip(noise_levels, traces):
    axes[0].plot(tr[:120], lw=0.8, label=f"k={k}")
axes[0].legend()
axes[0].set_title("forward noising of a motion vector (first 120 dims)")
axes[1].plot(sweep, blends, "o-")
axes[1].set_xlabel("blend coefficient s")
axes[1].set_title("blended denoising is linear in s")
fig.tight_layout()
fig.savefig(os.path.join(out_dir, "diffusion_sampling.png"), dpi=110)
print("wrote", os.path.join(out_dir, "diffusion_sampling.png"))
