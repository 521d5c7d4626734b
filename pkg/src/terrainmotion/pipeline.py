"""End-to-end motion generation pipeline: terrain -> path -> generate ->
select -> optimize -> evaluate, with deterministic artifacts and a hashed
manifest."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import diffusion, losses
from .motion import default_skeleton, load_clip, save_clip
from .navgraph import NavGraphParams, NoPathError, astar_plan, build_graph, save_path
from .optimize import OptimizeConfig, optimize_motion
from .terrain import gen_random_boxes, gen_random_walk, save_terrain, save_terrain_obj


def stream(seed, name):
    """Deterministic named RNG sub-stream of a master seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


@dataclass
class PipelineConfig:
    seed: int = 0
    out_dir: str = "run"
    # terrain stage
    terrain_kind: str = "random_boxes"   # or "random_walk"
    terrain_grid: tuple = (16, 16)
    terrain_num_boxes: int = 10
    terrain_num_paths: int = 10
    terrain_size_range: tuple = (5, 10)
    terrain_height_range: tuple = (-2.0, 2.0)
    # navigation graph / A*
    max_walk_dh: float = 2.1
    jump_radius: float = 2.4
    jump_dh: tuple = (-2.1, 1.0)
    cliff_drop: float = 1.0
    astar_w_xy: float = 1.0
    astar_w_z: float = 0.15
    astar_c_min: float = 0.0
    astar_c_max: float = 0.5
    start: tuple = None
    goal: tuple = None
    edge_margin: int = 2
    # generation stage
    denoiser_kind: str = "replay"        # constant|replay|linear|exec
    denoiser_clip: str = None
    denoiser_cmd: str = None
    blend_s: float = 0.65
    ddim_stride: int = 5
    batch: int = 32
    max_seconds: float = 10.0
    diffusion_K: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    anchor_height: float = 0.9
    reach_radius: float = 0.5
    # kinematic correction
    opt_w_reg: float = 1.0
    opt_w_pen: float = 1000.0
    opt_w_contact: float = 1000.0
    opt_w_jerk: float = 1000.0
    opt_iters: int = 3000
    opt_lr: float = 1e-3
    opt_jerk_max: float = 1000.0
    # evaluation
    jerk_max_metric: float = 11666.0
    # execution
    threads: int = 1
    deterministic: bool = False

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d):
        cfg = cls()
        for k, v in d.items():
            if not hasattr(cfg, k):
                raise ValueError(f"unknown config key: {k}")
            cur = getattr(cfg, k)
            if isinstance(cur, tuple) and v is not None:
                v = tuple(v)
            setattr(cfg, k, v)
        return cfg


def dump_json(obj, path):
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True)
        f.write("\n")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def _gen_terrain(config):
    rng = stream(config.seed, "terrain")
    if config.terrain_kind == "random_boxes":
        return gen_random_boxes(
            grid=tuple(config.terrain_grid),
            num_boxes=config.terrain_num_boxes,
            size_range=tuple(config.terrain_size_range),
            height_range=tuple(config.terrain_height_range),
            seed=rng,
        )
    if config.terrain_kind == "random_walk":
        return gen_random_walk(
            grid=tuple(config.terrain_grid),
            num_paths=config.terrain_num_paths,
            height_range=tuple(config.terrain_height_range),
            seed=rng,
        )
    raise ValueError(f"unknown terrain kind: {config.terrain_kind}")


def _pick_endpoints(grid_shape, margin, rng):
    n, m = grid_shape
    band = []
    for i in range(n):
        for j in range(m):
            if i < margin or j < margin or i >= n - margin or j >= m - margin:
                band.append((i, j))
    a = band[int(rng.integers(0, len(band)))]
    # bias the goal toward the far side of the grid
    far = [c for c in band if abs(c[0] - a[0]) + abs(c[1] - a[1]) >= (n + m) // 2]
    pool = far if far else band
    b = pool[int(rng.integers(0, len(pool)))]
    return a, b


def plan_on_terrain(grid, config):
    """Build the nav graph and find a path per the pipeline config."""
    params = NavGraphParams(
        max_walk_dh=config.max_walk_dh,
        jump_radius=config.jump_radius,
        jump_dh=tuple(config.jump_dh),
        cliff_drop=config.cliff_drop,
    )
    graph = build_graph(grid, params)
    c_max = 0.0 if config.deterministic else config.astar_c_max
    rng = stream(config.seed, "path")
    astar_seed = int(rng.integers(0, 2**63 - 1))
    if config.start is not None and config.goal is not None:
        return astar_plan(
            graph,
            tuple(config.start),
            tuple(config.goal),
            seed=astar_seed,
            w_xy=config.astar_w_xy,
            w_z=config.astar_w_z,
            c_min=config.astar_c_min,
            c_max=c_max,
        )
    last_error = None
    for _ in range(20):
        start, goal = _pick_endpoints(grid.shape, config.edge_margin, rng)
        try:
            return astar_plan(
                graph,
                start,
                goal,
                seed=astar_seed,
                w_xy=config.astar_w_xy,
                w_z=config.astar_w_z,
                c_min=config.astar_c_min,
                c_max=c_max,
            )
        except NoPathError as err:
            last_error = err
    raise last_error


def make_denoiser(config, skeleton, schedule):
    from .motion import window

    kind = config.denoiser_kind
    if kind in ("replay", "constant", "linear"):
        if not config.denoiser_clip:
            raise ValueError(f"denoiser kind '{kind}' requires denoiser_clip")
        clip = load_clip(config.denoiser_clip)
        if kind == "replay":
            return diffusion.ReplayDenoiser(clip)
        if kind == "constant":
            return diffusion.ConstantDenoiser(diffusion.encode_clip(window(clip, 0)))
        windows = [
            window(clip, s) for s in range(0, clip.num_frames - 15 + 1, 5)
        ]
        contexts = [diffusion.GenerationContext() for _ in windows]
        rng = stream(config.seed, "linear-fit")
        return diffusion.LinearDenoiser.fit(windows, contexts, schedule, rng)
    if kind == "exec":
        if not config.denoiser_cmd:
            raise ValueError("denoiser kind 'exec' requires denoiser_cmd")
        return diffusion.ExecDenoiser(config.denoiser_cmd, default_skeleton().num_joints)
    raise ValueError(f"unknown denoiser kind: {kind}")


def generate_with_seeds(denoiser, grid, path, skeleton, gen_config, schedule, seeds, threads=1):
    """Generate one motion per seed, optionally on a thread pool.

    Output order follows the seed list regardless of thread count.
    """
    def run(seed):
        return diffusion._generate_one(
            denoiser, grid, path, skeleton, gen_config, schedule,
            np.random.default_rng(seed), seed,
        )

    if threads <= 1:
        return [run(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, seeds))


def clip_metrics(clip, skeleton, grid, path=None, reached=None, jerk_max=11666.0, reach_radius=0.5):
    """Quality metrics of one clip: FWD, TPL, TCL, %HJF plus per-frame means."""
    tpl = losses.penetration_loss(clip, skeleton, grid)
    tcl = losses.contact_loss(clip, skeleton, grid)
    hjf = (
        losses.high_jerk_frame_fraction(clip, jerk_max) * 100.0
        if clip.num_frames >= 4
        else 0.0
    )
    fwd = float("nan")
    if path is not None and path.waypoints:
        end = path.waypoints[-1].pos
        root = clip.root_pos[-1]
        fwd = float(np.hypot(root[0] - end[0], root[1] - end[1]))
        if reached is None:
            reached = fwd <= reach_radius
    n = clip.num_frames
    return {
        "frames": n,
        "reached": bool(reached) if reached is not None else None,
        "FWD": fwd,
        "TPL": tpl,
        "TCL": tcl,
        "%HJF": hjf,
        "TPL_per_frame": tpl / n,
        "TCL_per_frame": tcl / n,
        "selection_score": tpl + tcl + (0.0 if reached else losses.INCOMPLETE_PENALTY)
        if reached is not None
        else tpl + tcl,
    }


_METRIC_COLUMNS = [
    "clip", "frames", "reached", "FWD", "TPL", "TCL", "%HJF",
    "TPL_per_frame", "TCL_per_frame", "selection_score",
]


def metrics_to_csv(rows):
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=_METRIC_COLUMNS)
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k, "") for k in _METRIC_COLUMNS})
    return out.getvalue()


def aggregate_metrics(rows):
    """Mean of each numeric metric over rows (NaN-skipping)."""
    agg = {"clip": "mean"}
    for key in ("FWD", "TPL", "TCL", "%HJF", "TPL_per_frame", "TCL_per_frame", "selection_score"):
        vals = [r[key] for r in rows if isinstance(r.get(key), float) and np.isfinite(r[key])]
        agg[key] = float(np.mean(vals)) if vals else float("nan")
    return agg


def cmd_metrics(clip_paths, grid, skeleton, path=None, jerk_max=11666.0):
    """Metric rows for a set of clip files against one terrain and path."""
    rows = []
    for cp in clip_paths:
        clip = load_clip(cp)
        row = {"clip": os.path.basename(cp)}
        row.update(clip_metrics(clip, skeleton, grid, path, jerk_max=jerk_max))
        rows.append(row)
    rows.append(aggregate_metrics(rows))
    return rows


def cmd_pipeline(config):
    """Run the full pipeline, writing every artifact into config.out_dir.

    Reruns with identical config and seed produce byte-identical artifacts
    and manifest regardless of thread count.
    """
    run_dir = config.out_dir
    os.makedirs(run_dir, exist_ok=True)
    os.makedirs(os.path.join(run_dir, "clips"), exist_ok=True)
    config_art = config.to_dict()
    # execution details don't belong in the hashed configuration artifact:
    # outputs must be identical across thread counts
    config_art.pop("threads")
    config_art.pop("out_dir")
    dump_json(config_art, os.path.join(run_dir, "config.json"))

    skeleton = default_skeleton()
    grid = _gen_terrain(config)
    save_terrain(grid, os.path.join(run_dir, "terrain.json"))
    save_terrain_obj(grid, os.path.join(run_dir, "terrain.obj"))

    path = plan_on_terrain(grid, config)
    save_path(path, os.path.join(run_dir, "path.json"))

    schedule = diffusion.make_schedule(config.diffusion_K, config.beta_start, config.beta_end)
    denoiser = make_denoiser(config, skeleton, schedule)
    gen_config = diffusion.GenerationConfig(
        blend_s=config.blend_s,
        ddim_stride=config.ddim_stride,
        batch=config.batch,
        max_seconds=config.max_seconds,
        anchor_height=config.anchor_height,
        reach_radius=config.reach_radius,
    )
    gen_rng = stream(config.seed, "generate")
    seeds = [int(s) for s in gen_rng.integers(0, 2**63 - 1, size=config.batch)]
    results = generate_with_seeds(
        denoiser, grid, path, skeleton, gen_config, schedule, seeds, config.threads
    )

    rows = []
    for i, res in enumerate(results):
        res.clip.terrain_id = "terrain.json"
        res.clip.skeleton_id = skeleton.name
        name = f"{i:03d}.json"
        save_clip(res.clip, os.path.join(run_dir, "clips", name))
        row = {"clip": f"clips/{name}"}
        row.update(
            clip_metrics(
                res.clip, skeleton, grid, path, reached=res.reached_end,
                jerk_max=config.jerk_max_metric, reach_radius=config.reach_radius,
            )
        )
        rows.append(row)

    best_idx, scores = diffusion.select_best(results, skeleton, grid)
    best = results[best_idx]
    save_clip(best.clip, os.path.join(run_dir, "best.json"))

    opt_config = OptimizeConfig(
        w_reg=config.opt_w_reg,
        w_pen=config.opt_w_pen,
        w_contact=config.opt_w_contact,
        w_jerk=config.opt_w_jerk,
        iters=config.opt_iters,
        lr=config.opt_lr,
        jerk_max=config.opt_jerk_max,
    )
    best_opt, report = optimize_motion(best.clip, skeleton, grid, opt_config)
    save_clip(best_opt, os.path.join(run_dir, "best_opt.json"))
    dump_json(
        {
            "iterations_run": report.iterations_run,
            "loss_trace": [float(v) for v in report.loss_trace],
            "final": report.final.as_dict(),
            "best_index": best_idx,
            "selection_scores": [float(s) for s in scores],
        },
        os.path.join(run_dir, "opt_report.json"),
    )

    for name, clip, reached in (("best.json", best.clip, best.reached_end), ("best_opt.json", best_opt, best.reached_end)):
        row = {"clip": name}
        row.update(
            clip_metrics(
                clip, skeleton, grid, path, reached=reached,
                jerk_max=config.jerk_max_metric, reach_radius=config.reach_radius,
            )
        )
        rows.append(row)
    rows.append(aggregate_metrics(rows[: config.batch]))
    with open(os.path.join(run_dir, "metrics.csv"), "w", newline="") as f:
        f.write(metrics_to_csv(rows))

    files = {}
    for dirpath, _, filenames in os.walk(run_dir):
        for fn in sorted(filenames):
            full = os.path.join(dirpath, fn)
            rel = os.path.relpath(full, run_dir)
            if rel == "manifest.json":
                continue
            files[rel.replace(os.sep, "/")] = _sha256(full)
    dump_json({"seed": config.seed, "files": files}, os.path.join(run_dir, "manifest.json"))
    return run_dir
