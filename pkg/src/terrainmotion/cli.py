"""Command-line interface.

Exit codes: 0 ok, 2 configuration error, 3 no path between the requested
endpoints, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import os
import sys

import numpy as np

from . import diffusion, losses, pipeline, rotmath, tracking
from .motion import (
    default_skeleton,
    load_clip,
    load_skeleton,
    save_clip,
)
from .navgraph import (
    NavGraphParams,
    NoPathError,
    astar_plan,
    build_graph,
    load_path,
    save_path,
)
from .optimize import NumericError, OptimizeConfig, optimize_motion
from .pipeline import PipelineConfig, cmd_pipeline, dump_json
from .terrain import (
    augment_with_boxes,
    compute_noninterference_bounds,
    gen_random_boxes,
    gen_random_walk,
    load_terrain,
    save_terrain,
    save_terrain_csv,
    save_terrain_obj,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_PATH = 3
EXIT_NUMERIC = 4


def _common(parser):
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--deterministic", action="store_true", help="disable stochastic edge costs")


def _skeleton(args):
    if getattr(args, "skeleton", None):
        return load_skeleton(args.skeleton)
    return default_skeleton()


def _do_gen_terrain(args):
    if args.kind == "random_boxes":
        grid = gen_random_boxes(
            grid=tuple(args.grid),
            num_boxes=args.num_boxes,
            size_range=tuple(args.size_range),
            height_range=tuple(args.height_range),
            seed=args.seed,
        )
    elif args.kind == "random_walk":
        grid = gen_random_walk(
            grid=tuple(args.grid),
            num_paths=args.num_paths,
            height_range=tuple(args.height_range),
            seed=args.seed,
        )
    else:
        raise ValueError(f"unknown terrain kind: {args.kind}")
    save_terrain(grid, args.out)
    if args.obj:
        save_terrain_obj(grid, args.obj)
    if args.csv:
        save_terrain_csv(grid, args.csv)
    return EXIT_OK


def _do_augment_terrain(args):
    grid = load_terrain(args.terrain)
    clip = load_clip(args.clip)
    skeleton = _skeleton(args)
    bounds = compute_noninterference_bounds(clip, skeleton, grid)
    out = augment_with_boxes(grid, bounds, num_boxes=args.num_boxes, seed=args.seed)
    save_terrain(out, args.out)
    return EXIT_OK


def _nav_params(args):
    return NavGraphParams(
        max_walk_dh=args.max_walk_dh,
        jump_radius=args.jump_radius,
        jump_dh=tuple(args.jump_dh),
        cliff_drop=args.cliff_drop,
    )


def _do_plan_path(args):
    grid = load_terrain(args.terrain)
    graph = build_graph(grid, _nav_params(args))
    c_max = 0.0 if args.deterministic else args.c_max
    path = astar_plan(
        graph,
        tuple(args.start),
        tuple(args.goal),
        seed=args.seed,
        w_xy=args.w_xy,
        w_z=args.w_z,
        c_min=args.c_min,
        c_max=c_max,
    )
    save_path(path, args.out)
    return EXIT_OK


def _parse_denoiser(spec, args, skeleton, schedule):
    if spec.startswith("exec:"):
        return diffusion.ExecDenoiser(spec[5:], skeleton.num_joints)
    if spec in ("constant", "replay", "linear"):
        if not args.replay_clip:
            raise ValueError(f"denoiser '{spec}' requires --replay-clip")
        cfg = PipelineConfig(
            denoiser_kind=spec, denoiser_clip=args.replay_clip, seed=args.seed
        )
        return pipeline.make_denoiser(cfg, skeleton, schedule)
    raise ValueError(f"unknown denoiser: {spec}")


def _do_generate(args):
    grid = load_terrain(args.terrain)
    path = load_path(args.path)
    skeleton = _skeleton(args)
    schedule = diffusion.make_schedule(args.K)
    denoiser = _parse_denoiser(args.denoiser, args, skeleton, schedule)
    config = diffusion.GenerationConfig(
        blend_s=args.s,
        ddim_stride=args.stride,
        batch=args.batch,
        max_seconds=args.max_seconds,
    )
    rng = pipeline.stream(args.seed, "generate")
    seeds = [int(s) for s in rng.integers(0, 2**63 - 1, size=args.batch)]
    results = pipeline.generate_with_seeds(
        denoiser, grid, path, skeleton, config, schedule, seeds, args.threads
    )
    os.makedirs(args.out_dir, exist_ok=True)
    for i, res in enumerate(results):
        res.clip.skeleton_id = skeleton.name
        save_clip(res.clip, os.path.join(args.out_dir, f"{i:03d}.json"))
    best, scores = diffusion.select_best(results, skeleton, grid)
    dump_json(
        {"best_index": best, "selection_scores": scores},
        os.path.join(args.out_dir, "selection.json"),
    )
    return EXIT_OK


def _do_optimize_motion(args):
    clip = load_clip(getattr(args, "in"))
    grid = load_terrain(args.terrain)
    skeleton = _skeleton(args)
    config = OptimizeConfig(
        w_reg=args.w_reg,
        w_pen=args.w_pen,
        w_contact=args.w_contact,
        w_jerk=args.w_jerk,
        iters=args.iters,
        lr=args.lr,
        jerk_max=args.jerk_max,
    )
    out, report = optimize_motion(clip, skeleton, grid, config)
    save_clip(out, args.out)
    if args.report:
        dump_json(
            {
                "iterations_run": report.iterations_run,
                "loss_trace": [float(v) for v in report.loss_trace],
                "final": report.final.as_dict(),
            },
            args.report,
        )
    return EXIT_OK


def _do_eval_motion(args):
    grid = load_terrain(args.terrain)
    skeleton = _skeleton(args)
    path = load_path(args.path) if args.path else None
    if args.clip:
        clip_paths = [args.clip]
    elif args.clips_dir:
        clip_paths = sorted(glob.glob(os.path.join(args.clips_dir, "*.json")))
        if not clip_paths:
            raise ValueError(f"no clips found in {args.clips_dir}")
    else:
        raise ValueError("need --clip or --clips-dir")
    rows = pipeline.cmd_metrics(clip_paths, grid, skeleton, path, jerk_max=args.jerk_max)
    if args.json_out:
        clip = load_clip(clip_paths[0])
        breakdown = losses.evaluate_clip(clip, skeleton, grid, jerk_max=args.jerk_max)
        dump_json(breakdown.as_dict(), args.json_out)
    csv_text = pipeline.metrics_to_csv(rows)
    if args.csv_out:
        with open(args.csv_out, "w", newline="") as f:
            f.write(csv_text)
    else:
        sys.stdout.write(csv_text)
    return EXIT_OK


def _clip_states(clip, skeleton):
    """Per-frame CharacterStates of a clip, velocities by finite differences."""
    fps = clip.fps
    root_vel = rotmath.finite_diff(clip.root_pos, fps, 1)
    q = rotmath.quat_from_expmap(clip.root_rot)
    angvel = rotmath.quat_diff(q[1:], q[:-1]) * fps
    angvel = np.concatenate([angvel, angvel[-1:]], axis=0)
    jq = rotmath.quat_from_expmap(clip.joint_rot)
    jvel = rotmath.quat_diff(jq[1:], jq[:-1]) * fps
    jvel = np.concatenate([jvel, jvel[-1:]], axis=0)
    key = clip.joint_pos[:, list(skeleton.key_bodies)]
    states = []
    for i in range(clip.num_frames):
        states.append(
            tracking.CharacterState(
                root_pos=clip.root_pos[i],
                root_rot=clip.root_rot[i],
                root_vel=root_vel[i],
                root_angvel=angvel[i],
                joint_rot=clip.joint_rot[i],
                joint_vel=jvel[i],
                key_pos=key[i],
                contacts=(clip.contacts[i] >= 0.5).astype(float),
            )
        )
    return states


def _do_reward_eval(args):
    char = load_clip(args.char)
    ref = load_clip(args.ref)
    skeleton = _skeleton(args)
    if char.num_frames != ref.num_frames:
        raise ValueError("clips have different lengths")
    cs = _clip_states(char, skeleton)
    rs = _clip_states(ref, skeleton)
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["frame", "pose", "pose_velocity", "root", "root_velocity", "key", "contact", "total"]
        )
        for i, (c, r) in enumerate(zip(cs, rs)):
            b = tracking.reward_total(c, r, skeleton.joint_weights)
            writer.writerow(
                [i, b.pose, b.pose_velocity, b.root, b.root_velocity, b.key, b.contact, b.total]
            )
    return EXIT_OK


def _do_sampler_demo(args):
    with open(args.stats) as f:
        raw = json.load(f)
    stats = [
        tracking.FailureStats(
            attempts=s.get("attempts", 0),
            failures=s.get("failures", 0),
            rate=s["rate"],
        )
        for s in raw
    ]
    probs = tracking.sampling_weights(stats)
    rng = np.random.default_rng(args.seed)
    draws = tracking.prioritized_sample(stats, rng, args.draws)
    counts = np.bincount(draws, minlength=len(stats))
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["clip", "rate", "weight", "probability", "empirical"])
        for i, s in enumerate(stats):
            writer.writerow([i, s.rate, s.weight, probs[i], counts[i] / args.draws])
    return EXIT_OK


def _do_pipeline(args):
    if args.config:
        with open(args.config) as f:
            config = PipelineConfig.from_dict(json.load(f))
    else:
        config = PipelineConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.out:
        config.out_dir = args.out
    if args.threads is not None:
        config.threads = args.threads
    if args.deterministic:
        config.deterministic = True
    if args.denoiser_clip:
        config.denoiser_clip = args.denoiser_clip
    run_dir = cmd_pipeline(config)
    print(run_dir)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="terrainmotion",
        description="Terrain-traversal motion pipeline: terrain, paths, "
        "generation, correction, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-terrain", help="generate a terrain file")
    _common(p)
    p.add_argument("--kind", default="random_boxes", choices=["random_boxes", "random_walk"])
    p.add_argument("--grid", type=int, nargs=2, default=[16, 16])
    p.add_argument("--num-boxes", type=int, default=10)
    p.add_argument("--num-paths", type=int, default=10)
    p.add_argument("--size-range", type=int, nargs=2, default=[5, 10])
    p.add_argument("--height-range", type=float, nargs=2, default=[-2.0, 2.0])
    p.add_argument("--out", required=True)
    p.add_argument("--obj")
    p.add_argument("--csv")
    p.set_defaults(fn=_do_gen_terrain)

    p = sub.add_parser("augment-terrain", help="non-interfering terrain augmentation")
    _common(p)
    p.add_argument("--terrain", required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--skeleton")
    p.add_argument("--num-boxes", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_do_augment_terrain)

    p = sub.add_parser("plan-path", help="A* path between two cells")
    _common(p)
    p.add_argument("--terrain", required=True)
    p.add_argument("--start", type=int, nargs=2, required=True)
    p.add_argument("--goal", type=int, nargs=2, required=True)
    p.add_argument("--max-walk-dh", type=float, default=2.1)
    p.add_argument("--jump-radius", type=float, default=2.4)
    p.add_argument("--jump-dh", type=float, nargs=2, default=[-2.1, 1.0])
    p.add_argument("--cliff-drop", type=float, default=1.0)
    p.add_argument("--w-xy", type=float, default=1.0)
    p.add_argument("--w-z", type=float, default=0.15)
    p.add_argument("--c-min", type=float, default=0.0)
    p.add_argument("--c-max", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_do_plan_path)

    p = sub.add_parser("generate", help="autoregressive motion generation along a path")
    _common(p)
    p.add_argument("--terrain", required=True)
    p.add_argument("--path", required=True)
    p.add_argument("--denoiser", required=True, help="constant|replay|linear|exec:<cmd>")
    p.add_argument("--replay-clip")
    p.add_argument("--skeleton")
    p.add_argument("--s", type=float, default=0.65)
    p.add_argument("--stride", type=int, default=5)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--K", type=int, default=1000)
    p.add_argument("--max-seconds", type=float, default=10.0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=_do_generate)

    p = sub.add_parser("optimize-motion", help="kinematic motion correction")
    _common(p)
    p.add_argument("--in", required=True)
    p.add_argument("--terrain", required=True)
    p.add_argument("--skeleton")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--w-reg", type=float, default=1.0)
    p.add_argument("--w-pen", type=float, default=1000.0)
    p.add_argument("--w-contact", type=float, default=1000.0)
    p.add_argument("--w-jerk", type=float, default=1000.0)
    p.add_argument("--iters", type=int, default=3000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--jerk-max", type=float, default=1000.0)
    p.set_defaults(fn=_do_optimize_motion)

    p = sub.add_parser("eval-motion", help="per-clip quality metrics")
    _common(p)
    p.add_argument("--clip")
    p.add_argument("--clips-dir")
    p.add_argument("--terrain", required=True)
    p.add_argument("--path")
    p.add_argument("--skeleton")
    p.add_argument("--jerk-max", type=float, default=losses.JERK_MAX_METRIC)
    p.add_argument("--json-out")
    p.add_argument("--csv-out")
    p.set_defaults(fn=_do_eval_motion)

    p = sub.add_parser("reward-eval", help="per-frame tracking rewards of a clip pair")
    _common(p)
    p.add_argument("--char", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--skeleton")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_do_reward_eval)

    p = sub.add_parser("sampler-demo", help="empirical prioritized-sampling frequencies")
    _common(p)
    p.add_argument("--stats", required=True)
    p.add_argument("--draws", type=int, default=100000)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_do_sampler_demo)

    p = sub.add_parser("pipeline", help="full generation pipeline")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--threads", type=int)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--denoiser-clip")
    p.set_defaults(fn=_do_pipeline)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_CONFIG if err.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except NoPathError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NO_PATH
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
