"""Diffusion sampling math with a pluggable denoiser.

The denoiser is an opaque callable ``(k, x_k, context) -> x0_hat`` operating
on flattened motion vectors; nothing here trains a network. Shipped
implementations: a constant oracle, a recorded-clip oracle, a closed-form
linear baseline, and a subprocess bridge for externally trained models.

Flattened motion layout, per frame:
``[root_pos(3), root_rot(3), joint_rot(3J), joint_pos(3J), contacts(J)]``,
frames concatenated in order. A 15-frame window with J joints flattens to
``15 * (6 + 7J)`` values.
"""

from __future__ import annotations

import os
import subprocess
import tempfile
from dataclasses import dataclass, field, replace

import numpy as np

from . import losses as losses_mod
from .motion import (
    FPS_DEFAULT,
    WINDOW_LEN,
    WINDOW_PAST,
    MotionClip,
    anchor_local_frame,
    transform_clip,
    window,
)
from .rotmath import LocalFrame
from .terrain import (
    HEIGHTMAP_SIZE,
    LocalHeightmap,
    TerrainGrid,
    gen_random_boxes,
    sample_local_heightmap,
)

DEFAULT_K = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


# ---------------------------------------------------------------------------
# Noise schedule and elementary steps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSchedule:
    """Diffusion coefficients: betas and cumulative alpha products.

    ``alpha_bar`` has K+1 entries with ``alpha_bar[0] == 1`` and is strictly
    decreasing.
    """

    beta: np.ndarray
    alpha_bar: np.ndarray

    @property
    def K(self):
        return len(self.beta)


def make_schedule(K=DEFAULT_K, beta_start=DEFAULT_BETA_START, beta_end=DEFAULT_BETA_END):
    """Linear beta schedule with cumulative-product alpha_bar."""
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    if K < 1:
        raise ValueError("K must be positive")
    beta = np.linspace(beta_start, beta_end, K)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - beta)])
    return NoiseSchedule(beta=beta, alpha_bar=alpha_bar)


def q_sample(x0, k, schedule, rng):
    """Forward noising: sqrt(a_k) x0 + sqrt(1 - a_k) eps."""
    if not 0 <= k <= schedule.K:
        raise ValueError(f"k={k} outside [0, {schedule.K}]")
    x0 = np.asarray(x0, dtype=np.float64)
    ab = schedule.alpha_bar[k]
    eps = rng.standard_normal(x0.shape)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def ddim_step(x_k, x0_hat, k, d, schedule):
    """Deterministic DDIM update from level k to k-d for an x0-predicting
    denoiser. With k-d == 0 the result is exactly x0_hat."""
    if k < 1:
        raise ValueError("no step below zero")
    if d < 1 or k - d < 0:
        raise ValueError(f"invalid stride d={d} at k={k}")
    ab_k = schedule.alpha_bar[k]
    ab_kd = schedule.alpha_bar[k - d]
    denom = np.sqrt(1.0 - ab_k)
    coef_x0 = np.sqrt(ab_kd) - np.sqrt(ab_k) * np.sqrt(1.0 - ab_kd) / denom
    coef_xk = np.sqrt(1.0 - ab_kd) / denom
    return coef_x0 * np.asarray(x0_hat) + coef_xk * np.asarray(x_k)


# ---------------------------------------------------------------------------
# Motion vector encoding
# ---------------------------------------------------------------------------


def frame_dim(num_joints):
    return 6 + 7 * num_joints


def encode_clip(clip):
    """Flatten a clip into the documented per-frame layout."""
    n, j = clip.num_frames, clip.num_joints
    out = np.empty((n, frame_dim(j)))
    out[:, 0:3] = clip.root_pos
    out[:, 3:6] = clip.root_rot
    out[:, 6 : 6 + 3 * j] = clip.joint_rot.reshape(n, 3 * j)
    out[:, 6 + 3 * j : 6 + 6 * j] = clip.joint_pos.reshape(n, 3 * j)
    out[:, 6 + 6 * j :] = clip.contacts
    return out.reshape(-1)


def decode_vector(x, num_joints, fps=FPS_DEFAULT):
    """Inverse of encode_clip; contacts are clamped into [0, 1]."""
    j = num_joints
    fd = frame_dim(j)
    x = np.asarray(x, dtype=np.float64)
    if x.size % fd != 0:
        raise ValueError("vector length is not a multiple of the frame dim")
    frames = x.reshape(-1, fd)
    n = len(frames)
    return MotionClip(
        fps=fps,
        root_pos=frames[:, 0:3].copy(),
        root_rot=frames[:, 3:6].copy(),
        joint_rot=frames[:, 6 : 6 + 3 * j].reshape(n, j, 3).copy(),
        joint_pos=frames[:, 6 + 3 * j : 6 + 6 * j].reshape(n, j, 3).copy(),
        contacts=np.clip(frames[:, 6 + 6 * j :], 0.0, 1.0),
    )


# ---------------------------------------------------------------------------
# Generation context and denoisers
# ---------------------------------------------------------------------------


@dataclass
class GenerationContext:
    """Conditioning for one window: local heightmap, target direction and
    (optionally) the two most recent frames in canonical coordinates."""

    heightmap: LocalHeightmap = None
    target_dir: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0]))
    prev_frames: MotionClip = None
    mask_prev: bool = False

    def __post_init__(self):
        self.target_dir = np.asarray(self.target_dir, dtype=np.float64).reshape(2)
        if self.prev_frames is not None and self.prev_frames.num_frames != WINDOW_PAST:
            raise ValueError(f"prev_frames must hold {WINDOW_PAST} frames")


@dataclass
class GenerationConfig:
    blend_s: float = 0.65
    ddim_stride: int = 5
    batch: int = 32
    max_seconds: float = 10.0
    anchor_height: float = 0.9     # root height above a path node
    reach_radius: float = 0.5      # m, horizontal waypoint switch distance

    def __post_init__(self):
        if not 0.0 <= self.blend_s <= 1.0:
            raise ValueError("blend_s must lie in [0, 1]")
        if self.ddim_stride < 1 or self.batch < 1:
            raise ValueError("invalid generation config")


class ConstantDenoiser:
    """Oracle that always predicts one fixed motion vector."""

    def __init__(self, x0):
        self.x0 = np.asarray(x0, dtype=np.float64)

    def __call__(self, k, x_k, context):
        if np.shape(x_k) != self.x0.shape:
            raise ValueError("shape mismatch")
        return self.x0.copy()


class ReplayDenoiser:
    """Oracle that answers with the stored clip window matching the context.

    Without previous frames it returns the first window; otherwise it
    returns the window whose two past frames are nearest (in the flattened
    encoding) to the context's previous frames. Deterministic for fixed
    inputs.
    """

    def __init__(self, clip):
        if clip.num_frames < WINDOW_LEN:
            raise ValueError(f"replay clip needs at least {WINDOW_LEN} frames")
        self.windows = np.stack(
            [encode_clip(window(clip, s)) for s in range(clip.num_frames - WINDOW_LEN + 1)]
        )
        self._past = self.windows[:, : WINDOW_PAST * frame_dim(clip.num_joints)]
        self.num_joints = clip.num_joints

    def __call__(self, k, x_k, context):
        if context.prev_frames is None:
            return self.windows[0].copy()
        key = encode_clip(context.prev_frames)
        d2 = np.sum((self._past - key[None, :]) ** 2, axis=1)
        return self.windows[int(np.argmin(d2))].copy()


class LinearDenoiser:
    """Closed-form ridge-regression baseline mapping noisy windows to clean
    ones; meant for end-to-end smoke tests, not quality."""

    def __init__(self, weights, num_joints, schedule):
        self.weights = weights
        self.num_joints = num_joints
        self.schedule = schedule

    @staticmethod
    def _features(k, x_k, context, schedule):
        x_k = np.asarray(x_k, dtype=np.float64)
        fd = len(x_k) // WINDOW_LEN
        hm = (
            context.heightmap.values
            if context.heightmap is not None
            else np.zeros((HEIGHTMAP_SIZE, HEIGHTMAP_SIZE))
        )
        pooled = hm[::6, ::6].reshape(-1)
        prev = np.zeros(WINDOW_PAST * fd)
        if context.prev_frames is not None and not context.mask_prev:
            prev = encode_clip(context.prev_frames)
        ab = schedule.alpha_bar[k]
        return np.concatenate([[1.0, ab], context.target_dir, pooled, prev, x_k])

    @classmethod
    def fit(cls, windows, contexts, schedule, rng, lam=1e-3, samples_per_window=4):
        """Ridge-fit the map (features of noisy window) -> clean window."""
        num_joints = windows[0].num_joints
        rows, targets = [], []
        for win, ctx in zip(windows, contexts):
            x0 = encode_clip(win)
            for _ in range(samples_per_window):
                k = int(rng.integers(1, schedule.K + 1))
                x_k = q_sample(x0, k, schedule, rng)
                rows.append(cls._features(k, x_k, ctx, schedule))
                targets.append(x0)
        a = np.stack(rows)
        b = np.stack(targets)
        ata = a.T @ a + lam * np.eye(a.shape[1])
        weights = np.linalg.solve(ata, a.T @ b)
        return cls(weights=weights, num_joints=num_joints, schedule=schedule)

    def __call__(self, k, x_k, context):
        feats = self._features(k, x_k, context, self.schedule)
        return feats @ self.weights


class ExecDenoiser:
    """Subprocess/file denoiser bridge.

    Each call writes a request record and invokes ``cmd request response``;
    the response file must contain the predicted clean vector. All values
    are little-endian float64. Request layout, by offset:

    ====== ===========================================
    0      diffusion step k
    1      D, the motion vector length (15 * (6+7J))
    2      J, joint count
    3      mask_prev flag (0/1)
    4      has_prev flag (0/1)
    5-6    target direction (2)
    7-967  heightmap, 31x31 row-major (961)
    968-   previous two frames, encoded (2*(6+7J)); zeros if absent
    then   x_k (D values)
    ====== ===========================================

    Response: D float64 values (x0_hat).
    """

    def __init__(self, cmd, num_joints):
        self.cmd = cmd if isinstance(cmd, list) else cmd.split()
        self.num_joints = num_joints

    def __call__(self, k, x_k, context):
        x_k = np.asarray(x_k, dtype=np.float64)
        j = self.num_joints
        fd = frame_dim(j)
        hm = (
            context.heightmap.values.reshape(-1)
            if context.heightmap is not None
            else np.zeros(HEIGHTMAP_SIZE * HEIGHTMAP_SIZE)
        )
        prev = np.zeros(WINDOW_PAST * fd)
        has_prev = 0.0
        if context.prev_frames is not None:
            prev = encode_clip(context.prev_frames)
            has_prev = 1.0
        rec = np.concatenate(
            [
                [float(k), float(len(x_k)), float(j), float(bool(context.mask_prev)), has_prev],
                context.target_dir,
                hm,
                prev,
                x_k,
            ]
        ).astype("<f8")
        with tempfile.TemporaryDirectory() as tmp:
            req = os.path.join(tmp, "request.bin")
            resp = os.path.join(tmp, "response.bin")
            rec.tofile(req)
            subprocess.run(self.cmd + [req, resp], check=True)
            out = np.fromfile(resp, dtype="<f8")
        if out.size != x_k.size:
            raise ValueError(
                f"denoiser response has {out.size} values, expected {x_k.size}"
            )
        return out


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def blend_denoise(denoiser, k, x_k, context, s):
    """Blend the denoiser's past-masked and past-conditioned predictions:
    ``s * masked + (1 - s) * conditioned``."""
    if not 0.0 <= s <= 1.0:
        raise ValueError("blend coefficient must lie in [0, 1]")
    masked_ctx = replace(context, mask_prev=True)
    if s == 1.0:
        return np.asarray(denoiser(k, x_k, masked_ctx), dtype=np.float64)
    if context.prev_frames is None:
        raise ValueError("conditional branch undefined without prev_frames")
    cond_ctx = replace(context, mask_prev=False)
    cond = np.asarray(denoiser(k, x_k, cond_ctx), dtype=np.float64)
    if s == 0.0:
        return cond
    masked = np.asarray(denoiser(k, x_k, masked_ctx), dtype=np.float64)
    return s * masked + (1.0 - s) * cond


def ddim_sample(denoiser, context, schedule, config, rng, num_joints, fps=FPS_DEFAULT):
    """Sample one 15-frame window by DDIM from pure noise.

    When previous frames are given they replace the first two frames of
    every prediction and of the decoded output (bit-exactly).
    """
    d_total = WINDOW_LEN * frame_dim(num_joints)
    x = rng.standard_normal(d_total)
    prev_block = None
    if context.prev_frames is not None:
        prev_block = encode_clip(context.prev_frames)

    k = schedule.K
    while k > 0:
        d = min(config.ddim_stride, k)
        if context.prev_frames is None:
            x0_hat = np.asarray(
                denoiser(k, x, replace(context, mask_prev=True)), dtype=np.float64
            )
        else:
            x0_hat = blend_denoise(denoiser, k, x, context, config.blend_s)
        if prev_block is not None:
            x0_hat[: len(prev_block)] = prev_block
        x = ddim_step(x, x0_hat, k, d, schedule)
        k -= d

    clip = decode_vector(x, num_joints, fps)
    if context.prev_frames is not None:
        pf = context.prev_frames
        clip.root_pos[:WINDOW_PAST] = pf.root_pos
        clip.root_rot[:WINDOW_PAST] = pf.root_rot
        clip.joint_rot[:WINDOW_PAST] = pf.joint_rot
        clip.joint_pos[:WINDOW_PAST] = pf.joint_pos
        clip.contacts[:WINDOW_PAST] = pf.contacts
    return clip


@dataclass
class GeneratedMotion:
    clip: MotionClip
    reached_end: bool
    rng_seed: int


def _target_direction(origin, heading_frame, waypoint):
    v = np.array([waypoint[0] - origin[0], waypoint[1] - origin[1], 0.0])
    n = np.hypot(v[0], v[1])
    if n < 1e-9:
        return np.array([1.0, 0.0])
    v /= n
    c, s = np.cos(-heading_frame.heading), np.sin(-heading_frame.heading)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def _generate_one(denoiser, terrain_grid, path, skeleton, config, schedule, rng, seed):
    wp = [w.pos for w in path.waypoints]
    start = wp[0]
    first_target = wp[min(1, len(wp) - 1)]
    heading = np.arctan2(first_target[1] - start[1], first_target[0] - start[0]) if len(wp) > 1 else 0.0
    anchor = LocalFrame(
        origin=np.array([start[0], start[1], start[2] + config.anchor_height]),
        heading=float(heading),
    )
    wp_idx = min(1, len(wp) - 1)

    ctx = GenerationContext(
        heightmap=sample_local_heightmap(terrain_grid, anchor),
        target_dir=_target_direction(anchor.origin, anchor, wp[wp_idx]),
        prev_frames=None,
    )
    win = ddim_sample(denoiser, ctx, schedule, config, rng, skeleton.num_joints)
    world = transform_clip(win, anchor, to_local=False)

    def advance(root):
        nonlocal wp_idx
        while wp_idx < len(wp) - 1 and np.hypot(
            root[0] - wp[wp_idx][0], root[1] - wp[wp_idx][1]
        ) <= config.reach_radius:
            wp_idx += 1

    def reached(root):
        return (
            np.hypot(root[0] - wp[-1][0], root[1] - wp[-1][1]) <= config.reach_radius
        )

    advance(world.root_pos[-1])
    done = reached(world.root_pos[-1])
    max_frames = int(round(config.max_seconds * world.fps))
    while not done and world.num_frames + (WINDOW_LEN - WINDOW_PAST) <= max_frames:
        last2 = world.slice(world.num_frames - WINDOW_PAST, world.num_frames)
        anchor = anchor_local_frame(last2, WINDOW_PAST - 1)
        prev = transform_clip(last2, anchor, to_local=True)
        ctx = GenerationContext(
            heightmap=sample_local_heightmap(terrain_grid, anchor),
            target_dir=_target_direction(anchor.origin, anchor, wp[wp_idx]),
            prev_frames=prev,
        )
        win = ddim_sample(denoiser, ctx, schedule, config, rng, skeleton.num_joints)
        new_world = transform_clip(win, anchor, to_local=False)
        # seam frames stay bit-identical to the frames they extend
        tail = new_world.slice(WINDOW_PAST, WINDOW_LEN)
        world = MotionClip(
            fps=world.fps,
            root_pos=np.concatenate([world.root_pos, tail.root_pos]),
            root_rot=np.concatenate([world.root_rot, tail.root_rot]),
            joint_rot=np.concatenate([world.joint_rot, tail.joint_rot]),
            joint_pos=np.concatenate([world.joint_pos, tail.joint_pos]),
            contacts=np.concatenate([world.contacts, tail.contacts]),
            skeleton_id=world.skeleton_id,
            terrain_id=world.terrain_id,
        )
        advance(world.root_pos[-1])
        done = reached(world.root_pos[-1])
    return GeneratedMotion(clip=world, reached_end=bool(done), rng_seed=seed)


def autoregressive_generate(denoiser, terrain_grid, path, skeleton, config, rng, schedule=None):
    """Generate a batch of long motions along a path.

    Each batch element consumes its own independently seeded stream, so
    results do not depend on evaluation order.
    """
    if not path.waypoints:
        raise ValueError("path is empty")
    if schedule is None:
        schedule = make_schedule()
    seeds = [int(s) for s in rng.integers(0, 2**63 - 1, size=config.batch)]
    return [
        _generate_one(
            denoiser,
            terrain_grid,
            path,
            skeleton,
            config,
            schedule,
            np.random.default_rng(seed),
            seed,
        )
        for seed in seeds
    ]


def select_best(results, skeleton, terrain_grid):
    """Pick the generated motion with the lowest selection score."""
    scores = [
        losses_mod.selection_score(r.clip, skeleton, terrain_grid, r.reached_end)
        for r in results
    ]
    best = int(np.argmin(scores))
    return best, scores


# ---------------------------------------------------------------------------
# Composite training loss for an arbitrary denoiser
# ---------------------------------------------------------------------------


def random_local_terrain(rng, height_range=(-1.0, 1.0), num_boxes=6):
    """A random 31x31 box terrain centered on the canonical frame."""
    t = gen_random_boxes(
        grid=(HEIGHTMAP_SIZE, HEIGHTMAP_SIZE),
        num_boxes=num_boxes,
        height_range=height_range,
        seed=rng,
    )
    half = (HEIGHTMAP_SIZE - 1) / 2.0
    return TerrainGrid(-half * t.dx, -half * t.dy, t.dx, t.dy, t.heights)


def diffusion_train_loss(
    denoiser,
    batch,
    schedule,
    skeleton,
    rng,
    terrain_only_prob=0.10,
    mask_prob=0.15,
):
    """Evaluate the composite denoiser training loss over a batch.

    Per item: draw k uniformly in [1, K], noise the window, predict, then
    sum reconstruction + velocity + joint-consistency + penetration losses.
    With probability ``terrain_only_prob`` the item is swapped for a random
    terrain and only the penetration term is kept (reconstruction branch
    disabled); with probability ``mask_prob`` the previous-frame
    conditioning is masked. Returns the mean breakdown over the batch.
    """
    out = losses_mod.LossBreakdown()
    n = 0
    for win, ctx in batch:
        n += 1
        k = int(rng.integers(1, schedule.K + 1))
        terrain_only = rng.uniform() < terrain_only_prob
        mask = rng.uniform() < mask_prob
        x0 = encode_clip(win)
        x_k = q_sample(x0, k, schedule, rng)
        if terrain_only:
            local_t = random_local_terrain(rng)
            hm = sample_local_heightmap(local_t, LocalFrame(np.zeros(3), 0.0))
            ctx_used = replace(ctx, heightmap=hm, mask_prev=mask)
            pred = decode_vector(
                np.asarray(denoiser(k, x_k, ctx_used)), win.num_joints, win.fps
            )
            out.penetration += losses_mod.penetration_loss(pred, skeleton, local_t)
        else:
            ctx_used = replace(ctx, mask_prev=mask)
            pred = decode_vector(
                np.asarray(denoiser(k, x_k, ctx_used)), win.num_joints, win.fps
            )
            out.reconstruction += losses_mod.reconstruction_loss(pred, win)
            out.velocity += losses_mod.velocity_loss(pred, win)
            out.joint_consistency += losses_mod.joint_consistency_loss(pred, skeleton)
            if ctx.heightmap is not None:
                out.penetration += losses_mod.penetration_loss(
                    pred, skeleton, ctx.heightmap.as_local_terrain()
                )
    if n:
        out.penetration /= n
        out.reconstruction /= n
        out.velocity /= n
        out.joint_consistency /= n
    return out
