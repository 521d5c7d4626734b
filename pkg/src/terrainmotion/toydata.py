"""Synthetic motion clips for demos, baselines and pipeline tests.

These are kinematically consistent (joint positions come from FK) but make
no claim to naturalness.
"""

from __future__ import annotations

import numpy as np

from .motion import (
    FPS_DEFAULT,
    MotionClip,
    clip_joint_positions_fk,
    identity_frame,
    sample_surface_points,
)


def standing_root_height(skeleton):
    """Root height that puts the lowest rest-pose surface point at z = 0."""
    frame = identity_frame(skeleton, root_height=0.0)
    pts, _ = sample_surface_points(skeleton, frame)
    return -float(pts[:, 2].min())


def make_walk_clip(
    skeleton,
    num_frames=90,
    speed=1.2,
    fps=FPS_DEFAULT,
    ground_height=0.0,
    heading=0.0,
    stride_hz=1.4,
    grounded=True,
    start=(0.6, 0.0),
    seed=None,
):
    """A forward walk on flat ground.

    With ``grounded=True`` the root height is adjusted per frame so the
    lowest body surface point touches the ground exactly, and the touching
    foot (or feet) is labeled in contact. The clip is then free of both
    penetration and contact error on flat terrain at ``ground_height``.
    """
    from .motion import clip_surface_points

    j = skeleton.num_joints
    t = np.arange(num_frames) / fps
    phase = 2.0 * np.pi * stride_hz * t

    rest = standing_root_height(skeleton)
    root_pos = np.zeros((num_frames, 3))
    root_pos[:, 0] = start[0] + speed * t
    root_pos[:, 1] = start[1]
    root_pos[:, 2] = ground_height + rest + 0.02 * np.abs(np.sin(phase))
    root_rot = np.zeros((num_frames, 3))
    joint_rot = np.zeros((num_frames, j, 3))

    swing = 0.5 * np.sin(phase)
    for side, sign in (("l", 1.0), ("r", -1.0)):
        hip = skeleton.joint_index(f"{side}_hip")
        knee = skeleton.joint_index(f"{side}_knee")
        sh = skeleton.joint_index(f"{side}_shoulder")
        joint_rot[:, hip, 1] = sign * swing
        joint_rot[:, knee, 1] = np.maximum(sign * swing, 0.0) * 0.8
        joint_rot[:, sh, 1] = -sign * 0.3 * np.sin(phase)

    clip = MotionClip(
        fps=fps,
        root_pos=root_pos,
        root_rot=root_rot,
        joint_rot=joint_rot,
        joint_pos=np.zeros((num_frames, j, 3)),
        contacts=np.zeros((num_frames, j)),
    )
    clip.joint_pos = clip_joint_positions_fk(skeleton, clip)
    if seed is not None:
        rng = np.random.default_rng(seed)
        clip.joint_rot += rng.normal(scale=0.01, size=clip.joint_rot.shape)
        clip.joint_pos = clip_joint_positions_fk(skeleton, clip)

    if grounded:
        pts, ids = clip_surface_points(skeleton, clip)
        lift = ground_height - pts[..., 2].min(axis=1)
        clip.root_pos[:, 2] += lift
        clip.joint_pos[:, :, 2] += lift[:, None]
        pts[..., 2] += lift[:, None]
        for name in ("l_ankle", "r_ankle"):
            ji = skeleton.joint_index(name)
            foot_min = pts[:, ids == ji + 1, 2].min(axis=1)
            clip.contacts[:, ji] = (foot_min <= ground_height).astype(float)
    else:
        l_ankle = skeleton.joint_index("l_ankle")
        r_ankle = skeleton.joint_index("r_ankle")
        clip.contacts[:, l_ankle] = (np.sin(phase) <= 0.0).astype(float)
        clip.contacts[:, r_ankle] = (np.sin(phase) > 0.0).astype(float)

    if heading != 0.0:
        c, s = np.cos(heading), np.sin(heading)
        rot = np.array([[c, -s], [s, c]])
        clip.root_pos[:, :2] = clip.root_pos[:, :2] @ rot.T
        clip.joint_pos[:, :, :2] = clip.joint_pos[:, :, :2] @ rot.T
        clip.root_rot[:, 2] = heading
    return clip


def make_hover_clip(skeleton, num_frames=20, height=2.0, fps=FPS_DEFAULT, seed=None):
    """A static pose floating at the given root height, no contacts."""
    j = skeleton.num_joints
    rng = np.random.default_rng(seed)
    pose = rng.normal(scale=0.2, size=(j, 3)) if seed is not None else np.zeros((j, 3))
    clip = MotionClip(
        fps=fps,
        root_pos=np.tile([0.0, 0.0, height], (num_frames, 1)),
        root_rot=np.zeros((num_frames, 3)),
        joint_rot=np.tile(pose, (num_frames, 1, 1)),
        joint_pos=np.zeros((num_frames, j, 3)),
        contacts=np.zeros((num_frames, j)),
    )
    clip.joint_pos = clip_joint_positions_fk(skeleton, clip)
    return clip


def make_standing_clip(skeleton, num_frames=10, ground_height=0.0, fps=FPS_DEFAULT):
    """A static standing pose with both feet on the ground, feet in contact."""
    clip = make_hover_clip(
        skeleton,
        num_frames=num_frames,
        height=ground_height + standing_root_height(skeleton),
        fps=fps,
    )
    for name in ("l_ankle", "r_ankle"):
        clip.contacts[:, skeleton.joint_index(name)] = 1.0
    return clip
