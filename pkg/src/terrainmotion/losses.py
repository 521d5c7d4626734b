"""Motion quality losses: terrain penetration/contact, jerk, reconstruction,
velocity, joint consistency, and the batch selection heuristic.

All losses are sums (not means) over frames and points/joints; per-frame
normalized variants are available for metric reporting.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import rotmath
from .motion import clip_joint_positions_fk, clip_surface_points
from .terrain import sd_terrain

JERK_MAX_METRIC = 11666.0      # m/s^3, high-jerk frame threshold
JERK_MAX_OPTIMIZE = 1000.0     # m/s^3, kinematic optimization threshold
INCOMPLETE_PENALTY = 1000.0


@dataclass
class LossBreakdown:
    penetration: float = 0.0
    contact: float = 0.0
    jerk: float = 0.0
    reconstruction: float = 0.0
    velocity: float = 0.0
    joint_consistency: float = 0.0
    selection_score: float = 0.0

    def as_dict(self):
        return asdict(self)


def penetration_loss(clip, skeleton, terrain):
    """Total penetration depth of all body surface points over all frames."""
    pts, _ = clip_surface_points(skeleton, clip)
    sd = sd_terrain(pts, terrain)
    return float(np.sum(-np.minimum(sd, 0.0)))


def contact_loss(clip, skeleton, terrain):
    """Per in-contact body, the minimum |signed distance| over its points,
    summed over frames. Contact labels binarize at 0.5."""
    pts, body_ids = clip_surface_points(skeleton, clip)
    sd = np.abs(sd_terrain(pts, terrain))
    total = 0.0
    for j in range(clip.num_joints):
        active = clip.contacts[:, j] >= 0.5
        if not np.any(active):
            continue
        body_sd = sd[:, body_ids == j + 1]
        total += float(np.sum(np.min(body_sd[active], axis=1)))
    return total


def joint_jerk(clip, fps=None):
    """Joint jerk magnitudes (N-3, J) from third finite differences."""
    fps = clip.fps if fps is None else fps
    if clip.num_frames < 4:
        raise ValueError("insufficient frames: jerk needs at least 4")
    third = np.diff(clip.joint_pos, n=3, axis=0) * fps**3
    return np.linalg.norm(third, axis=-1)


def jerk_loss(clip, jerk_max, fps=None):
    """Sum of jerk magnitude in excess of ``jerk_max`` over frames/joints."""
    mag = joint_jerk(clip, fps)
    return float(np.sum(np.maximum(mag - jerk_max, 0.0)))


def high_jerk_frame_fraction(clip, jerk_max=JERK_MAX_METRIC, fps=None):
    """Fraction of jerk-evaluable frames where any joint exceeds the limit."""
    mag = joint_jerk(clip, fps)
    return float(np.mean(np.any(mag > jerk_max, axis=1)))


def _check_same_shape(pred, target):
    if (
        pred.num_frames != target.num_frames
        or pred.num_joints != target.num_joints
    ):
        raise ValueError("pred/target shape mismatch")


def reconstruction_loss(pred, target):
    """Squared positional error plus squared geodesic rotational error plus
    squared contact error, summed over frames and joints."""
    _check_same_shape(pred, target)
    pos = np.sum((pred.root_pos - target.root_pos) ** 2)
    pos += np.sum((pred.joint_pos - target.joint_pos) ** 2)

    rq_p = rotmath.quat_from_expmap(pred.root_rot)
    rq_t = rotmath.quat_from_expmap(target.root_rot)
    rot = np.sum(rotmath.quat_diff(rq_p, rq_t) ** 2)
    jq_p = rotmath.quat_from_expmap(pred.joint_rot)
    jq_t = rotmath.quat_from_expmap(target.joint_rot)
    rot += np.sum(rotmath.quat_diff(jq_p, jq_t) ** 2)

    con = np.sum((pred.contacts - target.contacts) ** 2)
    return float(pos + rot + con)


def _positional_velocities(clip, fps):
    root = np.diff(clip.root_pos, axis=0) * fps
    joints = np.diff(clip.joint_pos, axis=0) * fps
    return root, joints


def _angular_velocities(expmaps, fps):
    """Per-step quaternion differences converted to exp maps, times fps."""
    q = rotmath.quat_from_expmap(expmaps)
    if q.ndim == 2:
        return rotmath.quat_diff(q[1:], q[:-1]) * fps
    return rotmath.quat_diff(q[1:], q[:-1]) * fps


def velocity_loss(pred, target, fps=None):
    """Squared error between finite-difference linear and angular velocities."""
    _check_same_shape(pred, target)
    if pred.num_frames < 2:
        raise ValueError("insufficient frames: velocities need at least 2")
    fps = pred.fps if fps is None else fps
    rp, jp = _positional_velocities(pred, fps)
    rt, jt = _positional_velocities(target, fps)
    total = np.sum((rp - rt) ** 2) + np.sum((jp - jt) ** 2)
    total += np.sum(
        (_angular_velocities(pred.root_rot, fps) - _angular_velocities(target.root_rot, fps)) ** 2
    )
    total += np.sum(
        (_angular_velocities(pred.joint_rot, fps) - _angular_velocities(target.joint_rot, fps)) ** 2
    )
    return float(total)


def joint_consistency_loss(pred, skeleton):
    """Squared distance between stored joint positions and FK-recomputed ones."""
    fk = clip_joint_positions_fk(skeleton, pred)
    return float(np.sum((pred.joint_pos - fk) ** 2))


def selection_score(clip, skeleton, terrain, reached_end):
    """Batch selection heuristic: penetration + contact + a fixed penalty
    when the motion failed to complete its path."""
    score = penetration_loss(clip, skeleton, terrain) + contact_loss(clip, skeleton, terrain)
    if not reached_end:
        score += INCOMPLETE_PENALTY
    return score


def evaluate_clip(clip, skeleton, terrain, jerk_max=JERK_MAX_METRIC):
    """All terrain-quality losses of a single clip as a LossBreakdown."""
    return LossBreakdown(
        penetration=penetration_loss(clip, skeleton, terrain),
        contact=contact_loss(clip, skeleton, terrain),
        jerk=jerk_loss(clip, jerk_max) if clip.num_frames >= 4 else 0.0,
        joint_consistency=joint_consistency_loss(clip, skeleton),
    )
