"""Adam and the kinematic motion correction loop.

Optimizes root position, root rotation and local joint rotations of a clip
against a weighted sum of regularization, terrain penetration, terrain
contact and jerk losses. Joint positions are recomputed through forward
kinematics at every evaluation so the losses always see consistent
geometry.

Gradients are analytic: point gradients from the box SDF's piecewise
regions are pulled back through the kinematic tree as forces and torques,
then mapped to exponential-map coordinates via the SO(3) right Jacobian. A
central finite-difference fallback is provided for verification.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import rotmath
from .losses import (
    JERK_MAX_OPTIMIZE,
    LossBreakdown,
    contact_loss,
    jerk_loss,
    penetration_loss,
    velocity_loss,
)
from .motion import fk_transforms
from .terrain import sd_terrain_grad

_JERK_STENCIL = (-1.0, 3.0, -3.0, 1.0)


class NumericError(ValueError):
    """A numeric failure: non-finite loss or gradient."""


@dataclass
class AdamState:
    step: int
    m: np.ndarray
    v: np.ndarray
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(dim, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    return AdamState(step=0, m=np.zeros(dim), v=np.zeros(dim), lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state, params, grad):
    """One bias-corrected Adam update; returns (new state, new params)."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.m.shape or np.shape(params) != grad.shape:
        raise ValueError("dimension mismatch between state, params and grad")
    bad = ~np.isfinite(grad)
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise NumericError(f"non-finite gradient at index {idx}")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, step=t, m=m, v=v), new_params


@dataclass
class OptimizeConfig:
    w_reg: float = 1.0
    w_pen: float = 1000.0
    w_contact: float = 1000.0
    w_jerk: float = 1000.0
    iters: int = 3000
    lr: float = 1e-3
    jerk_max: float = JERK_MAX_OPTIMIZE


@dataclass
class OptimizationReport:
    loss_trace: np.ndarray
    final: LossBreakdown
    iterations_run: int


@dataclass
class MotionVars:
    """The optimization variables of a clip, flattened on demand."""

    root_pos: np.ndarray   # (N, 3)
    root_rot: np.ndarray   # (N, 3)
    joint_rot: np.ndarray  # (N, J, 3)

    @classmethod
    def from_clip(cls, clip):
        return cls(
            root_pos=clip.root_pos.copy(),
            root_rot=clip.root_rot.copy(),
            joint_rot=clip.joint_rot.copy(),
        )

    @classmethod
    def from_flat(cls, x, num_frames, num_joints):
        n, j = num_frames, num_joints
        x = np.asarray(x, dtype=np.float64)
        return cls(
            root_pos=x[: 3 * n].reshape(n, 3).copy(),
            root_rot=x[3 * n : 6 * n].reshape(n, 3).copy(),
            joint_rot=x[6 * n :].reshape(n, j, 3).copy(),
        )

    def flatten(self):
        return np.concatenate(
            [self.root_pos.ravel(), self.root_rot.ravel(), self.joint_rot.ravel()]
        )

    @property
    def num_frames(self):
        return len(self.root_pos)

    @property
    def num_joints(self):
        return self.joint_rot.shape[1]


def _expmap_geodesic_sq_and_grad(e, e_src):
    """Sum of squared geodesic distances between rotations e and e_src,
    with the gradient w.r.t. e.

    Uses d/de ||Log(R(e) R_src^T)||^2 = 2 J_r(e)^T R_src^T r.
    """
    q = rotmath.quat_from_expmap(e)
    q_src = rotmath.quat_from_expmap(e_src)
    r = rotmath.quat_diff(q, q_src)
    val = float(np.sum(r * r))
    r_in_src = rotmath.quat_rotate(rotmath.quat_conjugate(q_src), r)
    jr = rotmath.so3_right_jacobian(e)
    grad = 2.0 * np.einsum("...ji,...j->...i", jr, r_in_src)
    return val, grad


def _body_local_points(skeleton):
    ids = skeleton._body_ids
    return [skeleton._local_points[ids == b] for b in range(skeleton.num_joints + 1)]


def loss_and_grad(vars, skeleton, terrain, source_clip, config, fps=None):
    """Total weighted loss and its analytic gradient w.r.t. flattened vars.

    Returns (loss, grad, parts) where parts holds the unweighted loss
    values.
    """
    n, j = vars.num_frames, vars.num_joints
    fps = source_clip.fps if fps is None else fps
    for arr in (vars.root_pos, vars.root_rot, vars.joint_rot):
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite optimization variables")
    pos, rot, root_q = fk_transforms(skeleton, vars.root_pos, vars.root_rot, vars.joint_rot)

    locals_per_body = _body_local_points(skeleton)
    origins = [vars.root_pos] + [pos[:, b - 1] for b in range(1, j + 1)]
    quats = [root_q] + [rot[:, b - 1] for b in range(1, j + 1)]
    world_pts = [
        o[:, None, :] + rotmath.quat_rotate(q[:, None, :], lp[None, :, :])
        for o, q, lp in zip(origins, quats, locals_per_body)
    ]
    counts = [len(lp) for lp in locals_per_body]
    pts = np.concatenate(world_pts, axis=1)  # (N, P, 3)

    sd, sd_grad = sd_terrain_grad(pts, terrain)
    point_grads = np.zeros_like(pts)

    # Both hinge losses keep a 1e-9 gradient deadband around their kinks:
    # at machine-epsilon distances the subgradient direction is numeric
    # noise with unit magnitude, which would jitter already-perfect
    # contacts away from the surface. Loss values are unaffected.
    kink = 1e-9

    # penetration: sum of depths below the surface
    pen_mask = sd < 0.0
    l_pen = float(np.sum(-sd[pen_mask]))
    point_grads -= config.w_pen * sd_grad * (sd < -kink)[..., None]

    # contact: min |sd| over each in-contact body's points
    l_contact = 0.0
    offsets = np.concatenate([[0], np.cumsum(counts)])
    contacts = source_clip.contacts >= 0.5
    for b in range(1, j + 1):
        active = contacts[:, b - 1]
        if not np.any(active):
            continue
        s, e = offsets[b], offsets[b + 1]
        asd = np.abs(sd[:, s:e])
        best = np.argmin(asd, axis=1)
        rows = np.nonzero(active)[0]
        cols = s + best[rows]
        l_contact += float(np.sum(asd[rows, best[rows]]))
        live = np.abs(sd[rows, cols]) > kink
        point_grads[rows[live], cols[live]] += (
            config.w_contact
            * np.sign(sd[rows[live], cols[live]])[:, None]
            * sd_grad[rows[live], cols[live]]
        )

    # jerk: excess third-difference magnitude of FK joint positions
    djpos = np.zeros((n, j, 3))
    l_jerk = 0.0
    if n >= 4 and config.w_jerk != 0.0:
        jerk = np.diff(pos, n=3, axis=0) * fps**3
        mag = np.linalg.norm(jerk, axis=-1)
        excess = mag > config.jerk_max
        l_jerk = float(np.sum(mag[excess] - config.jerk_max))
        if np.any(excess):
            gj = np.zeros_like(jerk)
            gj[excess] = config.w_jerk * jerk[excess] / mag[excess][:, None]
            gj *= fps**3
            for k, c in enumerate(_JERK_STENCIL):
                djpos[k : k + len(jerk)] += c * gj

    # regularization toward the source variables
    l_reg = float(np.sum((vars.root_pos - source_clip.root_pos) ** 2))
    g_root_pos = 2.0 * config.w_reg * (vars.root_pos - source_clip.root_pos)
    v_rr, g_rr = _expmap_geodesic_sq_and_grad(vars.root_rot, source_clip.root_rot)
    v_jr, g_jr = _expmap_geodesic_sq_and_grad(vars.joint_rot, source_clip.joint_rot)
    l_reg += v_rr + v_jr
    g_root_rot = config.w_reg * g_rr
    g_joint_rot = config.w_reg * g_jr

    # backward pass through the kinematic tree: gather point forces and
    # torques per body, then accumulate leaves-to-root
    f_body = np.empty((j + 1, n, 3))
    t_body = np.empty((j + 1, n, 3))
    for b in range(j + 1):
        s, e = offsets[b], offsets[b + 1]
        fb = point_grads[:, s:e]
        f_body[b] = fb.sum(axis=1)
        rel = pts[:, s:e] - origins[b][:, None, :]
        t_body[b] = rotmath.cross3(rel, fb).sum(axis=1)

    children = [[] for _ in range(j)]
    top = []
    for jj in range(j):
        p = skeleton.parent[jj]
        (top if p == -1 else children[p]).append(jj)

    f_tot = np.zeros((j, n, 3))
    t_tot = np.zeros((j, n, 3))
    for jj in reversed(skeleton._topo):
        f_tot[jj] = f_body[jj + 1] + djpos[:, jj]
        t_tot[jj] = t_body[jj + 1]
        for c in children[jj]:
            f_tot[jj] += f_tot[c]
            t_tot[jj] += t_tot[c] + rotmath.cross3(pos[:, c] - pos[:, jj], f_tot[c])

    for jj in range(j):
        torque_local = rotmath.quat_rotate(rotmath.quat_conjugate(rot[:, jj]), t_tot[jj])
        jr = rotmath.so3_right_jacobian(vars.joint_rot[:, jj])
        g_joint_rot[:, jj] += np.einsum("nji,nj->ni", jr, torque_local)

    f_root = f_body[0].copy()
    t_root = t_body[0].copy()
    for c in top:
        f_root += f_tot[c]
        t_root += t_tot[c] + rotmath.cross3(pos[:, c] - vars.root_pos, f_tot[c])
    g_root_pos += f_root
    torque_local = rotmath.quat_rotate(rotmath.quat_conjugate(root_q), t_root)
    jr = rotmath.so3_right_jacobian(vars.root_rot)
    g_root_rot += np.einsum("nji,nj->ni", jr, torque_local)

    parts = {"reg": l_reg, "pen": l_pen, "contact": l_contact, "jerk": l_jerk}
    total = (
        config.w_reg * l_reg
        + config.w_pen * l_pen
        + config.w_contact * l_contact
        + config.w_jerk * l_jerk
    )
    grad = np.concatenate([g_root_pos.ravel(), g_root_rot.ravel(), g_joint_rot.ravel()])
    return total, grad, parts


def total_loss(vars, skeleton, terrain, source_clip, config, fps=None):
    loss, _, _ = loss_and_grad(vars, skeleton, terrain, source_clip, config, fps)
    return loss


def loss_gradient(vars, skeleton, terrain, source_clip, config, fps=None):
    """Analytic gradient of the correction loss w.r.t. the flattened vars."""
    _, grad, _ = loss_and_grad(vars, skeleton, terrain, source_clip, config, fps)
    return grad


def numeric_gradient(vars, skeleton, terrain, source_clip, config, fps=None, h=1e-5):
    """Central finite-difference gradient; the verification fallback."""
    x0 = vars.flatten()
    n, j = vars.num_frames, vars.num_joints
    grad = np.empty_like(x0)
    for i in range(len(x0)):
        xp = x0.copy()
        xp[i] += h
        xm = x0.copy()
        xm[i] -= h
        lp = total_loss(MotionVars.from_flat(xp, n, j), skeleton, terrain, source_clip, config, fps)
        lm = total_loss(MotionVars.from_flat(xm, n, j), skeleton, terrain, source_clip, config, fps)
        grad[i] = (lp - lm) / (2.0 * h)
    return grad


def optimize_motion(clip, skeleton, terrain, config=OptimizeConfig()):
    """Kinematic motion correction: Adam on root/joint channels.

    Returns the corrected clip (joint positions rewritten from FK, contacts
    copied through) and an OptimizationReport whose loss trace starts with
    the pre-optimization loss.
    """
    if clip.num_frames < 4:
        raise ValueError("optimization needs at least 4 frames")
    vars = MotionVars.from_clip(clip)
    x = vars.flatten()
    n, j = vars.num_frames, vars.num_joints
    state = adam_init(len(x), lr=config.lr)

    trace = np.empty(config.iters + 1)
    for it in range(config.iters):
        loss, grad, _ = loss_and_grad(
            MotionVars.from_flat(x, n, j), skeleton, terrain, clip, config
        )
        if it == 0 and not np.isfinite(loss):
            raise NumericError("non-finite loss at initialization")
        trace[it] = loss
        state, x = adam_step(state, x, grad)
    final_vars = MotionVars.from_flat(x, n, j)
    trace[config.iters] = total_loss(final_vars, skeleton, terrain, clip, config)

    out = clip.copy()
    out.root_pos = final_vars.root_pos
    out.root_rot = final_vars.root_rot
    out.joint_rot = final_vars.joint_rot
    pos, _, _ = fk_transforms(skeleton, out.root_pos, out.root_rot, out.joint_rot)
    out.joint_pos = pos

    final = LossBreakdown(
        penetration=penetration_loss(out, skeleton, terrain),
        contact=contact_loss(out, skeleton, terrain),
        jerk=jerk_loss(out, config.jerk_max) if out.num_frames >= 4 else 0.0,
        reconstruction=0.0,
        velocity=velocity_loss(out, clip) if out.num_frames >= 2 else 0.0,
        joint_consistency=0.0,
    )
    final.selection_score = final.penetration + final.contact
    report = OptimizationReport(
        loss_trace=trace, final=final, iterations_run=config.iters
    )
    return out, report
