"""Motion data model: frames, clips, skeletons, forward kinematics, windows.

A clip stores N frames of root position/rotation, local joint rotations,
world joint positions and per-joint contact labels at a fixed frame rate.
Joint arrays cover the J non-root joints; the root is handled by the
dedicated ``root_*`` channels. Rotations are exponential maps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from . import rotmath
from .rotmath import LocalFrame

FPS_DEFAULT = 30.0
WINDOW_LEN = 15       # half a second at 30 fps
WINDOW_PAST = 2       # frames the generator conditions on
WINDOW_ANCHOR = 1     # canonicalization anchor: second frame of the window


# ---------------------------------------------------------------------------
# Body shapes and surface sampling
# ---------------------------------------------------------------------------

_GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


@dataclass(frozen=True)
class BodyShape:
    """Collision proxy for one body: a capsule (p0->p1, radius) or a box."""

    kind: str
    params: dict
    num_samples: int = 32

    def surface_points(self):
        """Deterministic, near-uniform sample points on the body surface."""
        if self.kind == "capsule":
            return _capsule_points(
                np.asarray(self.params["p0"], dtype=np.float64),
                np.asarray(self.params["p1"], dtype=np.float64),
                float(self.params["radius"]),
                self.num_samples,
            )
        if self.kind == "box":
            return _box_points(
                np.asarray(self.params["center"], dtype=np.float64),
                np.asarray(self.params["half_extents"], dtype=np.float64),
                self.num_samples,
            )
        raise ValueError(f"unknown body shape kind: {self.kind}")


def _axis_basis(axis):
    """Orthonormal basis (u, v, axis) for a unit axis vector."""
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(ref, axis)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    return u, v


def _capsule_points(p0, p1, radius, n):
    seg = p1 - p0
    length = float(np.linalg.norm(seg))
    axis = seg / length if length > 1e-12 else np.array([0.0, 0.0, 1.0])
    u, v = _axis_basis(axis)
    cap_area = 4.0 * np.pi * radius**2
    cyl_area = 2.0 * np.pi * radius * length
    f_cap = cap_area / (cap_area + cyl_area)
    pts = np.empty((n, 3))
    for k in range(n):
        t = (k + 0.5) / n
        phi = k * _GOLDEN_ANGLE
        du, dv = np.cos(phi), np.sin(phi)
        if t < f_cap:
            # sphere split into the two end caps
            z = 2.0 * (t / f_cap) - 1.0
            rho = np.sqrt(max(1.0 - z * z, 0.0))
            radial = radius * rho * (du * u + dv * v)
            base = p1 if z >= 0 else p0
            pts[k] = base + radial + radius * z * axis
        else:
            s = (t - f_cap) / (1.0 - f_cap)
            pts[k] = p0 + axis * (s * length) + radius * (du * u + dv * v)
    return pts


def _radical_inverse2(k):
    inv, f = 0.0, 0.5
    while k:
        inv += f * (k & 1)
        k >>= 1
        f *= 0.5
    return inv


def _box_points(center, half, n):
    hx, hy, hz = half
    areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy]) * 4.0
    cum = np.cumsum(areas) / areas.sum()
    pts = np.empty((n, 3))
    for k in range(n):
        t = (k + 0.5) / n
        face = int(np.searchsorted(cum, t))
        lo = cum[face - 1] if face > 0 else 0.0
        a = (t - lo) / (cum[face] - lo) * 2.0 - 1.0
        b = _radical_inverse2(k + 1) * 2.0 - 1.0
        axis, sign = divmod(face, 2)
        p = np.empty(3)
        p[axis] = half[axis] * (1.0 if sign == 0 else -1.0)
        others = [i for i in range(3) if i != axis]
        p[others[0]] = a * half[others[0]]
        p[others[1]] = b * half[others[1]]
        pts[k] = center + p
    return pts


# ---------------------------------------------------------------------------
# Skeleton
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Skeleton:
    """Joint tree with body shapes and per-body surface sample points.

    ``parent[j] == -1`` attaches joint j directly to the root. The root has
    its own body; joint j's body is rigidly attached to joint j's frame.
    """

    name: str
    joint_names: list
    parent: np.ndarray
    offset: np.ndarray
    bodies: list
    root_body: BodyShape
    key_bodies: list
    foot_joints: list
    joint_weights: np.ndarray = None

    def __post_init__(self):
        parent = np.asarray(self.parent, dtype=int)
        offset = np.asarray(self.offset, dtype=np.float64)
        j = len(parent)
        if offset.shape != (j, 3) or len(self.bodies) != j or len(self.joint_names) != j:
            raise ValueError("inconsistent skeleton arrays")
        order = _topological_order(parent)
        weights = self.joint_weights
        if weights is None:
            weights = np.ones(j)
        weights = np.asarray(weights, dtype=np.float64)
        parent.setflags(write=False)
        offset.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "joint_weights", weights)
        object.__setattr__(self, "_topo", order)
        # per-body local sample clouds, concatenated into one (P, 3) block
        local = [self.root_body.surface_points()] + [b.surface_points() for b in self.bodies]
        ids = np.concatenate([np.full(len(p), i) for i, p in enumerate(local)])
        cloud = np.concatenate(local, axis=0)
        cloud.setflags(write=False)
        ids.setflags(write=False)
        object.__setattr__(self, "_local_points", cloud)
        object.__setattr__(self, "_body_ids", ids)

    @property
    def num_joints(self):
        return len(self.parent)

    @property
    def num_surface_points(self):
        return len(self._local_points)

    def joint_index(self, name):
        return self.joint_names.index(name)


def _topological_order(parent):
    j = len(parent)
    depth = np.empty(j, dtype=int)
    for i in range(j):
        d, p, steps = 0, parent[i], 0
        while p != -1:
            if p < -1 or p >= j:
                raise ValueError(f"parent index {p} out of range")
            p = parent[p]
            d += 1
            steps += 1
            if steps > j:
                raise ValueError("cyclic parent array")
        depth[i] = d
    return np.argsort(depth, kind="stable")


def fk_transforms(skeleton, root_pos, root_rot, joint_rot):
    """World position and rotation of every joint, batched over frames.

    Parameters
    ----------
    root_pos : (..., 3) root positions
    root_rot : (..., 3) root exponential maps
    joint_rot : (..., J, 3) local joint exponential maps

    Returns
    -------
    pos : (..., J, 3) world joint positions
    rot : (..., J, 4) world joint rotations (quaternions)
    root_q : (..., 4)
    """
    root_pos = np.asarray(root_pos, dtype=np.float64)
    joint_rot = np.asarray(joint_rot, dtype=np.float64)
    root_q = rotmath.quat_from_expmap(root_rot)
    local_q = rotmath.quat_from_expmap(joint_rot)
    j = skeleton.num_joints
    pos = np.empty(joint_rot.shape[:-1] + (3,))
    rot = np.empty(joint_rot.shape[:-2] + (j, 4))
    for idx in skeleton._topo:
        p = skeleton.parent[idx]
        par_q = root_q if p == -1 else rot[..., p, :]
        par_pos = root_pos if p == -1 else pos[..., p, :]
        rot[..., idx, :] = rotmath.quat_mul(par_q, local_q[..., idx, :])
        pos[..., idx, :] = par_pos + rotmath.quat_rotate(par_q, skeleton.offset[idx])
    return pos, rot, root_q


def forward_kinematics(skeleton, root_pos, root_rot, joint_rot):
    """World joint positions from root state and local joint rotations."""
    pos, _, _ = fk_transforms(skeleton, root_pos, root_rot, joint_rot)
    return pos


# ---------------------------------------------------------------------------
# Frames and clips
# ---------------------------------------------------------------------------


@dataclass
class MotionFrame:
    root_pos: np.ndarray
    root_rot: np.ndarray
    joint_rot: np.ndarray
    joint_pos: np.ndarray
    contacts: np.ndarray

    def __post_init__(self):
        self.root_pos = np.asarray(self.root_pos, dtype=np.float64).reshape(3)
        self.root_rot = np.asarray(self.root_rot, dtype=np.float64).reshape(3)
        self.joint_rot = np.asarray(self.joint_rot, dtype=np.float64)
        self.joint_pos = np.asarray(self.joint_pos, dtype=np.float64)
        self.contacts = np.asarray(self.contacts, dtype=np.float64)


@dataclass
class MotionClip:
    """N motion frames at a fixed frame rate, stored as stacked arrays."""

    fps: float
    root_pos: np.ndarray    # (N, 3)
    root_rot: np.ndarray    # (N, 3)
    joint_rot: np.ndarray   # (N, J, 3)
    joint_pos: np.ndarray   # (N, J, 3)
    contacts: np.ndarray    # (N, J)
    skeleton_id: str = None
    terrain_id: str = None

    def __post_init__(self):
        self.root_pos = np.asarray(self.root_pos, dtype=np.float64)
        self.root_rot = np.asarray(self.root_rot, dtype=np.float64)
        self.joint_rot = np.asarray(self.joint_rot, dtype=np.float64)
        self.joint_pos = np.asarray(self.joint_pos, dtype=np.float64)
        self.contacts = np.asarray(self.contacts, dtype=np.float64)
        n = len(self.root_pos)
        if n < 1:
            raise ValueError("clip needs at least one frame")
        if not (
            self.root_rot.shape == (n, 3)
            and self.joint_rot.shape[0] == n
            and self.joint_pos.shape == self.joint_rot.shape
            and self.contacts.shape == self.joint_rot.shape[:2]
        ):
            raise ValueError("inconsistent clip array shapes")

    @property
    def num_frames(self):
        return len(self.root_pos)

    @property
    def num_joints(self):
        return self.joint_rot.shape[1]

    def frame(self, i):
        return MotionFrame(
            root_pos=self.root_pos[i],
            root_rot=self.root_rot[i],
            joint_rot=self.joint_rot[i],
            joint_pos=self.joint_pos[i],
            contacts=self.contacts[i],
        )

    def frames(self):
        return [self.frame(i) for i in range(self.num_frames)]

    def slice(self, start, stop):
        return replace(
            self,
            root_pos=self.root_pos[start:stop].copy(),
            root_rot=self.root_rot[start:stop].copy(),
            joint_rot=self.joint_rot[start:stop].copy(),
            joint_pos=self.joint_pos[start:stop].copy(),
            contacts=self.contacts[start:stop].copy(),
        )

    def copy(self):
        return self.slice(0, self.num_frames)


def clip_from_frames(fps, frames, skeleton_id=None, terrain_id=None):
    return MotionClip(
        fps=fps,
        root_pos=np.stack([f.root_pos for f in frames]),
        root_rot=np.stack([f.root_rot for f in frames]),
        joint_rot=np.stack([f.joint_rot for f in frames]),
        joint_pos=np.stack([f.joint_pos for f in frames]),
        contacts=np.stack([f.contacts for f in frames]),
        skeleton_id=skeleton_id,
        terrain_id=terrain_id,
    )


def clip_joint_positions_fk(skeleton, clip):
    """Joint positions recomputed through FK for every frame."""
    return forward_kinematics(skeleton, clip.root_pos, clip.root_rot, clip.joint_rot)


def sample_surface_points(skeleton, frame):
    """World-space body surface samples for one frame.

    Returns (points (P, 3), body_ids (P,)) where body id 0 is the root body
    and id j+1 is the body of joint j.
    """
    pos, rot, root_q = fk_transforms(
        skeleton, frame.root_pos, frame.root_rot, frame.joint_rot
    )
    pts = np.empty((skeleton.num_surface_points, 3))
    ids = skeleton._body_ids
    local = skeleton._local_points
    sel = ids == 0
    pts[sel] = frame.root_pos + rotmath.quat_rotate(root_q, local[sel])
    for j in range(skeleton.num_joints):
        sel = ids == j + 1
        pts[sel] = pos[j] + rotmath.quat_rotate(rot[j], local[sel])
    return pts, ids.copy()


def clip_surface_points(skeleton, clip):
    """Surface samples for every frame of a clip: (N, P, 3) plus body ids."""
    pos, rot, root_q = fk_transforms(
        skeleton, clip.root_pos, clip.root_rot, clip.joint_rot
    )
    n = clip.num_frames
    pts = np.empty((n, skeleton.num_surface_points, 3))
    ids = skeleton._body_ids
    local = skeleton._local_points
    sel = ids == 0
    pts[:, sel] = clip.root_pos[:, None, :] + rotmath.quat_rotate(
        root_q[:, None, :], local[sel][None, :, :]
    )
    for j in range(skeleton.num_joints):
        sel = ids == j + 1
        pts[:, sel] = pos[:, None, j, :] + rotmath.quat_rotate(
            rot[:, None, j, :], local[sel][None, :, :]
        )
    return pts, ids.copy()


# ---------------------------------------------------------------------------
# Canonicalization and windows
# ---------------------------------------------------------------------------


def anchor_local_frame(clip, anchor_index):
    """Local frame of the anchor frame: origin at its root, x along heading.

    Degenerate headings (facing straight up/down) fall back to the previous
    frame's heading; a degenerate first frame gets heading 0.
    """
    if not 0 <= anchor_index < clip.num_frames:
        raise IndexError("anchor_index out of range")
    quats = rotmath.quat_from_expmap(clip.root_rot[: anchor_index + 1])
    heading = rotmath.headings_with_fallback(quats)[-1]
    return LocalFrame(origin=clip.root_pos[anchor_index].copy(), heading=heading)


def transform_clip(clip, frame, to_local=True):
    """Rigidly transform a clip into (or out of) a local frame."""
    out = clip.copy()
    if to_local:
        out.root_pos = frame.world_to_local(clip.root_pos)
        out.joint_pos = frame.world_to_local(clip.joint_pos)
        dq = rotmath.quat_about_z(-frame.heading)
    else:
        out.root_pos = frame.local_to_world(clip.root_pos)
        out.joint_pos = frame.local_to_world(clip.joint_pos)
        dq = rotmath.quat_about_z(frame.heading)
    q = rotmath.quat_from_expmap(clip.root_rot)
    out.root_rot = rotmath.expmap_from_quat(rotmath.quat_mul(dq, q))
    return out


def canonicalize(clip, anchor_index):
    """Express a clip in the local frame of one of its frames.

    The anchor frame's root maps to the origin and its heading to +x. The
    transform is rigid and applied uniformly; local joint rotations and
    contacts are untouched. Canonicalizing an already canonical clip is a
    bitwise no-op.
    """
    frame = anchor_local_frame(clip, anchor_index)
    if abs(frame.heading) < 1e-12 and np.all(np.abs(frame.origin) < 1e-12):
        return clip.copy()
    return transform_clip(clip, frame, to_local=True)


def window(clip, start):
    """A 15-frame slice canonicalized to its second frame."""
    if start < 0 or start + WINDOW_LEN > clip.num_frames:
        raise ValueError(
            f"window [{start}, {start + WINDOW_LEN}) exceeds clip of "
            f"{clip.num_frames} frames"
        )
    return canonicalize(clip.slice(start, start + WINDOW_LEN), WINDOW_ANCHOR)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def clip_to_dict(clip):
    frames = []
    for i in range(clip.num_frames):
        frames.append(
            {
                "root_pos": clip.root_pos[i].tolist(),
                "root_rot": clip.root_rot[i].tolist(),
                "joint_rot": clip.joint_rot[i].tolist(),
                "joint_pos": clip.joint_pos[i].tolist(),
                "contacts": clip.contacts[i].tolist(),
            }
        )
    return {
        "fps": clip.fps,
        "skeleton_id": clip.skeleton_id,
        "terrain_id": clip.terrain_id,
        "frames": frames,
    }


def clip_from_dict(d):
    frames = d["frames"]
    return MotionClip(
        fps=d["fps"],
        root_pos=np.array([f["root_pos"] for f in frames]),
        root_rot=np.array([f["root_rot"] for f in frames]),
        joint_rot=np.array([f["joint_rot"] for f in frames]),
        joint_pos=np.array([f["joint_pos"] for f in frames]),
        contacts=np.array([f["contacts"] for f in frames]),
        skeleton_id=d.get("skeleton_id"),
        terrain_id=d.get("terrain_id"),
    )


def save_clip(clip, path):
    with open(path, "w") as f:
        json.dump(clip_to_dict(clip), f, sort_keys=True)
        f.write("\n")


def load_clip(path):
    with open(path) as f:
        return clip_from_dict(json.load(f))


def _shape_to_dict(shape):
    return {"kind": shape.kind, "params": {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in shape.params.items()}, "num_samples": shape.num_samples}


def _shape_from_dict(d):
    return BodyShape(kind=d["kind"], params=d["params"], num_samples=d["num_samples"])


def skeleton_to_dict(skeleton):
    return {
        "name": skeleton.name,
        "joints": [
            {
                "name": skeleton.joint_names[j],
                "parent": int(skeleton.parent[j]),
                "offset": skeleton.offset[j].tolist(),
                "shape": _shape_to_dict(skeleton.bodies[j]),
                "weight": float(skeleton.joint_weights[j]),
            }
            for j in range(skeleton.num_joints)
        ],
        "root_body": _shape_to_dict(skeleton.root_body),
        "key_bodies": [skeleton.joint_names[j] for j in skeleton.key_bodies],
        "foot_joints": [skeleton.joint_names[j] for j in skeleton.foot_joints],
    }


def skeleton_from_dict(d):
    names = [j["name"] for j in d["joints"]]
    return Skeleton(
        name=d["name"],
        joint_names=names,
        parent=np.array([j["parent"] for j in d["joints"]], dtype=int),
        offset=np.array([j["offset"] for j in d["joints"]]),
        bodies=[_shape_from_dict(j["shape"]) for j in d["joints"]],
        root_body=_shape_from_dict(d["root_body"]),
        key_bodies=[names.index(n) for n in d["key_bodies"]],
        foot_joints=[names.index(n) for n in d["foot_joints"]],
        joint_weights=np.array([j.get("weight", 1.0) for j in d["joints"]]),
    )


def save_skeleton(skeleton, path):
    with open(path, "w") as f:
        json.dump(skeleton_to_dict(skeleton), f, sort_keys=True, indent=1)
        f.write("\n")


def load_skeleton(path):
    with open(path) as f:
        return skeleton_from_dict(json.load(f))


def default_skeleton():
    """The 15-body reference humanoid shipped with the package."""
    from importlib import resources

    with resources.files("terrainmotion.data").joinpath("humanoid15.json").open() as f:
        return skeleton_from_dict(json.load(f))


def identity_frame(skeleton, root_height=0.9):
    """A rest-pose frame: identity rotations, root at the given height."""
    j = skeleton.num_joints
    frame = MotionFrame(
        root_pos=np.array([0.0, 0.0, root_height]),
        root_rot=np.zeros(3),
        joint_rot=np.zeros((j, 3)),
        joint_pos=np.zeros((j, 3)),
        contacts=np.zeros(j),
    )
    frame.joint_pos = forward_kinematics(
        skeleton, frame.root_pos, frame.root_rot, frame.joint_rot
    )
    return frame
