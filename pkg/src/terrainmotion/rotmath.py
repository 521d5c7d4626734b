"""Rotation math: quaternions, exponential maps, finite differences, local frames.

Conventions used throughout the package:
  - Quaternions are scalar-first ``[w, x, y, z]`` numpy arrays of shape
    ``(..., 4)``, kept unit-norm and on the ``w >= 0`` hemisphere.
  - Exponential maps are ``(..., 3)`` axis-times-angle vectors in radians;
    canonical form stores the minimal rotation (angle in ``[0, pi]``).
  - World up is +z, character forward is +x.
All functions broadcast over leading dimensions and are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_EPS = 1e-12


def quat_normalize(q):
    """Normalize to unit length and flip onto the w >= 0 hemisphere."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < _EPS):
        raise ValueError("cannot normalize near-zero quaternion")
    q = q / norm
    flip = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    return q * flip


def quat_mul(a, b):
    """Hamilton product a ⊗ b (scalar-first), renormalized."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    w1, x1, y1, z1 = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    w2, x2, y2, z2 = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    # terms grouped in canceling pairs so that a ⊗ conj(a) gives an exactly
    # zero vector part (keeps difference-based gradients exact at zero)
    q = np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            (w1 * x2 + x1 * w2) + (y1 * z2 - z1 * y2),
            (w1 * y2 + y1 * w2) + (z1 * x2 - x1 * z2),
            (w1 * z2 + z1 * w2) + (x1 * y2 - y1 * x2),
        ],
        axis=-1,
    )
    return quat_normalize(q)


def quat_conjugate(q):
    q = np.asarray(q, dtype=np.float64)
    return np.concatenate([q[..., :1], -q[..., 1:]], axis=-1)


def cross3(a, b):
    """Cross product over the last axis; avoids np.cross overhead."""
    out = np.empty(np.broadcast(a, b).shape, dtype=np.float64)
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def quat_rotate(q, v):
    """Rotate vector(s) v by quaternion(s) q; broadcasts over leading dims."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    qw = q[..., :1]
    qv = q[..., 1:]
    t = 2.0 * cross3(qv, np.broadcast_to(v, np.broadcast(qv, v).shape))
    return v + qw * t + cross3(qv, t)


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    angle = np.asarray(angle, dtype=np.float64)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * angle[..., np.newaxis]
    q = np.concatenate([np.cos(half), axis * np.sin(half)], axis=-1)
    return quat_normalize(q)


def quat_about_z(angle):
    """Quaternion for a rotation by ``angle`` about the world up axis."""
    angle = np.asarray(angle, dtype=np.float64)
    half = 0.5 * angle[..., np.newaxis]
    zeros = np.zeros_like(half)
    return quat_normalize(
        np.concatenate([np.cos(half), zeros, zeros, np.sin(half)], axis=-1)
    )


def quat_from_expmap(e):
    """Exponential map -> unit quaternion (any magnitude accepted)."""
    e = np.asarray(e, dtype=np.float64)
    angle = np.linalg.norm(e, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(a/2)/a with series fallback near zero
    small = angle < 1e-8
    scale = np.where(small, 0.5 - angle * angle / 48.0, np.sin(half) / np.where(small, 1.0, angle))
    q = np.concatenate([np.cos(half), e * scale], axis=-1)
    return quat_normalize(q)


def expmap_from_quat(q):
    """Unit quaternion -> canonical exponential map with angle in [0, pi]."""
    q = quat_normalize(q)
    w = q[..., :1]
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, w)
    small = s < 1e-12
    scale = np.where(small, 2.0 / np.maximum(w, 0.5), angle / np.where(small, 1.0, s))
    return v * scale


def quat_to_matrix(q):
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - z * w)
    m[..., 0, 2] = 2 * (x * z + y * w)
    m[..., 1, 0] = 2 * (x * y + z * w)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - x * w)
    m[..., 2, 0] = 2 * (x * z - y * w)
    m[..., 2, 1] = 2 * (y * z + x * w)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def expmap_to_matrix(e):
    return quat_to_matrix(quat_from_expmap(e))


def quat_diff(a, b):
    """Rotation difference a ⊖ b as an exponential map of a ⊗ b⁻¹.

    The magnitude equals the geodesic angle between the two rotations.
    """
    return expmap_from_quat(quat_mul(a, quat_conjugate(b)))


def quat_angle(q):
    """Geodesic rotation angle of q in [0, pi]."""
    q = quat_normalize(q)
    return 2.0 * np.arctan2(np.linalg.norm(q[..., 1:], axis=-1), q[..., 0])


def skew(v):
    v = np.asarray(v, dtype=np.float64)
    m = np.zeros(v.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 1] = -v[..., 2]
    m[..., 0, 2] = v[..., 1]
    m[..., 1, 0] = v[..., 2]
    m[..., 1, 2] = -v[..., 0]
    m[..., 2, 0] = -v[..., 1]
    m[..., 2, 1] = v[..., 0]
    return m


def so3_right_jacobian(e):
    """Right Jacobian J_r of the SO(3) exponential map.

    Satisfies Exp(e + d) = Exp(e) @ Exp(J_r(e) d) to first order in d, which
    is what converts body-frame rotation gradients into exponential-map
    gradients.
    """
    e = np.asarray(e, dtype=np.float64)
    theta2 = np.sum(e * e, axis=-1)
    theta = np.sqrt(theta2)
    small = theta < 1e-6
    safe2 = np.where(small, 1.0, theta2)
    safe3 = np.where(small, 1.0, theta2 * theta)
    # (1-cos t)/t^2 and (t-sin t)/t^3 with Taylor fallbacks
    c1 = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(theta)) / safe2)
    c2 = np.where(small, 1.0 / 6.0 - theta2 / 120.0, (theta - np.sin(theta)) / safe3)
    k = skew(e)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye - c1[..., np.newaxis, np.newaxis] * k + c2[..., np.newaxis, np.newaxis] * (k @ k)


def finite_diff(seq, fps, order=1):
    """Order-k forward differences of a sampled sequence, scaled by fps^k.

    Output has the same length as the input; the trailing ``order`` entries
    replicate the last computable value so downstream sums can iterate over
    every frame.

    Parameters
    ----------
    seq : (N, ...) array
    fps : sampling rate in frames per second
    order : 1, 2 or 3
    """
    seq = np.asarray(seq, dtype=np.float64)
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    n = seq.shape[0]
    if n < order + 1:
        raise ValueError(
            f"insufficient frames: need at least {order + 1}, got {n}"
        )
    d = np.diff(seq, n=order, axis=0) * float(fps) ** order
    tail = np.repeat(d[-1:], order, axis=0)
    return np.concatenate([d, tail], axis=0)


def heading_from_quat(q, fallback=0.0, eps=1e-6):
    """Heading angle (about world up) of a single root rotation.

    Projects the rotated forward axis (+x) onto the horizontal plane. If the
    projection is degenerate (looking straight up or down), returns
    ``fallback``.
    """
    fwd = quat_rotate(q, np.array([1.0, 0.0, 0.0]))
    nxy = np.hypot(fwd[..., 0], fwd[..., 1])
    heading = np.arctan2(fwd[..., 1], fwd[..., 0])
    return np.where(nxy < eps, fallback, heading)


def headings_with_fallback(quats, eps=1e-6):
    """Per-frame headings for a (N, 4) rotation sequence.

    Degenerate frames inherit the previous frame's heading; a degenerate
    first frame gets heading 0.
    """
    quats = np.asarray(quats, dtype=np.float64)
    fwd = quat_rotate(quats, np.array([1.0, 0.0, 0.0]))
    nxy = np.hypot(fwd[:, 0], fwd[:, 1])
    raw = np.arctan2(fwd[:, 1], fwd[:, 0])
    out = np.empty(len(quats), dtype=np.float64)
    prev = 0.0
    for i in range(len(quats)):
        if nxy[i] >= eps:
            prev = raw[i]
        out[i] = prev
    return out


@dataclass(frozen=True)
class LocalFrame:
    """A horizontal reference frame: origin in world space plus a heading.

    The frame's x-axis points along ``heading`` (radians about world up),
    its z-axis is the global up vector. Heights sampled relative to this
    frame are measured from ``origin[2]``.
    """

    origin: np.ndarray
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))
        object.__setattr__(self, "heading", float(self.heading))

    def world_to_local(self, points):
        """Map world points (..., 3) into this frame."""
        p = np.asarray(points, dtype=np.float64) - self.origin
        c, s = np.cos(-self.heading), np.sin(-self.heading)
        out = p.copy()
        out[..., 0] = c * p[..., 0] - s * p[..., 1]
        out[..., 1] = s * p[..., 0] + c * p[..., 1]
        return out

    def local_to_world(self, points):
        """Map frame-local points (..., 3) back to world space."""
        p = np.asarray(points, dtype=np.float64)
        c, s = np.cos(self.heading), np.sin(self.heading)
        out = p.copy()
        out[..., 0] = c * p[..., 0] - s * p[..., 1]
        out[..., 1] = s * p[..., 0] + c * p[..., 1]
        return out + self.origin
