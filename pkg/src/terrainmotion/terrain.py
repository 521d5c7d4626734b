"""2.5D box terrain: signed distances, local heightmaps, generation, augmentation.

A terrain is a grid of axis-aligned boxes. Cell ``(i, j)`` is a box centered
at ``(x0 + i*dx, y0 + j*dy)`` whose top surface sits at ``heights[i, j]`` and
whose bottom extends to -inf, so the solid has no overhangs and the signed
distance to the whole terrain is the min over per-cell box distances.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .rotmath import LocalFrame

DEFAULT_CELL = 0.4
HEIGHTMAP_SIZE = 31
HEIGHTMAP_EXTENT = HEIGHTMAP_SIZE * DEFAULT_CELL  # 12.4 m footprint


@dataclass(frozen=True)
class TerrainGrid:
    """Immutable 2.5D heightmap of boxes with infinite-depth bottoms."""

    x0: float
    y0: float
    dx: float
    dy: float
    heights: np.ndarray

    def __post_init__(self):
        if self.dx <= 0 or self.dy <= 0:
            raise ValueError("cell dimensions must be positive")
        h = np.array(self.heights, dtype=np.float64)
        if h.ndim != 2:
            raise ValueError("heights must be a 2D array")
        if not np.all(np.isfinite(h)):
            raise ValueError("heights must be finite")
        h.setflags(write=False)
        object.__setattr__(self, "heights", h)
        object.__setattr__(self, "x0", float(self.x0))
        object.__setattr__(self, "y0", float(self.y0))
        object.__setattr__(self, "dx", float(self.dx))
        object.__setattr__(self, "dy", float(self.dy))

    @property
    def shape(self):
        return self.heights.shape

    def cell_center(self, i, j):
        """World xy of the center of cell (i, j)."""
        return np.array([self.x0 + i * self.dx, self.y0 + j * self.dy])

    def cell_index(self, x, y, clip=True):
        """Indices of the cell whose box footprint contains (x, y)."""
        i = np.rint((np.asarray(x) - self.x0) / self.dx).astype(int)
        j = np.rint((np.asarray(y) - self.y0) / self.dy).astype(int)
        if clip:
            i = np.clip(i, 0, self.shape[0] - 1)
            j = np.clip(j, 0, self.shape[1] - 1)
        return i, j

    def height_at(self, x, y):
        """Top-surface height of the cell containing (x, y), edge-clamped."""
        i, j = self.cell_index(x, y)
        return self.heights[i, j]


@dataclass(frozen=True)
class LocalHeightmap:
    """A 31x31 patch of terrain heights relative to a local frame.

    ``values[a, b]`` is the terrain top height at frame-local offset
    ``((a - 15) * pitch, (b - 15) * pitch)`` minus the frame origin height.
    """

    values: np.ndarray
    frame: LocalFrame
    extent: float = HEIGHTMAP_EXTENT

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != (HEIGHTMAP_SIZE, HEIGHTMAP_SIZE):
            raise ValueError(f"heightmap must be {HEIGHTMAP_SIZE}x{HEIGHTMAP_SIZE}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def pitch(self):
        return self.extent / HEIGHTMAP_SIZE

    def as_local_terrain(self):
        """Reconstruct the patch as a TerrainGrid in the frame's coordinates.

        Useful for evaluating penetration of canonicalized motion against the
        heightmap it was conditioned on.
        """
        half = (HEIGHTMAP_SIZE - 1) / 2.0
        return TerrainGrid(
            x0=-half * self.pitch,
            y0=-half * self.pitch,
            dx=self.pitch,
            dy=self.pitch,
            heights=self.values,
        )


@dataclass(frozen=True)
class HeightBounds:
    """Per-cell height window that keeps a motion clip free of the terrain.

    Cells never overlapped by any body point carry (-inf, +inf) sentinels.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=np.float64)
        up = np.array(self.upper, dtype=np.float64)
        if lo.shape != up.shape:
            raise ValueError("lower/upper shape mismatch")
        lo.setflags(write=False)
        up.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)


def sd_box(p, center, half_extents):
    """Exact signed distance from point(s) to an axis-aligned box.

    Negative inside. Broadcasts over leading dimensions of ``p``.
    """
    p = np.asarray(p, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    half_extents = np.asarray(half_extents, dtype=np.float64)
    if np.any(half_extents <= 0):
        raise ValueError("half_extents must be positive")
    q = np.abs(p - center) - half_extents
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return outside + inside


def _column_sd(ax, ay, qz, hx, hy):
    """Signed distance to a semi-infinite box column.

    ``ax, ay`` are offsets from the column center, ``qz = z - top``,
    ``hx, hy`` the half extents. The column has no bottom face.
    """
    qx = np.abs(ax) - hx
    qy = np.abs(ay) - hy
    outside = np.sqrt(
        np.maximum(qx, 0.0) ** 2 + np.maximum(qy, 0.0) ** 2 + np.maximum(qz, 0.0) ** 2
    )
    inside = np.minimum(np.maximum(np.maximum(qx, qy), qz), 0.0)
    return outside + inside


def _column_sd_grad(ax, ay, qz, hx, hy):
    """Column signed distance and its gradient w.r.t. the query point."""
    qx = np.abs(ax) - hx
    qy = np.abs(ay) - hy
    px = np.maximum(qx, 0.0)
    py = np.maximum(qy, 0.0)
    pz = np.maximum(qz, 0.0)
    out_len = np.sqrt(px * px + py * py + pz * pz)
    sd = out_len + np.minimum(np.maximum(np.maximum(qx, qy), qz), 0.0)

    grad = np.zeros(np.broadcast(ax, ay, qz).shape + (3,), dtype=np.float64)
    outside = out_len > 0.0
    safe = np.where(outside, out_len, 1.0)
    grad[..., 0] = np.where(outside, px * np.sign(ax) / safe, 0.0)
    grad[..., 1] = np.where(outside, py * np.sign(ay) / safe, 0.0)
    grad[..., 2] = np.where(outside, pz / safe, 0.0)

    # interior subgradient: unit normal of the nearest face, ties resolved
    # in x, y, z order
    inside = ~outside
    if np.any(inside):
        qmax = np.maximum(np.maximum(qx, qy), qz)
        take_x = inside & (qx >= qmax)
        take_y = inside & ~take_x & (qy >= qmax)
        take_z = inside & ~take_x & ~take_y
        grad[..., 0] = np.where(take_x, np.sign(ax), grad[..., 0])
        grad[..., 1] = np.where(take_y, np.sign(ay), grad[..., 1])
        grad[..., 2] = np.where(take_z, 1.0, grad[..., 2])
    return sd, grad


def _window_min(terrain, pts, i0, j0, radius, want_grad):
    """Min column distance over an index window around (i0, j0) per point."""
    n, m = terrain.shape
    hx, hy = terrain.dx / 2.0, terrain.dy / 2.0
    offs = np.arange(-radius, radius + 1)
    ii = np.clip(i0[:, None] + offs[None, :], 0, n - 1)  # (P, W)
    jj = np.clip(j0[:, None] + offs[None, :], 0, m - 1)
    iw = np.repeat(ii[:, :, None], len(offs), axis=2)  # (P, W, W)
    jw = np.repeat(jj[:, None, :], len(offs), axis=1)
    cx = terrain.x0 + iw * terrain.dx
    cy = terrain.y0 + jw * terrain.dy
    tops = terrain.heights[iw, jw]
    ax = pts[:, None, None, 0] - cx
    ay = pts[:, None, None, 1] - cy
    qz = pts[:, None, None, 2] - tops
    sd = _column_sd(ax, ay, qz, hx, hy)
    flat = sd.reshape(len(pts), -1)
    best = np.argmin(flat, axis=1)
    rows = np.arange(len(pts))
    if not want_grad:
        return flat[rows, best], None
    k = len(offs)
    bi = best // k
    bj = best % k
    _, grad = _column_sd_grad(
        ax[rows, bi, bj], ay[rows, bi, bj], qz[rows, bi, bj], hx, hy
    )
    return flat[rows, best], grad


def _sd_terrain_impl(points, terrain, want_grad, chunk=4096):
    pts = np.asarray(points, dtype=np.float64)
    shape = pts.shape[:-1]
    pts = pts.reshape(-1, 3)
    n, m = terrain.shape
    hx, hy = terrain.dx / 2.0, terrain.dy / 2.0
    h_max = float(terrain.heights.max())

    out = np.empty(len(pts), dtype=np.float64)
    grad = np.zeros((len(pts), 3), dtype=np.float64) if want_grad else None

    for s in range(0, len(pts), chunk):
        p = pts[s : s + chunk]
        gi = np.rint((p[:, 0] - terrain.x0) / terrain.dx).astype(int)
        gj = np.rint((p[:, 1] - terrain.y0) / terrain.dy).astype(int)
        in_grid = (gi >= 0) & (gi < n) & (gj >= 0) & (gj < m)
        i0 = np.clip(gi, 0, n - 1)
        j0 = np.clip(gj, 0, m - 1)
        cx = terrain.x0 + i0 * terrain.dx
        cy = terrain.y0 + j0 * terrain.dy
        ax = p[:, 0] - cx
        ay = p[:, 1] - cy
        qz = p[:, 2] - terrain.heights[i0, j0]
        if want_grad:
            d0, g0 = _column_sd_grad(ax, ay, qz, hx, hy)
        else:
            d0 = _column_sd(ax, ay, qz, hx, hy)
            g0 = None

        # Points strictly inside their own column are decided by it (every
        # other column is at a nonnegative distance). Points whose distance
        # bound d0 cannot be beaten even by a column of maximal height need
        # no window either: any cell at horizontal box distance dh has
        # sd >= hypot(dh, max(z - h_max, 0)).
        gap = np.maximum(p[:, 2] - h_max, 0.0)
        need2 = d0 * d0 - gap * gap
        done = (in_grid & (d0 <= 0.0)) | (need2 <= 1e-18)
        out[s : s + len(p)][done] = d0[done]
        if want_grad:
            grad[s : s + len(p)][done] = g0[done]

        rest = ~done
        if np.any(rest):
            reach = np.sqrt(np.maximum(need2[rest], 0.0))
            radius = int(math.ceil(np.max(reach) / min(terrain.dx, terrain.dy))) + 1
            radius = min(radius, max(n, m))
            sub = np.nonzero(rest)[0]
            sd_w, g_w = _window_min(
                terrain, p[sub], i0[sub], j0[sub], radius, want_grad
            )
            out[s : s + len(p)][rest] = sd_w
            if want_grad:
                grad[s : s + len(p)][rest] = g_w
    if want_grad:
        return out.reshape(shape), grad.reshape(shape + (3,))
    return out.reshape(shape)


def sd_terrain(p, terrain):
    """Signed distance from point(s) to the terrain (min over cell boxes).

    Equals the brute-force min over all cells; negative when the point is
    inside some cell's column.
    """
    if terrain.heights.size == 0:
        raise ValueError("terrain is empty")
    return _sd_terrain_impl(p, terrain, want_grad=False)


def sd_terrain_grad(p, terrain):
    """Signed distance and its gradient w.r.t. the query point(s).

    At non-differentiable points (box edges, ties between cells) a
    deterministic subgradient is returned: the first cell in window scan
    order and the first axis in x, y, z order.
    """
    if terrain.heights.size == 0:
        raise ValueError("terrain is empty")
    return _sd_terrain_impl(p, terrain, want_grad=True)


def sample_local_heightmap(terrain, frame, extent=HEIGHTMAP_EXTENT):
    """Sample a 31x31 heightmap around a local frame.

    Sample points form a uniform grid with pitch ``extent / 31`` placed
    symmetrically about the frame origin and rotated to the frame heading.
    Each value is the top height of the cell containing the sample point,
    minus the frame origin height. Points beyond the terrain bounds clamp to
    the nearest edge cell.
    """
    if extent <= 0:
        raise ValueError("extent must be positive")
    pitch = extent / HEIGHTMAP_SIZE
    half = (HEIGHTMAP_SIZE - 1) / 2.0
    offs = (np.arange(HEIGHTMAP_SIZE) - half) * pitch
    u, v = np.meshgrid(offs, offs, indexing="ij")
    local = np.stack([u, v, np.zeros_like(u)], axis=-1)
    world = frame.local_to_world(local)
    values = terrain.height_at(world[..., 0], world[..., 1]) - frame.origin[2]
    return LocalHeightmap(values=values, frame=frame, extent=extent)


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def flatten_2x2(terrain):
    """Max-pool the grid over aligned 2x2 blocks (stride 2) in place of thin
    one-cell gaps and walls. Odd dimensions are edge-padded before pooling
    and cropped back afterwards."""
    h = terrain.heights
    n, m = h.shape
    pn, pm = n + n % 2, m + m % 2
    padded = np.pad(h, ((0, pn - n), (0, pm - m)), mode="edge")
    pooled = padded.reshape(pn // 2, 2, pm // 2, 2).max(axis=(1, 3))
    out = np.repeat(np.repeat(pooled, 2, axis=0), 2, axis=1)[:n, :m]
    return TerrainGrid(terrain.x0, terrain.y0, terrain.dx, terrain.dy, out)


def gen_random_boxes(
    grid=(16, 16),
    num_boxes=10,
    size_range=(5, 10),
    height_range=(-2.0, 2.0),
    seed=None,
    cell=DEFAULT_CELL,
):
    """Random Boxes terrain: overwrite random constant-height patches on a
    flat base, then 2x2-flatten.

    Patch widths/lengths are drawn in ``size_range`` cells (inclusive) and
    heights uniformly in ``height_range`` meters.
    """
    n, m = grid
    if n < 2 or m < 2:
        raise ValueError("grid must be at least 2x2")
    if size_range[0] < 1 or size_range[1] < size_range[0]:
        raise ValueError("invalid size_range")
    if height_range[1] < height_range[0]:
        raise ValueError("invalid height_range")
    rng = _rng(seed)
    heights = np.zeros((n, m), dtype=np.float64)
    for _ in range(num_boxes):
        w = int(rng.integers(size_range[0], size_range[1] + 1))
        l = int(rng.integers(size_range[0], size_range[1] + 1))
        ci = int(rng.integers(0, n))
        cj = int(rng.integers(0, m))
        h = float(rng.uniform(height_range[0], height_range[1]))
        i0, i1 = max(ci - w // 2, 0), min(ci - w // 2 + w, n)
        j0, j1 = max(cj - l // 2, 0), min(cj - l // 2 + l, m)
        heights[i0:i1, j0:j1] = h
    base = TerrainGrid(0.0, 0.0, cell, cell, heights)
    return flatten_2x2(base)


def random_walk_cells(grid, start, length, rng):
    """Cells visited by a uniform 4-neighborhood random walk kept in bounds."""
    n, m = grid
    i, j = start
    cells = [(i, j)]
    for _ in range(length):
        options = [
            (i + di, j + dj)
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1))
            if 0 <= i + di < n and 0 <= j + dj < m
        ]
        i, j = options[int(rng.integers(0, len(options)))]
        cells.append((i, j))
    return cells


def gen_random_walk(
    grid=(32, 32),
    num_paths=10,
    height_range=(-2.0, 2.0),
    seed=None,
    cell=DEFAULT_CELL,
):
    """Random-walk terrain: carve connected corridors at random heights on a
    flat base. Walk length is 3x the larger grid dimension."""
    n, m = grid
    if n < 4 or m < 4:
        raise ValueError("grid must be at least 4x4")
    if height_range[1] < height_range[0]:
        raise ValueError("invalid height_range")
    rng = _rng(seed)
    heights = np.zeros((n, m), dtype=np.float64)
    length = 3 * max(n, m)
    for _ in range(num_paths):
        h = float(rng.uniform(height_range[0], height_range[1]))
        start = (int(rng.integers(0, n)), int(rng.integers(0, m)))
        for i, j in random_walk_cells(grid, start, length, rng):
            heights[i, j] = h
    return TerrainGrid(0.0, 0.0, cell, cell, heights)


def slice_terrain(terrain, origin, size):
    """Copy a sub-grid, preserving world coordinates of the shared cells."""
    i0, j0 = origin
    n, m = size
    if i0 < 0 or j0 < 0 or i0 + n > terrain.shape[0] or j0 + m > terrain.shape[1]:
        raise ValueError("slice exceeds terrain bounds")
    return TerrainGrid(
        x0=terrain.x0 + i0 * terrain.dx,
        y0=terrain.y0 + j0 * terrain.dy,
        dx=terrain.dx,
        dy=terrain.dy,
        heights=terrain.heights[i0 : i0 + n, j0 : j0 + m].copy(),
    )


def compute_noninterference_bounds(clip, skeleton, terrain, clearance=1e-3):
    """Per-cell height bounds under which the terrain cannot collide with
    the clip.

    For every cell the upper bound is the lowest overlapping body point
    minus ``clearance``. Cells supporting an in-contact body are pinned
    (lower == upper) at the lowest contact point so the support surface is
    preserved exactly; if a non-contact point dips below that level the
    penetration constraint wins and the pin drops with it.
    """
    from .motion import sample_surface_points

    n, m = terrain.shape
    min_free = np.full((n, m), np.inf)
    min_contact = np.full((n, m), np.inf)
    contact_mask = clip.contacts >= 0.5

    for f in range(clip.num_frames):
        pts, body_ids = sample_surface_points(skeleton, clip.frame(f))
        gi = np.rint((pts[:, 0] - terrain.x0) / terrain.dx).astype(int)
        gj = np.rint((pts[:, 1] - terrain.y0) / terrain.dy).astype(int)
        ok = (gi >= 0) & (gi < n) & (gj >= 0) & (gj < m)
        # body id 0 is the root body, which carries no contact label
        in_contact = np.zeros(len(pts), dtype=bool)
        labeled = body_ids > 0
        in_contact[labeled] = contact_mask[f, body_ids[labeled] - 1]
        for sel, acc in ((ok & ~in_contact, min_free), (ok & in_contact, min_contact)):
            if np.any(sel):
                np.minimum.at(acc, (gi[sel], gj[sel]), pts[sel, 2])

    upper = np.where(np.isinf(min_free), np.inf, min_free - clearance)
    pinned = np.isfinite(min_contact)
    upper = np.where(pinned, np.minimum(upper, min_contact), upper)
    lower = np.where(pinned, upper, -np.inf)
    return HeightBounds(lower=lower, upper=upper)


def augment_with_boxes(
    terrain,
    bounds,
    num_boxes=8,
    seed=None,
    half_extent_range=(1.0, 2.0),
    height_range=(0.1, 2.0),
):
    """Stack randomly rotated boxes on the terrain, then clamp into bounds.

    Each box raises the cells whose centers fall inside its rotated
    footprint by a random height. The final grid is clamped into
    ``[bounds.lower, bounds.upper]`` so a guarded motion stays collision
    free.
    """
    if bounds.lower.shape != terrain.shape:
        raise ValueError("bounds shape does not match terrain")
    rng = _rng(seed)
    n, m = terrain.shape
    heights = terrain.heights.copy()
    ii, jj = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
    cx = terrain.x0 + ii * terrain.dx
    cy = terrain.y0 + jj * terrain.dy
    for _ in range(num_boxes):
        bx = rng.uniform(terrain.x0, terrain.x0 + (n - 1) * terrain.dx)
        by = rng.uniform(terrain.y0, terrain.y0 + (m - 1) * terrain.dy)
        hx = rng.uniform(*half_extent_range)
        hy = rng.uniform(*half_extent_range)
        angle = rng.uniform(0.0, np.pi)
        dh = rng.uniform(*height_range)
        c, s = np.cos(angle), np.sin(angle)
        rx = c * (cx - bx) + s * (cy - by)
        ry = -s * (cx - bx) + c * (cy - by)
        inside = (np.abs(rx) <= hx) & (np.abs(ry) <= hy)
        heights[inside] += dh
    heights = np.clip(heights, bounds.lower, bounds.upper)
    heights = np.where(np.isfinite(heights), heights, terrain.heights)
    return TerrainGrid(terrain.x0, terrain.y0, terrain.dx, terrain.dy, heights)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def terrain_to_dict(terrain):
    n, m = terrain.shape
    return {
        "x0": terrain.x0,
        "y0": terrain.y0,
        "dx": terrain.dx,
        "dy": terrain.dy,
        "rows": n,
        "cols": m,
        "heights": [float(v) for v in terrain.heights.reshape(-1)],
    }


def terrain_from_dict(d):
    heights = np.asarray(d["heights"], dtype=np.float64).reshape(d["rows"], d["cols"])
    return TerrainGrid(d["x0"], d["y0"], d["dx"], d["dy"], heights)


def save_terrain(terrain, path):
    with open(path, "w") as f:
        json.dump(terrain_to_dict(terrain), f, sort_keys=True)
        f.write("\n")


def load_terrain(path):
    with open(path) as f:
        return terrain_from_dict(json.load(f))


def terrain_to_obj(terrain):
    """Wavefront OBJ mesh of the terrain, one box per cell.

    Bottoms are truncated 2 m below the lowest top surface so the mesh is
    finite for offline viewing.
    """
    n, m = terrain.shape
    zmin = float(terrain.heights.min()) - 2.0
    hx, hy = terrain.dx / 2.0, terrain.dy / 2.0
    out = io.StringIO()
    out.write("# terrain mesh: one box per grid cell\n")
    vcount = 0
    for i in range(n):
        for j in range(m):
            cx = terrain.x0 + i * terrain.dx
            cy = terrain.y0 + j * terrain.dy
            top = float(terrain.heights[i, j])
            corners = [
                (cx - hx, cy - hy, zmin),
                (cx + hx, cy - hy, zmin),
                (cx + hx, cy + hy, zmin),
                (cx - hx, cy + hy, zmin),
                (cx - hx, cy - hy, top),
                (cx + hx, cy - hy, top),
                (cx + hx, cy + hy, top),
                (cx - hx, cy + hy, top),
            ]
            for x, y, z in corners:
                out.write(f"v {x:.6f} {y:.6f} {z:.6f}\n")
            b = vcount
            quads = [
                (5, 6, 7, 8),  # top
                (1, 4, 3, 2),  # bottom
                (1, 2, 6, 5),
                (2, 3, 7, 6),
                (3, 4, 8, 7),
                (4, 1, 5, 8),
            ]
            for qd in quads:
                out.write("f " + " ".join(str(b + k) for k in qd) + "\n")
            vcount += 8
    return out.getvalue()


def save_terrain_obj(terrain, path):
    with open(path, "w") as f:
        f.write(terrain_to_obj(terrain))


def terrain_to_csv(terrain):
    out = io.StringIO()
    writer = csv.writer(out)
    for row in terrain.heights:
        writer.writerow([repr(float(v)) for v in row])
    return out.getvalue()


def save_terrain_csv(terrain, path):
    with open(path, "w", newline="") as f:
        f.write(terrain_to_csv(terrain))
