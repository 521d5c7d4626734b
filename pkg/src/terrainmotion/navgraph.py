"""Navigation graph over terrain cells and stochastic-cost A* planning.

Every cell is a node placed at its box center on the top surface. Walk
edges connect 4-adjacent cells within an allowed height difference; jump
edges connect cliff cells across gaps, validated by line-box intersection
against interposed walls.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field

import numpy as np


class NoPathError(Exception):
    """Raised when the goal is unreachable from the start."""


@dataclass(frozen=True)
class NavGraphParams:
    max_walk_dh: float = 2.1       # m, walkable step height
    jump_radius: float = 2.4       # m, horizontal search radius for jumps
    jump_dh: tuple = (-2.1, 1.0)   # m, landing height window
    cliff_drop: float = 1.0        # m, drop that makes a node a cliff node
    clearance: float = 1.2         # m, chord elevation for the wall test


@dataclass(frozen=True)
class NavNode:
    cell: tuple
    pos: np.ndarray


@dataclass
class PathResult:
    waypoints: list
    total_cost: float
    rng_seed: object = None

    def cells(self):
        return [w.cell for w in self.waypoints]


def line_box_intersect(a, b, center, half_extents, eps=1e-9):
    """True iff segment ab intersects the closed axis-aligned box.

    Slab method; the box is inflated by ``eps`` so grazing contacts count.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    half = np.asarray(half_extents, dtype=np.float64) + eps
    if np.array_equal(a, b):
        raise ValueError("degenerate segment")
    d = b - a
    tmin, tmax = 0.0, 1.0
    for ax in range(3):
        lo = center[ax] - half[ax]
        hi = center[ax] + half[ax]
        if abs(d[ax]) < 1e-15:
            if a[ax] < lo or a[ax] > hi:
                return False
        else:
            t1 = (lo - a[ax]) / d[ax]
            t2 = (hi - a[ax]) / d[ax]
            if t1 > t2:
                t1, t2 = t2, t1
            tmin = max(tmin, t1)
            tmax = min(tmax, t2)
            if tmin > tmax:
                return False
    return True


@dataclass
class NavGraph:
    """Directed graph over terrain cells. Immutable once built."""

    terrain: object
    params: NavGraphParams
    positions: np.ndarray          # (num_nodes, 3)
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_kind: np.ndarray          # 0 walk, 1 jump
    _adj_offsets: np.ndarray = field(default=None, repr=False)
    _adj_order: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        order = np.argsort(self.edge_src, kind="stable")
        counts = np.bincount(self.edge_src, minlength=len(self.positions))
        offsets = np.concatenate([[0], np.cumsum(counts)])
        self._adj_order = order
        self._adj_offsets = offsets

    @property
    def num_nodes(self):
        return len(self.positions)

    @property
    def num_edges(self):
        return len(self.edge_src)

    def node_id(self, cell):
        i, j = cell
        n, m = self.terrain.shape
        if not (0 <= i < n and 0 <= j < m):
            raise ValueError(f"cell {cell} outside terrain")
        return i * m + j

    def node(self, node_id):
        m = self.terrain.shape[1]
        return NavNode(cell=(node_id // m, node_id % m), pos=self.positions[node_id])

    def out_edges(self, node_id):
        """Indices into the edge arrays of edges leaving ``node_id``."""
        return self._adj_order[self._adj_offsets[node_id] : self._adj_offsets[node_id + 1]]

    def has_edge(self, src, dst):
        return any(self.edge_dst[e] == dst for e in self.out_edges(src))


def _cliff_mask(heights, drop):
    n, m = heights.shape
    mask = np.zeros((n, m), dtype=bool)
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        src = (slice(max(0, -di), n - max(0, di)), slice(max(0, -dj), m - max(0, dj)))
        dst = (slice(max(0, di), n - max(0, -di)), slice(max(0, dj), m - max(0, -dj)))
        mask[src] |= heights[src] - heights[dst] > drop
    return mask


def build_graph(terrain, params=NavGraphParams()):
    """Construct the navigation graph for a terrain.

    Deterministic: no randomness is involved; stochastic costs are drawn at
    planning time.
    """
    if terrain.heights.size == 0:
        raise ValueError("terrain is empty")
    n, m = terrain.shape
    h = terrain.heights
    ii, jj = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
    positions = np.stack(
        [terrain.x0 + ii * terrain.dx, terrain.y0 + jj * terrain.dy, h], axis=-1
    ).reshape(-1, 3)
    ids = (ii * m + jj).reshape(n, m)

    src, dst, kind = [], [], []
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        fr = (slice(max(0, -di), n - max(0, di)), slice(max(0, -dj), m - max(0, dj)))
        to = (slice(max(0, di), n - max(0, -di)), slice(max(0, dj), m - max(0, -dj)))
        ok = np.abs(h[fr] - h[to]) <= params.max_walk_dh
        src.append(ids[fr][ok])
        dst.append(ids[to][ok])
        kind.append(np.zeros(ok.sum(), dtype=np.int8))

    cliff = _cliff_mask(h, params.cliff_drop)
    cliff_cells = np.argwhere(cliff)
    zfloor = float(h.min()) - 10.0
    r_cells_i = int(np.ceil(params.jump_radius / terrain.dx))
    r_cells_j = int(np.ceil(params.jump_radius / terrain.dy))
    for ci, cj in cliff_cells:
        hu = h[ci, cj]
        for vi in range(max(0, ci - r_cells_i), min(n, ci + r_cells_i + 1)):
            for vj in range(max(0, cj - r_cells_j), min(m, cj + r_cells_j + 1)):
                if (vi == ci and vj == cj) or not cliff[vi, vj]:
                    continue
                if abs(vi - ci) + abs(vj - cj) == 1:
                    continue  # 4-adjacent cells are walk candidates
                dxw = (vi - ci) * terrain.dx
                dyw = (vj - cj) * terrain.dy
                if dxw * dxw + dyw * dyw > params.jump_radius**2:
                    continue
                dh = h[vi, vj] - hu
                if not (params.jump_dh[0] <= dh <= params.jump_dh[1]):
                    continue
                if _jump_blocked(terrain, (ci, cj), (vi, vj), params, zfloor):
                    continue
                src.append(np.array([ids[ci, cj]]))
                dst.append(np.array([ids[vi, vj]]))
                kind.append(np.array([1], dtype=np.int8))

    return NavGraph(
        terrain=terrain,
        params=params,
        positions=positions,
        edge_src=np.concatenate(src).astype(np.int64),
        edge_dst=np.concatenate(dst).astype(np.int64),
        edge_kind=np.concatenate(kind),
    )


def _jump_blocked(terrain, u, v, params, zfloor):
    """Wall test: does the elevated jump chord hit any interposed box?"""
    h = terrain.heights
    a = np.array(
        [
            terrain.x0 + u[0] * terrain.dx,
            terrain.y0 + u[1] * terrain.dy,
            h[u] + params.clearance,
        ]
    )
    b = np.array(
        [
            terrain.x0 + v[0] * terrain.dx,
            terrain.y0 + v[1] * terrain.dy,
            h[v] + params.clearance,
        ]
    )
    chord_floor = min(a[2], b[2])
    i_lo, i_hi = sorted((u[0], v[0]))
    j_lo, j_hi = sorted((u[1], v[1]))
    for wi in range(i_lo, i_hi + 1):
        for wj in range(j_lo, j_hi + 1):
            if (wi, wj) == u or (wi, wj) == v:
                continue
            top = h[wi, wj]
            if top < chord_floor:
                continue  # box entirely below the chord
            center = (
                terrain.x0 + wi * terrain.dx,
                terrain.y0 + wj * terrain.dy,
                (top + zfloor) / 2.0,
            )
            half = (terrain.dx / 2.0, terrain.dy / 2.0, (top - zfloor) / 2.0)
            if line_box_intersect(a, b, center, half):
                return True
    return False


def edge_cost(x1, x2, rng=None, w_xy=1.0, w_z=0.15, c_min=0.0, c_max=0.5):
    """Cost to move between two node positions.

    Squared horizontal distance weighted by ``w_xy`` plus squared vertical
    distance weighted by ``w_z`` plus a uniform draw in [c_min, c_max].
    """
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    base = w_xy * ((x1[0] - x2[0]) ** 2 + (x1[1] - x2[1]) ** 2) + w_z * (x1[2] - x2[2]) ** 2
    if c_max > c_min:
        if rng is None:
            raise ValueError("rng required for stochastic cost")
        return base + float(rng.uniform(c_min, c_max))
    return base + c_min


def astar_plan(graph, start, goal, seed=None, w_xy=1.0, w_z=0.15, c_min=0.0, c_max=0.5):
    """A* search from start cell to goal cell under sampled edge costs.

    The stochastic component is drawn once per edge up front, so path costs
    are well defined. The heuristic ``w_xy * min(dx, dy) * horizontal
    distance`` is consistent for the deterministic part (every edge spans at
    least one cell, so its cost is at least w_xy * min_cell * length), hence
    with ``c_max = 0`` the returned cost equals Dijkstra's.
    """
    if c_min < 0:
        raise ValueError("c_min must be non-negative")
    if c_max < c_min:
        raise ValueError("c_max must be >= c_min")
    if w_xy < 0 or w_z < 0:
        raise ValueError("weights must be non-negative")
    s = graph.node_id(start)
    g = graph.node_id(goal)
    pos = graph.positions
    t = graph.terrain

    base = (
        w_xy
        * (
            (pos[graph.edge_src, 0] - pos[graph.edge_dst, 0]) ** 2
            + (pos[graph.edge_src, 1] - pos[graph.edge_dst, 1]) ** 2
        )
        + w_z * (pos[graph.edge_src, 2] - pos[graph.edge_dst, 2]) ** 2
    )
    if c_max > c_min:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        cost = base + rng.uniform(c_min, c_max, size=graph.num_edges)
    else:
        cost = base + c_min

    hscale = w_xy * min(t.dx, t.dy)

    def heuristic(nid):
        return hscale * float(np.hypot(pos[nid, 0] - pos[g, 0], pos[nid, 1] - pos[g, 1]))

    dist = {s: 0.0}
    parent = {s: None}
    closed = set()
    heap = [(heuristic(s), 0, s)]
    counter = 1
    while heap:
        _, _, u = heapq.heappop(heap)
        if u in closed:
            continue
        if u == g:
            break
        closed.add(u)
        for e in graph.out_edges(u):
            v = int(graph.edge_dst[e])
            nd = dist[u] + float(cost[e])
            if nd < dist.get(v, np.inf):
                dist[v] = nd
                parent[v] = u
                heapq.heappush(heap, (nd + heuristic(v), counter, v))
                counter += 1
    if g not in dist:
        raise NoPathError(f"no path from {start} to {goal}")

    chain = []
    node = g
    while node is not None:
        chain.append(node)
        node = parent[node]
    chain.reverse()
    waypoints = [graph.node(nid) for nid in chain]
    return PathResult(waypoints=waypoints, total_cost=dist[g], rng_seed=seed)


def path_to_dict(path):
    return {
        "cells": [list(w.cell) for w in path.waypoints],
        "positions": [w.pos.tolist() for w in path.waypoints],
        "total_cost": path.total_cost,
        "rng_seed": path.rng_seed,
    }


def path_from_dict(d):
    waypoints = [
        NavNode(cell=tuple(c), pos=np.asarray(p, dtype=np.float64))
        for c, p in zip(d["cells"], d["positions"])
    ]
    return PathResult(waypoints=waypoints, total_cost=d["total_cost"], rng_seed=d.get("rng_seed"))


def save_path(path, file_path):
    with open(file_path, "w") as f:
        json.dump(path_to_dict(path), f, sort_keys=True)
        f.write("\n")


def load_path(file_path):
    with open(file_path) as f:
        return path_from_dict(json.load(f))
