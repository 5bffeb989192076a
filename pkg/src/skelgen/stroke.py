"""Stroke simulation and corruption.

Training strokes come from projecting a skeleton to a random canonical view
and perturbing it like a wobbly hand drawing. Evaluation-time corruption
drops joints, contracting through degree-2 joints so the drawing stays a
plausible connected sketch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import SkeletonGraph, StrokeGraph2D, project

_VIEWS = ("front", "side", "top")


@dataclass
class StrokeSimConfig:
    view_probs: tuple[float, float, float] = (0.6, 0.2, 0.2)  # front, side, top
    sigma_jitter: float = 0.02
    max_rotation_deg: float = 10.0
    scale_range: tuple[float, float] = (0.95, 1.05)

    def __post_init__(self):
        if abs(sum(self.view_probs) - 1.0) > 1e-9:
            raise ValueError("view probabilities must sum to 1")
        if self.sigma_jitter < 0 or self.max_rotation_deg < 0:
            raise ValueError("perturbation magnitudes must be non-negative")
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise ValueError("bad scale range")


def simulate_stroke(graph: SkeletonGraph, rng: np.random.Generator,
                    config: StrokeSimConfig | None = None) -> StrokeGraph2D:
    """Project to a random view, jitter each joint, rotate, scale.

    Draw order from `rng` is fixed (view, jitter, rotation, scale) so seeded
    runs reproduce exactly. Output coordinates are clipped to the [-1,1]
    canvas, which keeps the result a valid stroke graph.
    """
    cfg = config or StrokeSimConfig()
    view = _VIEWS[int(rng.choice(3, p=cfg.view_probs))]
    flat = project(graph, view)
    pts = flat.joints2d.copy()
    pts += rng.normal(0.0, cfg.sigma_jitter, pts.shape)
    angle = np.radians(rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg))
    c, s = np.cos(angle), np.sin(angle)
    pts = pts @ np.array([[c, -s], [s, c]]).T
    pts *= rng.uniform(*cfg.scale_range)
    np.clip(pts, -1.0, 1.0, out=pts)
    return StrokeGraph2D(pts, graph.edges, view_tag=view)


def _drop_one(n: int, edges: set[tuple[int, int]], victim: int):
    """Remove one joint; a degree-2 joint's neighbors get reconnected."""
    nbrs = sorted({j for i, j in edges if i == victim}
                  | {i for i, j in edges if j == victim})
    edges = {e for e in edges if victim not in e}
    if len(nbrs) == 2:
        a, b = nbrs
        edges.add((a, b) if a < b else (b, a))
    # compact indices above the victim
    remap = lambda i: i if i < victim else i - 1
    return {(remap(i), remap(j)) for i, j in edges}


def _connected(n: int, edges) -> bool:
    if n <= 1:
        return True
    seen = {0}
    frontier = [0]
    adj = {i: [] for i in range(n)}
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    while frontier:
        cur = frontier.pop()
        for nxt in adj[cur]:
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return len(seen) == n


def _largest_component(n: int, edges):
    adj = {i: [] for i in range(n)}
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    unvisited = set(range(n))
    best: list[int] = []
    while unvisited:
        start = min(unvisited)
        comp = {start}
        stack = [start]
        unvisited.discard(start)
        while stack:
            cur = stack.pop()
            for nxt in adj[cur]:
                if nxt in unvisited:
                    unvisited.discard(nxt)
                    comp.add(nxt)
                    stack.append(nxt)
        if len(comp) > len(best):
            best = sorted(comp)
    return best


def drop_joints(stroke: StrokeGraph2D, k: int,
                rng: np.random.Generator, max_retries: int = 10) -> StrokeGraph2D:
    """Drop k uniformly chosen joints, contracting through degree-2 joints.

    If a draw disconnects the graph, it is redrawn (up to `max_retries`);
    as a last resort the largest connected component survives.
    """
    n = stroke.n_joints
    if k >= n:
        raise ValueError(f"cannot drop {k} of {n} joints")
    if k == 0:
        return stroke

    last = None
    for _ in range(max_retries + 1):
        victims = sorted(int(v) for v in rng.choice(n, size=k, replace=False))
        pts = [tuple(p) for p in stroke.joints2d]
        edges = set(stroke.edges)
        m = n
        # process in descending index order so earlier indices stay valid
        for victim in sorted(victims, reverse=True):
            edges = _drop_one(m, edges, victim)
            del pts[victim]
            m -= 1
        last = (pts, edges)
        if _connected(m, edges):
            return StrokeGraph2D(np.array(pts), sorted(edges),
                                 view_tag=stroke.view_tag, text=stroke.text)

    pts, edges = last
    keep = _largest_component(len(pts), edges)
    index = {old: new for new, old in enumerate(keep)}
    kept_edges = sorted((index[i], index[j]) for i, j in edges
                        if i in index and j in index)
    return StrokeGraph2D(np.array([pts[i] for i in keep]), kept_edges,
                         view_tag=stroke.view_tag, text=stroke.text)
