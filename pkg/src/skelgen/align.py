"""Canonical-orientation recovery for skeleton datasets.

Canonical convention: forward +Z, up +Y, left +X. A frame is the rotation
taking model coordinates onto that convention. Recovery methods are tried in
order — joint names, structural symmetry, principal directions, orientation
oracle — and each either produces a frame or defers to the next.
"""

from __future__ import annotations

import re
import warnings
from collections import deque
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from . import kernels
from .geometry import angle_deg, unit
from .graphs import SkeletonGraph, normalize


class AlignmentFailed(RuntimeError):
    """No recovery method produced a frame and no oracle was allowed."""


@dataclass(frozen=True)
class AlignConfig:
    """Heuristic thresholds; none of these come from measured data, so they
    stay visible and overridable."""

    length_ratio_lo: float = 0.8
    length_ratio_hi: float = 1.25
    mirror_angle_deg: float = 20.0
    degenerate_angle_deg: float = 15.0
    long_bone_factor: float = 2.0
    fan_min_bones: int = 3

    def __post_init__(self):
        if not 0.0 < self.length_ratio_lo <= 1.0 <= self.length_ratio_hi:
            raise ValueError("length ratio window must bracket 1")
        if self.mirror_angle_deg <= 0.0 or self.degenerate_angle_deg <= 0.0:
            raise ValueError("angle thresholds must be positive")
        if self.long_bone_factor <= 1.0:
            raise ValueError("long bone factor must exceed 1")
        if self.fan_min_bones < 2:
            raise ValueError("fan rule needs at least 2 bones")


DEFAULT_CONFIG = AlignConfig()

_METHODS = ("joint_name", "structural", "principal", "oracle")


@dataclass(frozen=True)
class CanonicalFrame:
    """A model-to-canonical rotation with provenance.

    Rows of `rotation` are the recovered left/up/forward directions in model
    coordinates. `low_confidence` marks frames whose front/back choice rests
    on a weak cue."""

    rotation: np.ndarray
    method: str
    notes: tuple[str, ...] = ()
    low_confidence: bool = False

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        r = np.asarray(self.rotation, dtype=np.float64).copy()
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if (np.abs(r @ r.T - np.eye(3)).max() > 1e-6
                or abs(float(np.linalg.det(r)) - 1.0) > 1e-6):
            raise ValueError("rotation is not right-handed orthonormal")
        r.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "notes", tuple(self.notes))


@dataclass(frozen=True)
class BoneSegment:
    start: np.ndarray
    end: np.ndarray
    weight: float = 1.0

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))

    @property
    def direction(self) -> np.ndarray:
        return unit(self.end - self.start)


def choose_root(graph: SkeletonGraph) -> int:
    """Joint closest on average to all others; ties go to the lowest index."""
    pts = graph.joints
    if pts.shape[0] == 0:
        raise ValueError("empty graph has no root")
    if pts.shape[0] == 1:
        return 0
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return int(np.argmin(dist.sum(axis=1)))


def _oriented_bones(graph: SkeletonGraph, root: int) -> list[tuple[int, int]]:
    """Unique edges ordered parent-to-child walking out from the root."""
    neighbors: dict[int, list[int]] = {}
    for i, j in graph.unique_edges():
        neighbors.setdefault(i, []).append(j)
        neighbors.setdefault(j, []).append(i)
    out = []
    seen = {root}
    queue = deque([root])
    while queue:
        cur = queue.popleft()
        for nxt in sorted(neighbors.get(cur, ())):
            if nxt in seen:
                continue
            seen.add(nxt)
            out.append((cur, nxt))
            queue.append(nxt)
    # cycles leave some edges unordered; keep their stored orientation
    covered = {tuple(sorted(e)) for e in out}
    for e in graph.unique_edges():
        if tuple(sorted(e)) not in covered:
            out.append(e)
    return out


def preprocess(graph: SkeletonGraph,
               config: AlignConfig = DEFAULT_CONFIG) -> list[BoneSegment]:
    """Root-oriented bone segments with outliers down-weighted.

    Bones longer than `long_bone_factor` times the median get weight
    2*median/length (tails stop dominating direction averages), and fans of
    `fan_min_bones`-or-more bones sharing a start joint collapse into one
    averaged representative."""
    root = graph.root if graph.root is not None else choose_root(graph)
    pts = graph.joints
    bones = _oriented_bones(graph, root)
    if not bones:
        return []

    by_start: dict[int, list[int]] = {}
    for i, j in bones:
        by_start.setdefault(i, []).append(j)
    segments = []
    for i in sorted(by_start):
        ends = by_start[i]
        if len(ends) >= config.fan_min_bones:
            segments.append((pts[i], pts[ends].mean(axis=0)))
        else:
            segments.extend((pts[i], pts[j]) for j in ends)

    lengths = np.array([float(np.linalg.norm(b - a)) for a, b in segments])
    median = float(np.median(lengths))
    out = []
    for (a, b), length in zip(segments, lengths):
        weight = 1.0
        if median > 0.0 and length > config.long_bone_factor * median:
            weight = min(1.0, config.long_bone_factor * median / length)
        out.append(BoneSegment(a.copy(), b.copy(), weight))
    return out


def mirror_symmetry_error(graph: SkeletonGraph, axis: np.ndarray) -> float:
    """Symmetric mean nearest-neighbor distance between the joint set and its
    reflection across the centroid plane normal to `axis`."""
    n = unit(axis)
    pts = graph.joints
    centered = pts - pts.mean(axis=0)
    reflected = pts - 2.0 * np.outer(centered @ n, n)
    d_ab = kernels.nn_dist(reflected, pts)
    d_ba = kernels.nn_dist(pts, reflected)
    return 0.5 * (float(d_ab.mean()) + float(d_ba.mean()))


def _mirror_dir(d: np.ndarray, n: np.ndarray) -> np.ndarray:
    return d - 2.0 * float(d @ n) * n


def _line_angle(u: np.ndarray, v: np.ndarray) -> float:
    a = angle_deg(u, v)
    return min(a, 180.0 - a)


def _length_compatible(a: BoneSegment, b: BoneSegment,
                       config: AlignConfig) -> bool:
    la, lb = a.length, b.length
    if la == 0.0 or lb == 0.0:
        return False
    ratio = la / lb
    return config.length_ratio_lo <= ratio <= config.length_ratio_hi


def _candidate_axes(segments: list[BoneSegment],
                    config: AlignConfig) -> list[np.ndarray]:
    """Mirror-axis candidates: the coordinate axes plus directions implied by
    every length-compatible segment pair (direction difference and start
    offset), deduplicated up to sign."""
    cands = [np.eye(3)[k] for k in range(3)]
    for i in range(len(segments)):
        for j in range(i + 1, len(segments)):
            if not _length_compatible(segments[i], segments[j], config):
                continue
            for vec in (segments[i].direction - segments[j].direction,
                        segments[i].start - segments[j].start):
                if float(np.linalg.norm(vec)) > 1e-8:
                    cands.append(unit(vec))
    # Dedupe only coincident axes (up to sign): a merely similar candidate
    # must stay, since evicting the exact mirror axis in favor of a slightly
    # off one ruins the symmetry score it would have earned.
    kept: list[np.ndarray] = []
    for c in cands:
        if all(abs(float(c @ k)) < 1.0 - 1e-12 for k in kept):
            kept.append(c)
    return kept


def _qualifying_pairs(segments: list[BoneSegment], axis: np.ndarray,
                      config: AlignConfig) -> list[tuple[int, int]]:
    pairs = []
    for i in range(len(segments)):
        for j in range(i + 1, len(segments)):
            if not _length_compatible(segments[i], segments[j], config):
                continue
            mirrored = _mirror_dir(segments[j].direction, axis)
            if angle_deg(segments[i].direction, mirrored) < config.mirror_angle_deg:
                pairs.append((i, j))
    return pairs


def _forward_sign_fix(pts: np.ndarray, x: np.ndarray, y: np.ndarray,
                      z: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    """Resolve front/back by the skew of joint mass along the forward axis:
    features like toes and noses stick out frontward. The up component is
    regressed out first, otherwise a slight frame lean lets the (much larger)
    vertical spread leak into the cue. Flipping x together with z preserves
    handedness and the up axis."""
    centered = pts - pts.mean(axis=0)
    dz = centered @ z
    dy = centered @ y
    denom = float(dy @ dy)
    if denom > 0.0:
        dz = dz - (float(dy @ dz) / denom) * dy
    skew = float(np.sum(dz ** 3))
    if skew < 0.0:
        return -x, -z, False
    return x, z, skew == 0.0


def _assemble(x: np.ndarray, y: np.ndarray, method: str, pts: np.ndarray,
              notes: tuple[str, ...]) -> CanonicalFrame:
    z = np.cross(x, y)
    x, z, ambiguous = _forward_sign_fix(pts, x, y, z)
    if ambiguous:
        notes = notes + ("front-back cue vanished; sign arbitrary",)
    notes = notes + ("front-back chosen by forward joint-mass skew",)
    return CanonicalFrame(np.stack([x, y, z]), method, notes,
                          low_confidence=True)


def align_by_structure(graph: SkeletonGraph,
                       config: AlignConfig = DEFAULT_CONFIG) -> CanonicalFrame | None:
    """Frame from bilateral symmetry: paired bones vote for a mirror axis,
    the longest qualifying pair acts as the legs, and their negated mean
    direction is up."""
    segments = preprocess(graph, config)
    if len(segments) < 2:
        return None

    best_axis = None
    best_pairs: list[tuple[int, int]] = []
    best_err = np.inf
    for axis in _candidate_axes(segments, config):
        pairs = _qualifying_pairs(segments, axis, config)
        if not pairs:
            continue
        err = mirror_symmetry_error(graph, axis)
        if err < best_err:
            best_axis, best_pairs, best_err = axis, pairs, err
    if best_axis is None:
        return None

    def pair_size(pair):
        a, b = segments[pair[0]], segments[pair[1]]
        return 0.5 * (a.length + b.length) * min(a.weight, b.weight)

    legs = max(best_pairs, key=pair_size)
    up_raw = -(segments[legs[0]].direction + segments[legs[1]].direction)
    if float(np.linalg.norm(up_raw)) < 1e-8:
        return None
    y = unit(up_raw)
    if _line_angle(best_axis, y) < config.degenerate_angle_deg:
        return None
    x = unit(best_axis - float(best_axis @ y) * y)
    return _assemble(x, y, "structural", graph.joints,
                     ("mirror axis from paired bones", "up from leg pair"))


_SIDE_TOKENS = {"l": "l", "left": "l", "r": "r", "right": "r"}
_UP_TOKENS = {"head", "neck", "spine"}
_FOOT_TOKENS = {"foot", "ankle"}
_TOE_TOKENS = {"toe", "toes"}


def _name_tokens(name: str) -> list[str]:
    spaced = re.sub(r"([a-z0-9])([A-Z])", r"\1_\2", name)
    return [t for t in re.split(r"[\s._\-]+", spaced.lower()) if t]


def parse_joint_name(name: str) -> tuple[str | None, str]:
    """Split a joint name into (side, stem); side is 'l', 'r', or None.

    Handles suffix/prefix/camel/dotted conventions: hand_l, left_hand,
    LeftHand, hand.L, l_hand all parse to ('l', 'hand')."""
    tokens = _name_tokens(name)
    side = None
    stem_tokens = []
    for t in tokens:
        if side is None and t in _SIDE_TOKENS:
            side = _SIDE_TOKENS[t]
        else:
            stem_tokens.append(t)
    return side, "_".join(stem_tokens)


def align_by_joint_names(graph: SkeletonGraph,
                         config: AlignConfig = DEFAULT_CONFIG) -> CanonicalFrame | None:
    """Frame from naming conventions: head/neck/spine joints point up,
    left/right pairs span the lateral axis, and toes sit forward of feet.

    Applies only when all three cues are present and mutually non-degenerate;
    otherwise the caller falls through to the next method."""
    if graph.joint_names is None:
        return None
    pts = graph.joints
    root = graph.root if graph.root is not None else choose_root(graph)
    parsed = [parse_joint_name(n) for n in graph.joint_names]

    up_idx = [k for k, (_, stem) in enumerate(parsed)
              if _UP_TOKENS & set(stem.split("_"))]
    if not up_idx:
        return None
    up_raw = pts[up_idx].mean(axis=0) - pts[root]

    sided: dict[tuple[str, str], list[int]] = {}
    for k, (side, stem) in enumerate(parsed):
        if side is not None and stem:
            sided.setdefault((stem, side), []).append(k)
    lateral = []
    for (stem, side), idx in sided.items():
        if side == "l" and (stem, "r") in sided:
            lateral.append(pts[idx].mean(axis=0)
                           - pts[sided[(stem, "r")]].mean(axis=0))
    if not lateral:
        return None
    x_raw = np.mean(lateral, axis=0)

    toe_idx = [k for k, (_, stem) in enumerate(parsed)
               if _TOE_TOKENS & set(stem.split("_"))]
    foot_idx = [k for k, (_, stem) in enumerate(parsed)
                if _FOOT_TOKENS & set(stem.split("_"))]
    if not toe_idx or not foot_idx:
        return None
    fwd_raw = pts[toe_idx].mean(axis=0) - pts[foot_idx].mean(axis=0)

    for vec in (up_raw, x_raw, fwd_raw):
        if float(np.linalg.norm(vec)) < 1e-8:
            return None
    if (_line_angle(up_raw, x_raw) < config.degenerate_angle_deg
            or _line_angle(up_raw, fwd_raw) < config.degenerate_angle_deg
            or _line_angle(x_raw, fwd_raw) < config.degenerate_angle_deg):
        return None

    y = unit(up_raw)
    x = unit(x_raw - float(x_raw @ y) * y)
    z_raw = fwd_raw - float(fwd_raw @ y) * y - float(fwd_raw @ x) * x
    if float(np.linalg.norm(z_raw)) < 1e-8:
        return None
    z = unit(z_raw)
    notes = ["up from head/neck/spine", "lateral from left-right pairs",
             "forward from toe-foot displacement"]
    if float(np.cross(x, y) @ z) < 0.0:
        x = -x
        notes.append("lateral axis flipped to restore handedness")
    return CanonicalFrame(np.stack([x, y, z]), "joint_name", tuple(notes))


def align_by_principal(graph: SkeletonGraph, category: str | None = None,
                       config: AlignConfig = DEFAULT_CONFIG) -> CanonicalFrame | None:
    """Frame from raw geometry: mirror axis as in the structural method, up
    from the leading principal component (humanlike) or the weighted mean
    bone direction (plants, animals)."""
    pts = graph.joints
    if pts.shape[0] < 2:
        return None
    segments = preprocess(graph, config)

    best_axis = None
    best_err = np.inf
    for axis in _candidate_axes(segments, config):
        err = mirror_symmetry_error(graph, axis)
        if err < best_err:
            best_axis, best_err = axis, err
    if best_axis is None:
        return None

    if category in ("plant", "animal") and segments:
        weighted = sum(s.weight * s.direction for s in segments)
        if float(np.linalg.norm(weighted)) < 1e-8:
            return None
        up_raw = np.asarray(weighted, dtype=np.float64)
        note = "up from weighted mean bone direction"
    else:
        centered = pts - pts.mean(axis=0)
        cov = centered.T @ centered / pts.shape[0]
        _, vecs = np.linalg.eigh(cov)
        up_raw = vecs[:, -1]
        root = graph.root if graph.root is not None else choose_root(graph)
        if float((pts[root] - pts.mean(axis=0)) @ up_raw) > 0.0:
            up_raw = -up_raw
        note = "up from leading principal component, root on the lower half"

    y = unit(up_raw)
    if _line_angle(best_axis, y) < config.degenerate_angle_deg:
        return None
    x = unit(best_axis - float(best_axis @ y) * y)
    return _assemble(x, y, "principal", pts, ("mirror axis from joint symmetry", note))


# ---------------------------------------------------------------------------
# Orientation oracle: an external judge (ultimately a vision model) that maps
# three orthographic joint projections onto view labels. Only the deterministic
# identity mock ships here.
# ---------------------------------------------------------------------------

PLANE_LABELS = ("xy", "zy", "xz")
_PLANE_NORMAL = {"xy": 2, "zy": 0, "xz": 1}
_PLANE_COORDS = {"xy": (0, 1), "zy": (2, 1), "xz": (0, 2)}


@dataclass(frozen=True)
class OracleRequest:
    projections: dict[str, np.ndarray]
    category: str | None = None


@dataclass(frozen=True)
class OracleResponse:
    """Which projection plane shows the front, side, and top views."""

    front: str
    side: str
    top: str

    def __post_init__(self):
        labels = (self.front, self.side, self.top)
        if sorted(labels) != sorted(PLANE_LABELS):
            raise ValueError(f"views must name the planes {PLANE_LABELS} "
                             f"exactly once each, got {labels}")


@runtime_checkable
class OrientationOracle(Protocol):
    def assign_views(self, request: OracleRequest) -> OracleResponse: ...


class IdentityOracle:
    """Mock oracle: always answers that the model is already canonical."""

    def assign_views(self, request: OracleRequest) -> OracleResponse:
        warnings.warn("orientation oracle mock in use; assuming the model "
                      "is already canonical")
        return OracleResponse(front="xy", side="zy", top="xz")


def oracle_request(graph: SkeletonGraph) -> OracleRequest:
    pts = graph.joints
    projections = {label: pts[:, _PLANE_COORDS[label]].copy()
                   for label in PLANE_LABELS}
    return OracleRequest(projections, graph.category)


def align_by_oracle(graph: SkeletonGraph,
                    oracle: OrientationOracle) -> CanonicalFrame:
    """Frame from an oracle's view assignment. Plane labels pin each axis
    only up to sign, so the result is marked low confidence."""
    response = oracle.assign_views(oracle_request(graph))
    basis = np.eye(3)
    x = basis[_PLANE_NORMAL[response.side]]
    y = basis[_PLANE_NORMAL[response.top]]
    z = basis[_PLANE_NORMAL[response.front]]
    if float(np.cross(x, y) @ z) < 0.0:
        x = -x
    return CanonicalFrame(np.stack([x, y, z]), "oracle",
                          ("axes fixed up to sign by view assignment",),
                          low_confidence=True)


def align(graph: SkeletonGraph, config: AlignConfig = DEFAULT_CONFIG,
          oracle: OrientationOracle | None = IdentityOracle(),
          category: str | None = None) -> tuple[SkeletonGraph, CanonicalFrame]:
    """Rotate a skeleton into the canonical frame and renormalize.

    Animal models go straight to the oracle (their geometry defeats the
    heuristics); everything else walks joint-name, structural, and principal
    methods before falling back. Pass oracle=None to fail instead of falling
    back."""
    category = category if category is not None else graph.category
    frame = None
    if category == "animal":
        if oracle is not None:
            frame = align_by_oracle(graph, oracle)
    else:
        frame = (align_by_joint_names(graph, config)
                 or align_by_structure(graph, config)
                 or align_by_principal(graph, category, config))
        if frame is None and oracle is not None:
            frame = align_by_oracle(graph, oracle)
    if frame is None:
        raise AlignmentFailed("no orientation method applied and no oracle "
                              "to fall back on")
    pts = graph.joints
    center = pts.mean(axis=0)
    rotated = (pts - center) @ frame.rotation.T + center
    return normalize(graph.with_joints(rotated)), frame
