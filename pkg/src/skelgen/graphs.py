"""Skeleton and stroke graph data model, validation, projection, and JSON (de)serialization.

A skeleton is an undirected graph: N joints with 3D coordinates plus an edge
set over joint indices. A stroke graph is the 2D counterpart drawn on the
canvas; it shares the skeleton's edge topology. Both are immutable after
construction. Construction is permissive (bad topology is representable);
`validate` reports problems as machine-readable codes instead of raising.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

CATEGORIES = ("character", "anthropomorphic", "animal", "plant", "other")
VIEW_TAGS = ("front", "side", "top", "free")
MAX_TRAINING_JOINTS = 30

# validation codes
DISCONNECTED = "DISCONNECTED"
DUP_EDGE = "DUP_EDGE"
BAD_INDEX = "BAD_INDEX"
NODE_COUNT = "NODE_COUNT"
NON_FINITE = "NON_FINITE"
UNNORMALIZED = "UNNORMALIZED"

_NORM_TOL = 1e-9
_ROT_TOL = 1e-6


class ParseError(ValueError):
    """Schema violation while reading a graph document.

    `path` is a JSON pointer to the offending element; `code` carries the
    validation code when one applies.
    """

    def __init__(self, message: str, path: str = "", code: str | None = None):
        super().__init__(f"{path or '/'}: {message}" if path else message)
        self.path = path
        self.code = code


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str

    def to_json(self) -> dict:
        return {"code": self.code, "detail": self.detail}


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def codes(self) -> set[str]:
        return {v.code for v in self.violations}

    def to_json(self) -> list[dict]:
        return [v.to_json() for v in self.violations]


def _freeze_coords(arr, width: int, what: str) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64)
    if a.size == 0:
        a = a.reshape(0, width)
    if a.ndim != 2 or a.shape[1] != width:
        raise ValueError(f"{what} must have shape (N, {width}), got {a.shape}")
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _canon_edges(edges) -> tuple[tuple[int, int], ...]:
    out = []
    for e in edges:
        i, j = int(e[0]), int(e[1])
        out.append((i, j) if i <= j else (j, i))
    return tuple(out)


@dataclass(frozen=True, eq=False)
class SkeletonGraph:
    """Joints with 3D coordinates plus an undirected edge set.

    `edges` keeps each pair index-sorted but preserves caller multiplicity so
    that `validate` can report duplicates.
    """

    joints: np.ndarray
    edges: tuple[tuple[int, int], ...]
    joint_names: tuple[str, ...] | None = None
    root: int | None = None
    category: str | None = None
    extra: Mapping | None = field(default=None, compare=False)

    def __init__(self, joints, edges=(), joint_names=None, root=None,
                 category=None, extra=None):
        object.__setattr__(self, "joints", _freeze_coords(joints, 3, "joints"))
        object.__setattr__(self, "edges", _canon_edges(edges))
        if joint_names is not None:
            joint_names = tuple(str(n) for n in joint_names)
            if len(joint_names) != self.n_joints:
                raise ValueError("joint_names length must match joint count")
        object.__setattr__(self, "joint_names", joint_names)
        object.__setattr__(self, "root", None if root is None else int(root))
        if category is not None and category not in CATEGORIES:
            raise ValueError(f"unknown category {category!r}")
        object.__setattr__(self, "category", category)
        object.__setattr__(self, "extra", dict(extra) if extra else None)

    @property
    def n_joints(self) -> int:
        return self.joints.shape[0]

    def unique_edges(self) -> tuple[tuple[int, int], ...]:
        return tuple(sorted(set(self.edges)))

    def with_joints(self, joints) -> "SkeletonGraph":
        return SkeletonGraph(joints, self.edges, self.joint_names, self.root,
                             self.category, self.extra)


@dataclass(frozen=True, eq=False)
class StrokeGraph2D:
    """The 2D canvas drawing: joint positions in [-1,1]^2 sharing the target
    skeleton's edge topology. `text` carries the prompt when the stroke file
    includes one."""

    joints2d: np.ndarray
    edges: tuple[tuple[int, int], ...]
    view_tag: str | None = None
    text: str | None = None

    def __init__(self, joints2d, edges=(), view_tag=None, text=None):
        object.__setattr__(self, "joints2d", _freeze_coords(joints2d, 2, "joints2d"))
        object.__setattr__(self, "edges", _canon_edges(edges))
        if view_tag is not None and view_tag not in VIEW_TAGS:
            raise ValueError(f"unknown view tag {view_tag!r}")
        object.__setattr__(self, "view_tag", view_tag)
        object.__setattr__(self, "text", text)

    @property
    def n_joints(self) -> int:
        return self.joints2d.shape[0]

    def unique_edges(self) -> tuple[tuple[int, int], ...]:
        return tuple(sorted(set(self.edges)))


@dataclass(frozen=True)
class DatasetRecord:
    skeleton: SkeletonGraph
    caption: str
    tags: tuple[str, ...] = ()
    source_id: str = ""


def _edge_violations(edges, n: int) -> list[Violation]:
    out = []
    seen = set()
    for k, (i, j) in enumerate(edges):
        if i == j:
            out.append(Violation(BAD_INDEX, f"edge {k} is a self-loop ({i},{j})"))
            continue
        if not (0 <= i < n and 0 <= j < n):
            out.append(Violation(BAD_INDEX, f"edge {k} references ({i},{j}) outside 0..{n - 1}"))
            continue
        if (i, j) in seen:
            out.append(Violation(DUP_EDGE, f"edge ({i},{j}) appears more than once"))
        seen.add((i, j))
    return out


def _connected(n: int, edges) -> bool:
    if n <= 1:
        return True
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j in edges:
        if 0 <= i < n and 0 <= j < n and i != j:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[ri] = rj
    root = find(0)
    return all(find(i) == root for i in range(n))


def validate(graph: SkeletonGraph | StrokeGraph2D) -> ValidationReport:
    """Check every structural invariant; returns an empty report iff all hold.

    Applies to skeletons and strokes alike (the 2D checks are the subset that
    make sense there)."""
    coords = graph.joints if isinstance(graph, SkeletonGraph) else graph.joints2d
    n = coords.shape[0]
    v: list[Violation] = []
    if not (0 < n <= MAX_TRAINING_JOINTS):
        v.append(Violation(NODE_COUNT, f"{n} joints outside 1..{MAX_TRAINING_JOINTS}"))
    if n and not np.all(np.isfinite(coords)):
        v.append(Violation(NON_FINITE, "non-finite coordinate"))
    elif n and np.any(np.abs(coords) > 1.0 + _NORM_TOL):
        v.append(Violation(UNNORMALIZED, "coordinates exceed the [-1,1] frame"))
    v.extend(_edge_violations(graph.edges, n))
    if n and not _connected(n, graph.edges):
        v.append(Violation(DISCONNECTED, "graph has more than one connected component"))
    if isinstance(graph, SkeletonGraph):
        if graph.root is not None and not (0 <= graph.root < n):
            v.append(Violation(BAD_INDEX, f"root {graph.root} outside 0..{n - 1}"))
    return ValidationReport(tuple(v))


def normalize(graph: SkeletonGraph) -> SkeletonGraph:
    """Center on the bounding-box midpoint and scale the longest side to 2.

    A single point (or fully degenerate box) maps to the origin unscaled.
    Invariant under any positive uniform scale and translation of the input.
    """
    if graph.n_joints == 0:
        raise ValueError("cannot normalize an empty graph")
    if not np.all(np.isfinite(graph.joints)):
        raise ValueError("cannot normalize non-finite coordinates")
    lo = graph.joints.min(axis=0)
    hi = graph.joints.max(axis=0)
    center = (lo + hi) / 2.0
    side = float((hi - lo).max())
    scale = 2.0 / side if side > 0 else 1.0
    return graph.with_joints((graph.joints - center) * scale)


def _check_rotation(rot: np.ndarray) -> np.ndarray:
    r = np.asarray(rot, dtype=np.float64)
    if r.shape != (3, 3):
        raise ValueError("rotation must be a 3x3 matrix")
    if np.max(np.abs(r @ r.T - np.eye(3))) > _ROT_TOL:
        raise ValueError("rotation is not orthonormal")
    return r


def project(graph: SkeletonGraph, view: str = "front",
            rotation: np.ndarray | None = None) -> StrokeGraph2D:
    """Orthographic projection to a 2D stroke graph.

    front keeps (x, y); top keeps (x, z); side keeps (z, y). With `rotation`
    given, joints are rotated first and the front plane is kept (view tag
    becomes "free").
    """
    pts = graph.joints
    if rotation is not None:
        pts = pts @ _check_rotation(rotation).T
        return StrokeGraph2D(pts[:, (0, 1)], graph.edges, view_tag="free")
    if view == "front":
        coords = pts[:, (0, 1)]
    elif view == "top":
        coords = pts[:, (0, 2)]
    elif view == "side":
        coords = pts[:, (2, 1)]
    else:
        raise ValueError(f"unknown view {view!r}")
    return StrokeGraph2D(coords, graph.edges, view_tag=view)


# ---------------------------------------------------------------------------
# JSON (de)serialization
#
# Skeleton: {"joints": [[x,y,z],...], "edges": [[i,j],...],
#            "names": [...]?, "root": int?, "category": str?}
# Stroke:   {"joints2d": [[x,y],...], "edges": [[i,j],...],
#            "view": str?, "text": str?}
# ---------------------------------------------------------------------------

_SKELETON_KEYS = {"joints", "edges", "names", "root", "category"}
_STROKE_KEYS = {"joints2d", "edges", "view", "text"}


def skeleton_to_json(graph: SkeletonGraph) -> dict:
    doc: dict = {
        "joints": [[float(c) for c in row] for row in graph.joints],
        "edges": [list(e) for e in graph.unique_edges()],
    }
    if graph.joint_names is not None:
        doc["names"] = list(graph.joint_names)
    if graph.root is not None:
        doc["root"] = graph.root
    if graph.category is not None:
        doc["category"] = graph.category
    if graph.extra:
        doc.update(graph.extra)
    return doc


def stroke_to_json(stroke: StrokeGraph2D) -> dict:
    doc: dict = {
        "joints2d": [[float(c) for c in row] for row in stroke.joints2d],
        "edges": [list(e) for e in stroke.unique_edges()],
    }
    if stroke.view_tag is not None:
        doc["view"] = stroke.view_tag
    if stroke.text is not None:
        doc["text"] = stroke.text
    return doc


def _coord_rows(doc, key: str, width: int) -> list:
    if key not in doc:
        raise ParseError(f"missing required field {key!r}", "")
    rows = doc[key]
    if not isinstance(rows, list):
        raise ParseError("expected an array", f"/{key}")
    for r, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != width:
            raise ParseError(f"expected {width} numbers", f"/{key}/{r}")
        for c, x in enumerate(row):
            if not isinstance(x, (int, float)) or isinstance(x, bool) or not math.isfinite(x):
                raise ParseError("expected a finite number", f"/{key}/{r}/{c}")
    return rows


def _parse_edges(doc, n: int, strict: bool) -> list[tuple[int, int]]:
    if "edges" not in doc:
        raise ParseError("missing required field 'edges'", "")
    raw = doc["edges"]
    if not isinstance(raw, list):
        raise ParseError("expected an array", "/edges")
    edges: list[tuple[int, int]] = []
    seen = set()
    for k, e in enumerate(raw):
        path = f"/edges/{k}"
        if not isinstance(e, list) or len(e) != 2 or not all(
                isinstance(i, int) and not isinstance(i, bool) for i in e):
            raise ParseError("edge must be a pair of integers", path)
        i, j = sorted(e)
        if i == j:
            raise ParseError("self-loop forbidden", path, code=BAD_INDEX)
        if not (0 <= i < n and 0 <= j < n):
            raise ParseError(f"index outside 0..{n - 1}", path, code=BAD_INDEX)
        if (i, j) in seen:
            if strict:
                raise ParseError("duplicate edge", path, code=DUP_EDGE)
            warnings.warn(f"collapsing duplicate edge ({i},{j})")
            continue
        seen.add((i, j))
        edges.append((i, j))
    return edges


def skeleton_from_json(doc: Mapping, strict: bool = True) -> SkeletonGraph:
    if not isinstance(doc, Mapping):
        raise ParseError("expected an object", "")
    unknown = set(doc) - _SKELETON_KEYS
    if unknown and strict:
        raise ParseError(f"unknown fields {sorted(unknown)}", "")
    joints = _coord_rows(doc, "joints", 3)
    edges = _parse_edges(doc, len(joints), strict)
    names = doc.get("names")
    if names is not None:
        if not isinstance(names, list) or not all(isinstance(s, str) for s in names):
            raise ParseError("expected an array of strings", "/names")
        if len(names) != len(joints):
            raise ParseError("names length must match joints", "/names")
    root = doc.get("root")
    if root is not None:
        if not isinstance(root, int) or isinstance(root, bool):
            raise ParseError("expected an integer", "/root")
        if not (0 <= root < len(joints)):
            raise ParseError(f"index outside 0..{len(joints) - 1}", "/root", code=BAD_INDEX)
    category = doc.get("category")
    if category is not None and category not in CATEGORIES:
        raise ParseError(f"unknown category {category!r}", "/category")
    extra = {k: doc[k] for k in unknown} if unknown else None
    return SkeletonGraph(joints, edges, names, root, category, extra)


def stroke_from_json(doc: Mapping, strict: bool = True) -> StrokeGraph2D:
    if not isinstance(doc, Mapping):
        raise ParseError("expected an object", "")
    unknown = set(doc) - _STROKE_KEYS
    if unknown and strict:
        raise ParseError(f"unknown fields {sorted(unknown)}", "")
    joints = _coord_rows(doc, "joints2d", 2)
    edges = _parse_edges(doc, len(joints), strict)
    view = doc.get("view")
    if view is not None and view not in VIEW_TAGS:
        raise ParseError(f"unknown view {view!r}", "/view")
    text = doc.get("text")
    if text is not None and not isinstance(text, str):
        raise ParseError("expected a string", "/text")
    return StrokeGraph2D(joints, edges, view, text)


def dumps(graph: SkeletonGraph | StrokeGraph2D) -> str:
    doc = skeleton_to_json(graph) if isinstance(graph, SkeletonGraph) else stroke_to_json(graph)
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _loads_doc(text: str) -> Mapping:
    def reject(token):
        raise ParseError(f"non-finite literal {token!r}", "")

    try:
        doc = json.loads(text, parse_constant=reject)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, Mapping):
        raise ParseError("expected a JSON object", "")
    return doc


def loads_skeleton(text: str, strict: bool = True) -> SkeletonGraph:
    return skeleton_from_json(_loads_doc(text), strict=strict)


def loads_stroke(text: str, strict: bool = True) -> StrokeGraph2D:
    return stroke_from_json(_loads_doc(text), strict=strict)


def record_to_json(record: DatasetRecord) -> dict:
    return {
        "skeleton": skeleton_to_json(record.skeleton),
        "caption": record.caption,
        "tags": list(record.tags),
        "source_id": record.source_id,
    }


def record_from_json(doc: Mapping, strict: bool = True) -> DatasetRecord:
    if not isinstance(doc, Mapping):
        raise ParseError("expected an object", "")
    if "skeleton" not in doc:
        raise ParseError("missing required field 'skeleton'", "")
    skeleton = skeleton_from_json(doc["skeleton"], strict=strict)
    caption = doc.get("caption", "")
    if not isinstance(caption, str):
        raise ParseError("expected a string", "/caption")
    tags = doc.get("tags", [])
    if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
        raise ParseError("expected an array of strings", "/tags")
    source_id = doc.get("source_id", "")
    if not isinstance(source_id, str):
        raise ParseError("expected a string", "/source_id")
    return DatasetRecord(skeleton, caption, tuple(tags), source_id)


def write_manifest(records: Iterable[DatasetRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_json(rec), sort_keys=True,
                                separators=(",", ":"), allow_nan=False))
            fh.write("\n")


def read_manifest(path, strict: bool = True) -> list[DatasetRecord]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(record_from_json(_loads_doc(line), strict=strict))
    return out


def graphs_close(a: SkeletonGraph, b: SkeletonGraph, tol: float = 1e-12) -> bool:
    return (a.n_joints == b.n_joints
            and a.unique_edges() == b.unique_edges()
            and (a.n_joints == 0 or bool(np.max(np.abs(a.joints - b.joints)) <= tol))
            and a.joint_names == b.joint_names
            and a.root == b.root
            and a.category == b.category)


def strokes_close(a: StrokeGraph2D, b: StrokeGraph2D, tol: float = 1e-12) -> bool:
    return (a.n_joints == b.n_joints
            and a.unique_edges() == b.unique_edges()
            and (a.n_joints == 0 or bool(np.max(np.abs(a.joints2d - b.joints2d)) <= tol))
            and a.view_tag == b.view_tag
            and a.text == b.text)
