"""Procedural skeleton generators for tests, toy datasets, and calibration.

All shapes are built in the canonical frame: up +Y, forward +Z, left +X.
Generators take a numpy Generator so callers control determinism.
"""

from __future__ import annotations

import numpy as np

from .graphs import DatasetRecord, SkeletonGraph, normalize

_BIPED_BONES = [
    ("pelvis", "spine"), ("spine", "chest"), ("chest", "neck"), ("neck", "head"),
    ("chest", "shoulder_l"), ("shoulder_l", "elbow_l"), ("elbow_l", "hand_l"),
    ("chest", "shoulder_r"), ("shoulder_r", "elbow_r"), ("elbow_r", "hand_r"),
    ("pelvis", "hip_l"), ("hip_l", "knee_l"), ("knee_l", "foot_l"), ("foot_l", "toe_l"),
    ("pelvis", "hip_r"), ("hip_r", "knee_r"), ("knee_r", "foot_r"), ("foot_r", "toe_r"),
]

NAMING_STYLES = ("snake_suffix", "snake_prefix", "camel", "dotted", "short")


def _style_name(base: str, style: str) -> str:
    if base.endswith("_l") or base.endswith("_r"):
        stem, side = base[:-2], base[-1]
        if style == "snake_suffix":
            return f"{stem}_{side}"
        if style == "snake_prefix":
            return f"{'left' if side == 'l' else 'right'}_{stem}"
        if style == "camel":
            return ("Left" if side == "l" else "Right") + stem.capitalize()
        if style == "dotted":
            return f"{stem}.{side.upper()}"
        if style == "short":
            return f"{side}_{stem}"
    elif style == "camel":
        return base.capitalize()
    return base


def make_biped(rng: np.random.Generator, jitter: float = 0.0,
               naming: str = "snake_suffix", with_names: bool = True) -> SkeletonGraph:
    """A humanoid in rest pose with mild per-build proportion variation.

    Root is the pelvis; left-side joints sit at positive X.
    """
    torso = float(rng.uniform(0.9, 1.1))
    arm = float(rng.uniform(0.9, 1.1))
    leg = float(rng.uniform(0.9, 1.1))
    width = float(rng.uniform(0.9, 1.1))

    pos = {
        "pelvis": (0.0, 0.0, 0.0),
        "spine": (0.0, 0.22 * torso, 0.02),
        "chest": (0.0, 0.45 * torso, 0.02),
        "neck": (0.0, 0.62 * torso, 0.0),
        "head": (0.0, 0.82 * torso, 0.02),
    }
    for side, sx in (("l", 1.0), ("r", -1.0)):
        sx *= width
        pos[f"shoulder_{side}"] = (0.22 * sx, 0.52 * torso, 0.0)
        pos[f"elbow_{side}"] = ((0.22 + 0.22 * arm) * sx, 0.52 * torso - 0.26 * arm, 0.02)
        pos[f"hand_{side}"] = ((0.22 + 0.36 * arm) * sx, 0.52 * torso - 0.5 * arm, 0.05)
        pos[f"hip_{side}"] = (0.14 * sx, -0.06, 0.0)
        pos[f"knee_{side}"] = (0.17 * sx, -0.06 - 0.44 * leg, 0.03)
        pos[f"foot_{side}"] = (0.19 * sx, -0.06 - 0.86 * leg, 0.0)
        pos[f"toe_{side}"] = (0.19 * sx, -0.06 - 0.9 * leg, 0.14)

    order = list(pos)
    index = {name: i for i, name in enumerate(order)}
    joints = np.array([pos[n] for n in order], dtype=np.float64)
    if jitter > 0.0:
        joints = joints + rng.normal(0.0, jitter, joints.shape)
    edges = [(index[a], index[b]) for a, b in _BIPED_BONES]
    names = tuple(_style_name(n, naming) for n in order) if with_names else None
    return SkeletonGraph(joints, edges, joint_names=names,
                         root=index["pelvis"], category="character")


def make_quadruped(rng: np.random.Generator, jitter: float = 0.0,
                   with_names: bool = True) -> SkeletonGraph:
    """A four-legged animal: spine along +Z, legs down, tail behind."""
    body = float(rng.uniform(0.9, 1.1))
    leg = float(rng.uniform(0.9, 1.1))
    pos = {
        "pelvis": (0.0, 0.0, -0.38 * body),
        "spine_mid": (0.0, 0.04, 0.0),
        "chest": (0.0, 0.04, 0.34 * body),
        "neck": (0.0, 0.16, 0.48 * body),
        "head": (0.0, 0.28, 0.62 * body),
        "tail": (0.0, 0.02, -0.6 * body),
    }
    for tag, zc, anchor in (("front", 0.34 * body, "chest"), ("hind", -0.38 * body, "pelvis")):
        for side, sx in (("l", 1.0), ("r", -1.0)):
            pos[f"{tag}_hip_{side}"] = (0.12 * sx, -0.04, zc)
            pos[f"{tag}_knee_{side}"] = (0.13 * sx, -0.04 - 0.28 * leg, zc + 0.02)
            pos[f"{tag}_foot_{side}"] = (0.13 * sx, -0.04 - 0.52 * leg, zc + 0.03)
    order = list(pos)
    index = {n: i for i, n in enumerate(order)}
    joints = np.array([pos[n] for n in order], dtype=np.float64)
    if jitter > 0.0:
        joints = joints + rng.normal(0.0, jitter, joints.shape)
    bones = [("pelvis", "spine_mid"), ("spine_mid", "chest"), ("chest", "neck"),
             ("neck", "head"), ("pelvis", "tail")]
    for tag, anchor in (("front", "chest"), ("hind", "pelvis")):
        for side in ("l", "r"):
            bones += [(anchor, f"{tag}_hip_{side}"),
                      (f"{tag}_hip_{side}", f"{tag}_knee_{side}"),
                      (f"{tag}_knee_{side}", f"{tag}_foot_{side}")]
    edges = [(index[a], index[b]) for a, b in bones]
    names = tuple(order) if with_names else None
    return SkeletonGraph(joints, edges, joint_names=names,
                         root=index["pelvis"], category="animal")


def make_plant(rng: np.random.Generator, n_branches: int | None = None) -> SkeletonGraph:
    """A branching plant: trunk up +Y from the root, branches fanning outward."""
    if n_branches is None:
        n_branches = int(rng.integers(3, 7))
    joints = [(0.0, -0.6, 0.0), (0.0, -0.2, 0.0), (0.0, 0.15, 0.0)]
    edges = [(0, 1), (1, 2)]
    for _ in range(n_branches):
        src = int(rng.integers(1, 3))
        azim = rng.uniform(0.0, 2.0 * np.pi)
        tilt = rng.uniform(np.pi / 8.0, np.pi / 3.0)
        length = rng.uniform(0.25, 0.5)
        base = np.array(joints[src])
        direction = np.array([np.sin(tilt) * np.cos(azim), np.cos(tilt),
                              np.sin(tilt) * np.sin(azim)])
        mid = base + direction * length * 0.55
        tip = base + direction * length
        joints.append(tuple(mid))
        edges.append((src, len(joints) - 1))
        joints.append(tuple(tip))
        edges.append((len(joints) - 2, len(joints) - 1))
    return SkeletonGraph(np.array(joints), edges, root=0, category="plant")


def random_tree_skeleton(rng: np.random.Generator, n_joints: int | None = None,
                         box: float = 1.0) -> SkeletonGraph:
    """A uniformly random tree with joints drawn in [-box, box]^3."""
    if n_joints is None:
        n_joints = int(rng.integers(2, 31))
    joints = rng.uniform(-box, box, (n_joints, 3))
    edges = [(int(rng.integers(0, i)), i) for i in range(1, n_joints)]
    return SkeletonGraph(joints, edges, root=0)


def make_chain(rng: np.random.Generator, n_joints: int = 6) -> SkeletonGraph:
    t = np.linspace(-0.8, 0.8, n_joints)
    joints = np.stack([t, 0.15 * np.sin(3.0 * t), np.zeros_like(t)], axis=1)
    joints = joints + rng.normal(0.0, 0.01, joints.shape)
    return SkeletonGraph(joints, [(i, i + 1) for i in range(n_joints - 1)], root=0)


def make_star(rng: np.random.Generator, n_spokes: int = 5) -> SkeletonGraph:
    pts = [(0.0, 0.0, 0.0)]
    edges = []
    for k in range(n_spokes):
        a = 2.0 * np.pi * k / n_spokes
        r = float(rng.uniform(0.5, 0.9))
        pts.append((r * np.cos(a), r * np.sin(a), float(rng.uniform(-0.2, 0.2))))
        edges.append((0, k + 1))
    return SkeletonGraph(np.array(pts), edges, root=0)


_CAPTIONS = {
    "character": ("a humanoid character standing in rest pose",
                  "a person with two arms and two legs"),
    "animal": ("a four legged animal with a tail",
               "a quadruped creature standing on four legs"),
    "plant": ("a branching plant growing upward",
              "a small tree with several branches"),
    "chain": ("a simple chain of connected joints",),
    "star": ("a star shaped figure with radial spokes",),
}


def toy_dataset(rng: np.random.Generator, n: int = 64) -> list[DatasetRecord]:
    """A mixed bag of normalized shapes with captions; deterministic in `rng`."""
    records = []
    for k in range(n):
        kind = ("character", "animal", "plant", "chain", "star")[k % 5]
        if kind == "character":
            naming = NAMING_STYLES[int(rng.integers(0, len(NAMING_STYLES)))]
            skel = make_biped(rng, jitter=0.01, naming=naming)
            tags = ("symmetric", "rest-pose")
        elif kind == "animal":
            skel = make_quadruped(rng, jitter=0.01)
            tags = ("symmetric", "four-legged")
        elif kind == "plant":
            skel = make_plant(rng)
            tags = ("branching",)
        elif kind == "chain":
            skel = make_chain(rng, n_joints=int(rng.integers(4, 9)))
            tags = ("chain",)
        else:
            skel = make_star(rng, n_spokes=int(rng.integers(3, 7)))
            tags = ("radial",)
        caption = _CAPTIONS[kind][int(rng.integers(0, len(_CAPTIONS[kind])))]
        records.append(DatasetRecord(normalize(skel), caption, tags, f"toy-{k:04d}"))
    return records
