"""Skeleton sequences: file I/O, modality derivation, augmentation and synthetic data.

Frames are stored as ``[T][M][V][C]`` arrays (time, person slot, joint,
coordinate).  A person slot that is absent in a frame is an all-zero slice and
every transform here keeps it that way.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

BACKGROUND = -1

# NTU RGB+D 25-joint topology, 0-based (child, parent).  Joint 20 (spine
# shoulder) is the root.
NTU_EDGES = (
    (0, 1), (1, 20), (2, 20), (3, 2), (4, 20), (5, 4), (6, 5), (7, 6),
    (8, 20), (9, 8), (10, 9), (11, 10), (12, 0), (13, 12), (14, 13), (15, 14),
    (16, 0), (17, 16), (18, 17), (19, 18), (21, 22), (22, 7), (23, 24), (24, 11),
)
NTU_FLIP_PAIRS = (
    (4, 8), (5, 9), (6, 10), (7, 11), (12, 16), (13, 17), (14, 18), (15, 19),
    (21, 23), (22, 24),
)

# parent-relative rest offsets (meters) for the NTU topology
_NTU_OFFSETS = {
    0: (0.0, -0.25, 0.0), 1: (0.0, -0.25, 0.0), 2: (0.0, 0.08, 0.0),
    3: (0.0, 0.12, 0.0), 4: (0.18, -0.03, 0.0), 5: (0.05, -0.25, 0.0),
    6: (0.0, -0.24, 0.0), 7: (0.0, -0.07, 0.0), 8: (-0.18, -0.03, 0.0),
    9: (-0.05, -0.25, 0.0), 10: (0.0, -0.24, 0.0), 11: (0.0, -0.07, 0.0),
    12: (0.09, -0.03, 0.0), 13: (0.0, -0.4, 0.0), 14: (0.0, -0.4, 0.0),
    15: (0.0, -0.04, 0.1), 16: (-0.09, -0.03, 0.0), 17: (0.0, -0.4, 0.0),
    18: (0.0, -0.4, 0.0), 19: (0.0, -0.04, 0.1), 21: (0.02, -0.02, 0.0),
    22: (0.0, -0.05, 0.0), 23: (-0.02, -0.02, 0.0), 24: (0.0, -0.05, 0.0),
}


@dataclass
class SkeletonSequence:
    id: str
    frames: np.ndarray
    label: int | None = None
    view: int | None = None
    subject: int | None = None
    frame_labels: np.ndarray | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 4:
            raise ValueError(f"sequence {self.id!r}: frames must be [T][M][V][C], got shape {self.frames.shape}")
        t, m, v, c = self.frames.shape
        if t < 1 or m < 1 or v < 1 or c not in (2, 3):
            raise ValueError(f"sequence {self.id!r}: invalid frame shape {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError(f"sequence {self.id!r}: non-finite coordinates")
        if self.frame_labels is not None:
            self.frame_labels = np.asarray(self.frame_labels, dtype=np.int64)
            if self.frame_labels.shape != (t,):
                raise ValueError(f"sequence {self.id!r}: frame_labels length {len(self.frame_labels)} != {t} frames")

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    def with_frames(self, frames, frame_labels=None) -> "SkeletonSequence":
        return replace(self, frames=frames, frame_labels=frame_labels)

    def present(self) -> np.ndarray:
        """Boolean ``[T][M]`` mask of person slots with any nonzero coordinate."""
        return np.any(self.frames != 0, axis=(2, 3))

    def to_record(self, decimals: int | None = None) -> dict:
        frames = self.frames if decimals is None else np.round(self.frames, decimals)
        return {
            "id": self.id,
            "label": self.label,
            "view": self.view,
            "subject": self.subject,
            "frame_labels": None if self.frame_labels is None else self.frame_labels.tolist(),
            "frames": frames.tolist(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "SkeletonSequence":
        return cls(
            id=str(rec["id"]),
            frames=np.asarray(rec["frames"], dtype=np.float64),
            label=rec.get("label"),
            view=rec.get("view"),
            subject=rec.get("subject"),
            frame_labels=rec.get("frame_labels"),
        )


def validate_tree(edges: Sequence[tuple[int, int]], num_joints: int) -> int:
    """Check that ``edges`` is a (child, parent) tree over the joints; return the root."""
    if len(edges) != num_joints - 1:
        raise ValueError(f"edge list has {len(edges)} edges, a tree over {num_joints} joints needs {num_joints - 1}")
    parent = {}
    for child, par in edges:
        if not (0 <= child < num_joints and 0 <= par < num_joints):
            raise ValueError(f"edge ({child}, {par}) out of range")
        if child in parent:
            raise ValueError(f"joint {child} has two parents")
        parent[child] = par
    roots = [j for j in range(num_joints) if j not in parent]
    if len(roots) != 1:
        raise ValueError(f"edge list must have exactly one root, found {roots}")
    for j in range(num_joints):
        seen = set()
        while j in parent:
            if j in seen:
                raise ValueError("edge list contains a cycle")
            seen.add(j)
            j = parent[j]
    return roots[0]


def tree_order(edges: Sequence[tuple[int, int]], num_joints: int) -> list[int]:
    """Joints in an order where every parent precedes its children."""
    root = validate_tree(edges, num_joints)
    children: dict[int, list[int]] = {}
    for c, p in edges:
        children.setdefault(p, []).append(c)
    order, stack = [], [root]
    while stack:
        j = stack.pop()
        order.append(j)
        stack.extend(sorted(children.get(j, []), reverse=True))
    return order


@dataclass
class DatasetManifest:
    joint_count: int
    person_slots: int
    coord_dims: int
    edges: list[tuple[int, int]]
    class_names: list[str]
    splits: dict[str, str] = field(default_factory=dict)
    flip_pairs: list[tuple[int, int]] = field(default_factory=list)
    base_dir: Path | None = None

    def __post_init__(self):
        self.edges = [tuple(int(x) for x in e) for e in self.edges]
        self.flip_pairs = [tuple(int(x) for x in p) for p in self.flip_pairs]
        if self.coord_dims not in (2, 3):
            raise ValueError(f"coord_dims must be 2 or 3, got {self.coord_dims}")
        self.root = validate_tree(self.edges, self.joint_count)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def split_path(self, split: str) -> Path:
        if split not in self.splits:
            raise KeyError(f"manifest has no split {split!r}; available: {sorted(self.splits)}")
        path = Path(self.splits[split])
        if not path.is_absolute() and self.base_dir is not None:
            path = self.base_dir / path
        return path

    def to_dict(self) -> dict:
        d = {
            "joint_count": self.joint_count,
            "person_slots": self.person_slots,
            "coord_dims": self.coord_dims,
            "edges": [list(e) for e in self.edges],
            "class_names": list(self.class_names),
            "splits": dict(self.splits),
        }
        if self.flip_pairs:
            d["flip_pairs"] = [list(p) for p in self.flip_pairs]
        return d

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        d = json.loads(path.read_text())
        return cls(
            joint_count=d["joint_count"],
            person_slots=d["person_slots"],
            coord_dims=d["coord_dims"],
            edges=d["edges"],
            class_names=d["class_names"],
            splits=d.get("splits", {}),
            flip_pairs=d.get("flip_pairs", []),
            base_dir=path.parent,
        )


def ntu_manifest(class_names=None, person_slots: int = 2) -> DatasetManifest:
    """Default NTU RGB+D 25-joint manifest."""
    if class_names is None:
        class_names = [f"A{i:03d}" for i in range(1, 61)]
    return DatasetManifest(25, person_slots, 3, list(NTU_EDGES), list(class_names),
                           flip_pairs=list(NTU_FLIP_PAIRS))


def center_root(seq: SkeletonSequence, root: int) -> SkeletonSequence:
    """Subtract the first person's root joint (first frame it is present) from present slices."""
    present = seq.present()
    rows = np.flatnonzero(present[:, 0])
    if rows.size == 0:
        return seq
    origin = seq.frames[rows[0], 0, root]
    frames = np.where(present[:, :, None, None], seq.frames - origin, 0.0)
    return seq.with_frames(frames, seq.frame_labels)


def load_split(manifest: DatasetManifest, split: str, normalize: bool = True) -> list[SkeletonSequence]:
    path = manifest.split_path(split)
    shape = (manifest.person_slots, manifest.joint_count, manifest.coord_dims)
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                rid = rec["id"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}: malformed record on line {lineno}: {exc}") from None
            try:
                seq = SkeletonSequence.from_record(rec)
            except (ValueError, TypeError) as exc:
                raise ValueError(f"{path}: record {rid!r} (line {lineno}) invalid: {exc}") from None
            if seq.frames.shape[1:] != shape:
                raise ValueError(f"{path}: record {rid!r} has per-frame shape {seq.frames.shape[1:]}, "
                                 f"manifest requires {shape}")
            labels = [seq.label] if seq.label is not None else []
            if seq.frame_labels is not None:
                labels.extend(int(x) for x in seq.frame_labels if x != BACKGROUND)
            if any(lab < 0 or lab >= manifest.num_classes for lab in labels):
                raise ValueError(f"{path}: record {rid!r} has a class index outside [0, {manifest.num_classes})")
            out.append(center_root(seq, manifest.root) if normalize else seq)
    return out


def save_split(path, sequences: Iterable[SkeletonSequence], decimals: int | None = 5) -> None:
    with open(path, "w") as fh:
        for seq in sequences:
            fh.write(json.dumps(seq.to_record(decimals), separators=(",", ":")) + "\n")


# -- modalities ---------------------------------------------------------------

def bone_array(x: np.ndarray, edges: Sequence[tuple[int, int]]) -> np.ndarray:
    """Bone vectors ``child - parent`` along the joint axis (second to last); root gets zeros."""
    out = np.zeros_like(x)
    for child, parent in edges:
        out[..., child, :] = x[..., child, :] - x[..., parent, :]
    return out


def motion_array(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Forward temporal difference along ``axis`` with a zero last frame."""
    out = np.zeros_like(x)
    n = x.shape[axis]
    head = [slice(None)] * x.ndim
    head[axis] = slice(0, n - 1)
    out[tuple(head)] = np.diff(x, axis=axis)
    return out


def derive_bone(seq: SkeletonSequence, edges: Sequence[tuple[int, int]]) -> SkeletonSequence:
    return seq.with_frames(bone_array(seq.frames, edges), seq.frame_labels)


def derive_motion(seq: SkeletonSequence) -> SkeletonSequence:
    return seq.with_frames(motion_array(seq.frames, axis=0), seq.frame_labels)


def modality_array(x: np.ndarray, modality: str, edges, time_axis: int = 0) -> np.ndarray:
    if modality == "joint":
        return x
    if modality == "bone":
        return bone_array(x, edges)
    if modality == "motion":
        return motion_array(x, axis=time_axis)
    raise ValueError(f"unknown modality {modality!r}; expected joint, bone or motion")


def temporal_resample(seq: SkeletonSequence, length: int) -> SkeletonSequence:
    if length < 1:
        raise ValueError(f"target length must be >= 1, got {length}")
    n = seq.length
    if length == n:
        return seq.with_frames(seq.frames.copy(), seq.frame_labels)
    pos = np.linspace(0.0, n - 1, length) if length > 1 else np.zeros(1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    w = (pos - lo)[:, None, None, None]
    frames = (1.0 - w) * seq.frames[lo] + w * seq.frames[hi]
    labels = None
    if seq.frame_labels is not None:
        labels = seq.frame_labels[np.minimum(np.floor(pos + 0.5).astype(int), n - 1)]
    return seq.with_frames(frames, labels)


# -- augmentation -------------------------------------------------------------

def rotation_matrix(angles_deg) -> np.ndarray:
    """``Rz @ Ry @ Rx`` for angles (degrees) about x, y, z."""
    ax, ay, az = np.deg2rad(angles_deg)
    cx, sx, cy, sy, cz, sz = np.cos(ax), np.sin(ax), np.cos(ay), np.sin(ay), np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def _ordered(name, rng_pair):
    lo, hi = rng_pair
    if not lo <= hi:
        raise ValueError(f"AugSpec.{name}: range ({lo}, {hi}) is not ordered")


@dataclass(frozen=True)
class AugSpec:
    """Augmentation switches and ranges.  ``None`` or zero disables a transform.

    rotation is a per-axis (x, y, z) range in degrees; crop is the kept
    fraction of frames.
    """

    rotation: tuple | None = None
    shear: tuple[float, float] | None = None
    scale: tuple[float, float] | None = None
    jitter: float = 0.0
    crop: tuple[float, float] | None = None
    flip_prob: float = 0.0
    flip_pairs: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.rotation is not None:
            if len(self.rotation) != 3:
                raise ValueError("AugSpec.rotation needs one (lo, hi) range per axis")
            for r in self.rotation:
                _ordered("rotation", r)
        for name in ("shear", "scale", "crop"):
            if getattr(self, name) is not None:
                _ordered(name, getattr(self, name))
        if self.crop is not None and not (0 < self.crop[0] and self.crop[1] <= 1):
            raise ValueError("AugSpec.crop ratios must lie in (0, 1]")
        if self.jitter < 0:
            raise ValueError("AugSpec.jitter must be >= 0")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("AugSpec.flip_prob must be in [0, 1]")

    @property
    def is_identity(self) -> bool:
        return (self.rotation is None and self.shear is None and self.scale is None
                and self.jitter == 0 and self.crop is None and self.flip_prob == 0)

    @classmethod
    def standard(cls, flip_pairs=(), seed: int = 0) -> "AugSpec":
        return cls(rotation=((-15, 15), (-15, 15), (-15, 15)), shear=(-0.3, 0.3), scale=(0.9, 1.1),
                   jitter=0.005, crop=(0.8, 1.0), flip_prob=0.5, flip_pairs=tuple(map(tuple, flip_pairs)),
                   seed=seed)


def augment(seq: SkeletonSequence, spec: AugSpec, rng: np.random.Generator | None = None) -> SkeletonSequence:
    """Apply the enabled transforms; deterministic for a given ``spec.seed`` (or ``rng``)."""
    if spec.is_identity:
        return seq.with_frames(seq.frames.copy(), seq.frame_labels)
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    frames, labels = seq.frames, seq.frame_labels

    if spec.crop is not None:
        n = frames.shape[0]
        keep = max(1, int(round(n * rng.uniform(*spec.crop))))
        start = int(rng.integers(0, n - keep + 1))
        frames = frames[start:start + keep]
        labels = None if labels is None else labels[start:start + keep]

    mat = np.eye(3)
    if spec.rotation is not None:
        mat = rotation_matrix([rng.uniform(lo, hi) for lo, hi in spec.rotation]) @ mat
    if spec.shear is not None:
        sh = np.eye(3)
        off = ~np.eye(3, dtype=bool)
        sh[off] = rng.uniform(spec.shear[0], spec.shear[1], size=6)
        mat = sh @ mat
    if spec.scale is not None:
        mat = rng.uniform(*spec.scale) * mat
    c = frames.shape[-1]
    frames = frames @ mat[:c, :c].T

    if spec.flip_prob > 0 and rng.uniform() < spec.flip_prob:
        frames = frames.copy()
        frames[..., 0] = -frames[..., 0]
        for a, b in spec.flip_pairs:
            frames[:, :, [a, b]] = frames[:, :, [b, a]]

    if spec.jitter > 0:
        present = np.any(frames != 0, axis=(2, 3))
        noise = rng.normal(0.0, spec.jitter, size=frames.shape)
        frames = frames + noise * present[:, :, None, None]
    return seq.with_frames(frames, labels)


# -- synthetic data -----------------------------------------------------------

def _rot_axis(axis: int, theta: np.ndarray) -> np.ndarray:
    """Stack of rotation matrices about a principal axis, shape [len(theta)][3][3]."""
    c, s = np.cos(theta), np.sin(theta)
    out = np.zeros(theta.shape + (3, 3))
    i, j = [(1, 2), (2, 0), (0, 1)][axis]
    out[..., axis, axis] = 1.0
    out[..., i, i] = c
    out[..., j, j] = c
    out[..., i, j] = -s
    out[..., j, i] = s
    return out


class SyntheticActions:
    """Parametric action families on a fixed skeleton tree.

    Each class animates its own subset of bones with sinusoidal rotations at a
    class-specific frequency; samples vary in amplitude, phase, subject bone
    length and sensor noise.
    """

    view_angles = (-30.0, 30.0)

    def __init__(self, num_classes: int, num_joints: int = 25, num_persons: int = 1, seed: int = 0,
                 active_joints: int = 5, noise: float = 0.005):
        if num_classes < 2:
            raise ValueError("need at least 2 classes")
        self.num_classes, self.V, self.M, self.noise = num_classes, num_joints, num_persons, noise
        if num_joints == 25:
            self.edges = list(NTU_EDGES)
            self.flip_pairs = list(NTU_FLIP_PAIRS)
            offsets = np.zeros((25, 3))
            for j, off in _NTU_OFFSETS.items():
                offsets[j] = off
        else:
            self.edges = [(j, (j - 1) // 2) for j in range(1, num_joints)]
            self.flip_pairs = []
            topo = np.random.default_rng(12345)
            offsets = topo.normal(size=(num_joints, 3))
            offsets *= 0.2 / np.linalg.norm(offsets, axis=1, keepdims=True)
            offsets[0] = 0.0
        self.offsets = offsets
        self.root = validate_tree(self.edges, num_joints)
        self.order = tree_order(self.edges, num_joints)
        self.parent = dict(self.edges)

        rng = np.random.default_rng(seed)
        movable = [c for c, _ in self.edges]
        self.freq = 1.0 + np.arange(num_classes) * 0.75
        self.amp = np.zeros((num_classes, num_joints))
        self.phase = rng.uniform(0, 2 * np.pi, size=(num_classes, num_joints))
        self.axis = rng.integers(0, 3, size=(num_classes, num_joints))
        for k in range(num_classes):
            chosen = rng.choice(movable, size=min(active_joints, len(movable)), replace=False)
            self.amp[k, chosen] = rng.uniform(0.5, 1.2, size=len(chosen))
        self.sway = rng.normal(0, 0.05, size=(num_classes, 3))

    def manifest(self) -> DatasetManifest:
        return DatasetManifest(self.V, self.M, 3, list(self.edges),
                               [f"class_{k}" for k in range(self.num_classes)],
                               flip_pairs=list(self.flip_pairs))

    def _pose(self, angles: np.ndarray, axes: np.ndarray, bone_scale: float) -> np.ndarray:
        """Forward kinematics: ``angles`` [T][V] local rotations -> joints [T][V][3]."""
        T = angles.shape[0]
        pos = np.zeros((T, self.V, 3))
        for j in self.order:
            if j == self.root:
                continue
            off = self.offsets[j] * bone_scale
            rot = _rot_axis(int(axes[j]), angles[:, j])
            pos[:, j] = pos[:, self.parent[j]] + rot @ off
        return pos

    def clip(self, k: int, length: int, rng: np.random.Generator, bone_scale: float = 1.0) -> np.ndarray:
        """One action instance of class ``k``: canonical-view joints [T][V][3]."""
        t = np.arange(length) / max(length, 2)
        amp = self.amp[k] * rng.uniform(0.8, 1.2)
        phase = self.phase[k] + rng.uniform(-0.3, 0.3)
        angles = amp[None, :] * np.sin(2 * np.pi * self.freq[k] * t[:, None] + phase[None, :])
        pos = self._pose(angles, self.axis[k], bone_scale)
        pos += np.sin(2 * np.pi * t)[:, None, None] * self.sway[k]
        return pos + rng.normal(0, self.noise, size=pos.shape)

    def idle(self, length: int, rng: np.random.Generator, bone_scale: float = 1.0) -> np.ndarray:
        pos = self._pose(np.zeros((length, self.V)), np.zeros(self.V, dtype=int), bone_scale)
        return pos + rng.normal(0, self.noise, size=pos.shape)

    def place(self, joints: np.ndarray, view: int) -> np.ndarray:
        """Rotate canonical joints into camera ``view`` and embed in [T][M][V][3]."""
        rot = rotation_matrix([0.0, self.view_angles[view], 0.0])
        out = np.zeros((joints.shape[0], self.M, self.V, 3))
        out[:, 0] = joints @ rot.T
        return out


def synth_dataset(classes: int = 4, per_class: int = 50, T_raw: int = 64, V: int = 25, M: int = 1,
                  seed: int = 0, subjects_per_split: int = 5):
    """Build a balanced two-view synthetic recognition set.

    Returns ``(manifest, train, test)``.  Each sample appears once per view
    (two records sharing ``id`` and ``label``); train and test use disjoint
    subjects.
    """
    gen = SyntheticActions(classes, V, M, seed)
    manifest = gen.manifest()
    rng = np.random.default_rng([seed, 1])
    n_subj = 2 * subjects_per_split
    bone_scales = rng.uniform(0.9, 1.1, size=n_subj)
    splits = {}
    for name, subj_offset in (("train", 0), ("test", subjects_per_split)):
        records = []
        for k in range(classes):
            for i in range(per_class):
                subject = subj_offset + int(rng.integers(subjects_per_split))
                length = int(rng.integers(math.ceil(0.75 * T_raw), T_raw + 1))
                joints = gen.clip(k, length, rng, bone_scales[subject])
                for view in range(len(gen.view_angles)):
                    seq = SkeletonSequence(f"{name}_{k}_{i}", gen.place(joints, view), label=k,
                                           view=view, subject=subject)
                    records.append(center_root(seq, manifest.root))
        splits[name] = records
    return manifest, splits["train"], splits["test"]


def synth_untrimmed(classes: int = 4, videos: int = 8, actions_per_video: int = 4, V: int = 25, M: int = 1,
                    seed: int = 0, action_len=(40, 80), idle_len=(20, 40), subject_offset: int = 0,
                    split_seed: int = 0) -> list[SkeletonSequence]:
    """Long sequences of action clips separated by idle background with per-frame labels.

    Action families match ``synth_dataset`` for the same ``seed``.
    """
    gen = SyntheticActions(classes, V, M, seed)
    rng = np.random.default_rng([seed, 2, split_seed])
    out = []
    for vid in range(videos):
        scale = rng.uniform(0.9, 1.1)
        parts, labels = [], []
        for _ in range(actions_per_video):
            n_idle = int(rng.integers(idle_len[0], idle_len[1] + 1))
            parts.append(gen.idle(n_idle, rng, scale))
            labels.append(np.full(n_idle, BACKGROUND))
            k = int(rng.integers(classes))
            n_act = int(rng.integers(action_len[0], action_len[1] + 1))
            parts.append(gen.clip(k, n_act, rng, scale))
            labels.append(np.full(n_act, k))
        n_idle = int(rng.integers(idle_len[0], idle_len[1] + 1))
        parts.append(gen.idle(n_idle, rng, scale))
        labels.append(np.full(n_idle, BACKGROUND))
        seq = SkeletonSequence(f"video_{split_seed}_{vid}", gen.place(np.concatenate(parts), 0),
                               view=0, subject=subject_offset + vid, frame_labels=np.concatenate(labels))
        out.append(center_root(seq, gen.root))
    return out


def write_dataset(out_dir, manifest: DatasetManifest, splits: dict[str, list[SkeletonSequence]],
                  decimals: int | None = 5) -> Path:
    """Write ``manifest.json`` plus one JSONL file per split; return the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise PermissionError(f"output directory {out_dir} is not writable")
    manifest = replace(manifest, splits=dict(manifest.splits), base_dir=out_dir)
    for name, seqs in splits.items():
        fname = f"{name}.jsonl"
        save_split(out_dir / fname, seqs, decimals)
        manifest.splits[name] = fname
    path = out_dir / "manifest.json"
    manifest.save(path)
    return path
