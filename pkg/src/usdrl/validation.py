"""Input validation helpers shared by the estimators and evaluation code."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .skelio import SkeletonSequence, modality_array, temporal_resample


def check_sequences(X, *, require_label: bool = False) -> list[SkeletonSequence]:
    seqs = list(X)
    if not seqs:
        raise ValueError("expected at least one SkeletonSequence")
    for s in seqs:
        if not isinstance(s, SkeletonSequence):
            raise TypeError(f"expected SkeletonSequence, got {type(s).__name__}")
        if require_label and s.label is None:
            raise ValueError(f"sequence {s.id!r} has no label")
    return seqs


def check_embeddings(X, ids=None, *, nonzero: bool = False) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"embeddings must be a 2-D array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("embeddings contain non-finite values")
    if nonzero:
        norms = np.linalg.norm(X, axis=1)
        bad = np.flatnonzero(norms == 0)
        if bad.size:
            name = ids[bad[0]] if ids is not None else int(bad[0])
            raise ValueError(f"embedding {name!r} has zero norm")
    return X


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {y.shape}")
    return y.astype(np.int64)


def check_fraction(f: float, name: str = "fraction", *, open_low: bool = True) -> float:
    f = float(f)
    lo_ok = f > 0 if open_low else f >= 0
    if not (lo_ok and f <= 1):
        raise ValueError(f"{name} must be in (0, 1], got {f}")
    return f


def stack_frames(seqs: Sequence[SkeletonSequence], length: int) -> np.ndarray:
    """Resample each sequence to ``length`` frames and stack to ``[B][T][M][V][C]``."""
    return np.stack([temporal_resample(s, length).frames for s in seqs])


def modality_batch(x: np.ndarray, modalities: Sequence[str], edges) -> dict[str, np.ndarray]:
    """Derive each modality from a joint batch ``[B][T][M][V][C]``."""
    return {m: modality_array(x, m, edges, time_axis=1) for m in modalities}


def check_shape(x, expected: tuple, what: str = "input"):
    if tuple(x.shape[1:]) != tuple(expected):
        raise ValueError(f"{what} has per-sample shape {tuple(x.shape[1:])}, expected {tuple(expected)}")
