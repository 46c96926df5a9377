"""Evaluation protocols: probe, retrieval, semi-supervised fine-tuning and dense prediction heads."""

from __future__ import annotations

import copy
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..skelio import BACKGROUND, SkeletonSequence
from ..validation import check_embeddings, check_fraction, check_labels
from .metrics import Segment, segments_from_labels

OBSERVATION_RATIOS = tuple(round(0.1 * i, 1) for i in range(1, 11))


def linear_probe(train_X, train_y, test_X, test_y, epochs: int = 300, lr: float = 0.05) -> float:
    """Top-1 test accuracy of an affine softmax classifier trained on frozen embeddings."""
    from ..estimators import LinearProbe

    train_y, test_y = np.asarray(train_y), np.asarray(test_y)
    missing = sorted(set(test_y.tolist()) - set(train_y.tolist()))
    if missing:
        raise ValueError(f"classes {missing} appear in the test set but not in training")
    return float(LinearProbe(epochs, lr).fit(train_X, train_y).score(test_X, test_y))


@dataclass
class RetrievalResult:
    rankings: np.ndarray
    predictions: np.ndarray
    top1: float | None = None


def knn_retrieve(query, gallery, gallery_labels, query_labels=None, query_ids=None,
                 gallery_ids=None) -> RetrievalResult:
    from ..estimators import KNNRetriever

    knn = KNNRetriever().fit(gallery, gallery_labels, ids=gallery_ids)
    ranks = knn.rank(query, ids=query_ids)
    pred = knn.labels_[ranks[:, 0]]
    top1 = None
    if query_labels is not None:
        top1 = float(np.mean(pred == check_labels(query_labels, len(pred))))
    return RetrievalResult(ranks, pred, top1)


def stratified_subset(labels, fraction: float, seed: int = 0) -> tuple[np.ndarray, list[int]]:
    """Indices of a per-class ``round(fraction * n_c)`` sample; classes rounding to zero are dropped."""
    fraction = check_fraction(fraction)
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    keep, dropped = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        n = int(round(fraction * len(idx)))
        if n == 0:
            dropped.append(int(c))
            continue
        keep.append(np.sort(rng.choice(idx, size=n, replace=False)))
    if dropped:
        warnings.warn(f"labeled fraction {fraction} leaves classes {dropped} without samples; dropped",
                      stacklevel=2)
    return (np.sort(np.concatenate(keep)) if keep else np.zeros(0, dtype=int)), dropped


@dataclass
class SemiResult:
    accuracy: float
    subset: np.ndarray
    dropped: list[int] = field(default_factory=list)


def finetune_semi(net, train: Sequence[SkeletonSequence], test: Sequence[SkeletonSequence], fraction: float,
                  make_inputs: Callable, num_classes: int, epochs: int = 20, lr: float = 1e-3,
                  batch_size: int = 32, seed: int = 0) -> SemiResult:
    """Fine-tune a copy of the encoder plus a linear head on a stratified labeled fraction.

    ``make_inputs`` turns a list of sequences into the encoder's modality dict.
    """
    labels = np.array([s.label for s in train])
    subset, dropped = stratified_subset(labels, fraction, seed)
    if subset.size == 0:
        raise ValueError("labeled subset is empty")
    model = copy.deepcopy(net)
    head = nn.Linear(2 * model.cfg.repr_dim, num_classes).to(next(model.parameters()).dtype)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        bound = 1 / math.sqrt(head.in_features)
        head.weight.copy_(torch.rand(head.weight.shape, generator=gen) * 2 * bound - bound)
        head.bias.zero_()
    params = list(model.embeddings.parameters()) + list(model.encoder.parameters()) + list(head.parameters())
    opt = torch.optim.Adam(params, lr=lr)
    rng = np.random.default_rng(seed)
    model.train()
    for _ in range(epochs):
        order = subset[rng.permutation(len(subset))]
        for b in range(0, len(order), batch_size):
            idx = order[b:b + batch_size]
            x = make_inputs([train[i] for i in idx])
            opt.zero_grad()
            F.cross_entropy(head(model.embed(x)), torch.as_tensor(labels[idx])).backward()
            opt.step()
    model.eval()
    correct = 0
    with torch.no_grad():
        for b in range(0, len(test), 64):
            chunk = list(test[b:b + 64])
            pred = head(model.embed(make_inputs(chunk))).argmax(dim=-1).numpy()
            correct += int(np.sum(pred == np.array([s.label for s in chunk])))
    return SemiResult(correct / len(test), subset, dropped)


# -- dense prediction ---------------------------------------------------------

def window_starts(n: int, window: int, stride: int) -> list[int]:
    if not 1 <= stride <= window:
        # a stride past the window would leave frames no window covers
        raise ValueError(f"stride must be in [1, window={window}], got {stride}")
    if n <= window:
        return [0]
    starts = list(range(0, n - window + 1, stride))
    if starts[-1] + window < n:
        starts.append(n - window)
    return starts


def frame_probs(frames: np.ndarray, window: int, stride: int,
                predict: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Sliding-window per-frame probabilities ``[T_video][n_out]``.

    ``predict`` maps windows ``[B][window][...]`` to ``[B][window][n_out]``.
    Overlapping predictions are averaged and each row renormalized; a final
    window aligned to the sequence end covers any tail, and sequences shorter
    than the window are zero-padded with the padding dropped from the output.
    """
    frames = np.asarray(frames)
    n = frames.shape[0]
    starts = window_starts(n, window, stride)
    if n < window:
        pad = np.zeros((window - n,) + frames.shape[1:])
        batch = np.concatenate([frames, pad])[None]
    else:
        batch = np.stack([frames[s:s + window] for s in starts])
    out = np.asarray(predict(batch), dtype=np.float64)
    total = np.zeros((n, out.shape[-1]))
    count = np.zeros(n)
    for s, probs in zip(starts, out):
        m = min(window, n - s)
        total[s:s + m] += probs[:m]
        count[s:s + m] += 1
    avg = total / count[:, None]
    return avg / avg.sum(axis=1, keepdims=True)


def median_smooth(labels: np.ndarray, size: int) -> np.ndarray:
    """Sliding median (lower median for even sizes) with edge replication."""
    labels = np.asarray(labels)
    if size <= 1 or len(labels) == 0:
        return labels.copy()
    left = (size - 1) // 2
    padded = np.pad(labels, (left, size - 1 - left), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, size)
    return np.sort(win, axis=1)[:, (size - 1) // 2]


def postprocess_segments(fp: np.ndarray, min_length: int = 5, smoothing: int = 9) -> list[Segment]:
    """Frame probabilities (last column background) to scored segments.

    Argmax labels are median-smoothed, maximal non-background runs become
    segments scored by the mean probability of their class, and runs shorter
    than ``min_length`` are dropped.
    """
    fp = np.asarray(fp, dtype=np.float64)
    bg = fp.shape[1] - 1
    lab = np.argmax(fp, axis=1)
    lab = np.where(lab == bg, BACKGROUND, lab)
    lab = median_smooth(lab, smoothing)
    out = []
    for seg in segments_from_labels(lab):
        if seg.end - seg.start >= min_length:
            out.append(Segment(seg.start, seg.end, seg.label, float(fp[seg.start:seg.end, seg.label].mean())))
    return out


@dataclass
class PredictionCurve:
    ratios: list[float]
    accuracy: list[float]

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.ratios, self.ratios[1:])):
            raise ValueError("observation ratios must be strictly increasing")

    def rows(self) -> list[tuple[float, float]]:
        return list(zip(self.ratios, self.accuracy))


def observed_frames(ratio: float, length: int) -> int:
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"observation ratio must be in (0, 1], got {ratio}")
    # round first so 0.3 * 10 counts as 3, not 4
    return max(1, math.ceil(round(ratio * length, 9)))


def aggregate_predict(frame_probs_: np.ndarray, n_observed: int | None = None) -> np.ndarray:
    """Argmax of the mean per-frame probability over the first ``n_observed`` frames."""
    p = np.asarray(frame_probs_, dtype=np.float64)
    n = p.shape[1] if n_observed is None else n_observed
    return np.argmax(p[:, :n].mean(axis=1), axis=1)


def predict_early(frame_probs_, labels, ratios=OBSERVATION_RATIOS) -> PredictionCurve:
    """Accuracy when only the first ``ceil(r*T)`` frames' probabilities are averaged.

    ``frame_probs_`` is ``[n][T][C]`` per-frame class probabilities from a causal model.
    """
    p = np.asarray(frame_probs_, dtype=np.float64)
    y = check_labels(labels, p.shape[0])
    T = p.shape[1]
    acc = [float(np.mean(aggregate_predict(p, observed_frames(r, T)) == y)) for r in ratios]
    return PredictionCurve([float(r) for r in ratios], acc)


def ensemble_logits(probs: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """Average per-model class probabilities; return ``(mean_probs, argmax predictions)``."""
    arrs = [np.asarray(p, dtype=np.float64) for p in probs]
    if not arrs:
        raise ValueError("ensemble needs at least one model")
    counts = {a.shape[-1] for a in arrs}
    if len(counts) != 1:
        raise ValueError(f"models disagree on class count: {sorted(counts)}")
    if len({a.shape for a in arrs}) != 1:
        raise ValueError("models produced outputs of different shapes")
    total = arrs[0]
    for a in arrs[1:]:
        total = total + a
    mean = total / len(arrs)
    return mean, np.argmax(mean, axis=-1)
