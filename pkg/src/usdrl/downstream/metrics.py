"""Detection mAP and segmentation Acc / Edit / F1@k on half-open frame intervals."""

from __future__ import annotations

from typing import Iterable, NamedTuple, Sequence

import numpy as np

from ..skelio import BACKGROUND


class Segment(NamedTuple):
    start: int  # inclusive
    end: int  # exclusive
    label: int
    score: float = 1.0


def make_segment(start, end, label, score=1.0) -> Segment:
    seg = Segment(int(start), int(end), int(label), float(score))
    if seg.start >= seg.end:
        raise ValueError(f"segment start {seg.start} must be < end {seg.end}")
    if seg.label < 0:
        raise ValueError(f"segment class must be >= 0, got {seg.label}")
    return seg


def temporal_iou(a: Segment, b: Segment) -> float:
    inter = max(0, min(a.end, b.end) - max(a.start, b.start))
    union = (a.end - a.start) + (b.end - b.start) - inter
    return inter / union if union > 0 else 0.0


def segments_from_labels(labels: Sequence[int], background: int = BACKGROUND) -> list[Segment]:
    """Maximal runs of equal labels, background runs dropped."""
    labels = np.asarray(labels)
    out = []
    start = 0
    for t in range(1, len(labels) + 1):
        if t == len(labels) or labels[t] != labels[start]:
            if labels[start] != background:
                out.append(Segment(start, t, int(labels[start])))
            start = t
    return out


def average_precision(tp: np.ndarray, n_positive: int) -> float:
    """All-point interpolated AP from a score-ordered TP indicator."""
    if n_positive == 0:
        return float("nan")
    if len(tp) == 0:
        return 0.0
    tp = np.asarray(tp, dtype=np.float64)
    ctp = np.cumsum(tp)
    recall = ctp / n_positive
    precision = ctp / np.arange(1, len(tp) + 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.flatnonzero(mrec[1:] != mrec[:-1]) + 1
    return float(np.sum((mrec[idx] - mrec[idx - 1]) * mpre[idx]))


def _ranked(preds: Iterable[tuple[str, Segment]]) -> list[tuple[str, Segment]]:
    # full sort key makes the result independent of the input order
    return sorted(preds, key=lambda vp: (-vp[1].score, vp[0], vp[1].start, vp[1].end, vp[1].label))


def _match(ranked: list[tuple[str, Segment]], gt: dict[str, list[Segment]], threshold: float) -> np.ndarray:
    """Greedy matching: each prediction takes the best-IoU unmatched same-class GT at or above threshold."""
    used = {vid: np.zeros(len(segs), dtype=bool) for vid, segs in gt.items()}
    tp = np.zeros(len(ranked))
    for i, (vid, p) in enumerate(ranked):
        best, best_iou = -1, threshold
        for j, g in enumerate(gt.get(vid, [])):
            if used[vid][j] or g.label != p.label:
                continue
            iou = temporal_iou(p, g)
            if iou >= best_iou and (best < 0 or iou > best_iou):
                best, best_iou = j, iou
        if best >= 0:
            used[vid][best] = True
            tp[i] = 1.0
    return tp


def eval_detection_map(preds: dict[str, Sequence[Segment]], gt: dict[str, Sequence[Segment]],
                       iou_threshold: float = 0.5) -> tuple[float, float]:
    """Return ``(mAP_a, mAP_v)``.

    mAP_a averages per-class AP with predictions pooled across videos (classes
    without ground truth are left out).  mAP_v averages, over videos with
    ground truth, the AP of that video's predictions ranked across all classes.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"IoU threshold must be in (0, 1), got {iou_threshold}")
    gt = {vid: [Segment(*g) for g in segs] for vid, segs in gt.items()}
    preds = {vid: [Segment(*p) for p in segs] for vid, segs in preds.items()}

    classes = sorted({g.label for segs in gt.values() for g in segs})
    aps = []
    for c in classes:
        gt_c = {vid: [g for g in segs if g.label == c] for vid, segs in gt.items()}
        n_pos = sum(len(s) for s in gt_c.values())
        ranked = _ranked((vid, p) for vid, segs in preds.items() for p in segs if p.label == c)
        aps.append(average_precision(_match(ranked, gt_c, iou_threshold), n_pos))
    map_a = float(np.mean(aps)) if aps else float("nan")

    vaps = []
    for vid, segs in gt.items():
        if not segs:
            continue
        ranked = _ranked((vid, p) for p in preds.get(vid, []))
        vaps.append(average_precision(_match(ranked, {vid: segs}, iou_threshold), len(segs)))
    map_v = float(np.mean(vaps)) if vaps else float("nan")
    return map_a, map_v


def edit_distance(a: Sequence, b: Sequence) -> int:
    d = np.arange(len(b) + 1)
    for i in range(1, len(a) + 1):
        prev, d[0] = d[0], i
        for j in range(1, len(b) + 1):
            cur = min(d[j] + 1, d[j - 1] + 1, prev + (a[i - 1] != b[j - 1]))
            prev, d[j] = d[j], cur
    return int(d[len(b)])


def edit_score(pred_labels, gt_labels, background: int = BACKGROUND) -> float:
    p = [s.label for s in segments_from_labels(pred_labels, background)]
    g = [s.label for s in segments_from_labels(gt_labels, background)]
    norm = max(len(p), len(g))
    if norm == 0:
        return 100.0
    return (1.0 - edit_distance(p, g) / norm) * 100.0


def f1_at(pred_labels, gt_labels, overlap: float, background: int = BACKGROUND) -> float:
    """Segmental F1 (percent): predictions in temporal order greedily claim an unmatched same-class GT."""
    p_segs = segments_from_labels(pred_labels, background)
    g_segs = segments_from_labels(gt_labels, background)
    used = np.zeros(len(g_segs), dtype=bool)
    tp = 0
    for p in p_segs:
        best, best_iou = -1, -1.0
        for j, g in enumerate(g_segs):
            if used[j] or g.label != p.label:
                continue
            iou = temporal_iou(p, g)
            if iou > best_iou:
                best, best_iou = j, iou
        if best >= 0 and best_iou >= overlap:
            used[best] = True
            tp += 1
    fp, fn = len(p_segs) - tp, len(g_segs) - tp
    if tp == 0:
        return 100.0 if not p_segs and not g_segs else 0.0
    precision, recall = tp / (tp + fp), tp / (tp + fn)
    return 2 * precision * recall / (precision + recall) * 100.0


def eval_segmentation(pred_labels, gt_labels, overlaps=(0.10, 0.25, 0.50),
                      background: int = BACKGROUND) -> dict[str, float]:
    """Frame accuracy, edit score and segmental F1 at each overlap, all in percent."""
    pred_labels, gt_labels = np.asarray(pred_labels), np.asarray(gt_labels)
    if pred_labels.shape != gt_labels.shape:
        raise ValueError(f"prediction length {pred_labels.shape} != ground truth length {gt_labels.shape}")
    out = {
        "Acc": float(np.mean(pred_labels == gt_labels) * 100.0) if len(gt_labels) else 100.0,
        "Edit": edit_score(pred_labels, gt_labels, background),
    }
    for k in overlaps:
        out[f"F1@{int(round(k * 100))}"] = f1_at(pred_labels, gt_labels, k, background)
    return out
