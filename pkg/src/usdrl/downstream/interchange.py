"""File formats for predictions, ground truth, metric reports and curves."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

from .metrics import Segment, make_segment


def write_segments(path, segments: dict[str, Iterable[Segment]]) -> None:
    """One line per video: ``{"id", "triplets": [[start, end, class, score], ...]}``."""
    with open(path, "w") as fh:
        for vid in sorted(segments):
            trip = [[s.start, s.end, s.label, s.score] for s in segments[vid]]
            fh.write(json.dumps({"id": vid, "triplets": trip}) + "\n")


def _records(path):
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                try:
                    rec = json.loads(line)
                    yield n, str(rec["id"]), rec
                except (ValueError, KeyError, TypeError) as exc:
                    raise ValueError(f"{path}:{n}: bad record ({exc})") from exc


def read_segments(path) -> dict[str, list[Segment]]:
    out: dict[str, list[Segment]] = {}
    for n, vid, rec in _records(path):
        try:
            segs = [make_segment(*t) for t in rec["triplets"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"{path}:{n}: bad triplet for {vid!r} ({exc})") from exc
        out.setdefault(vid, []).extend(segs)
    return out


def write_frame_labels(path, labels: dict[str, Sequence[int]]) -> None:
    with open(path, "w") as fh:
        for vid in sorted(labels):
            fh.write(json.dumps({"id": vid, "frame_labels": [int(x) for x in labels[vid]]}) + "\n")


def read_frame_labels(path) -> dict[str, list[int]]:
    return {vid: [int(x) for x in rec["frame_labels"]] for _, vid, rec in _records(path)}


def write_ratio_probs(path, probs: dict[str, dict[float, Sequence[float]]]) -> None:
    """Per-sequence class probabilities at each observation ratio."""
    with open(path, "w") as fh:
        for sid in sorted(probs):
            rp = {f"{r:.1f}": [float(x) for x in p] for r, p in probs[sid].items()}
            fh.write(json.dumps({"id": sid, "ratio_probs": rp}) + "\n")


def read_ratio_probs(path) -> dict[str, dict[float, list[float]]]:
    return {sid: {float(r): p for r, p in rec["ratio_probs"].items()} for _, sid, rec in _records(path)}


def finite_metrics(metrics: dict) -> bool:
    """True when every numeric leaf is finite."""
    def leaves(v):
        if isinstance(v, dict):
            for x in v.values():
                yield from leaves(x)
        elif isinstance(v, (list, tuple)):
            for x in v:
                yield from leaves(x)
        elif isinstance(v, (int, float)) and not isinstance(v, bool):
            yield float(v)
    return all(math.isfinite(x) for x in leaves(metrics))


def write_report(path, report: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


def write_curve(path, header: tuple[str, ...], rows: Iterable[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def read_curve(path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
