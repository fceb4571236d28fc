"""Frame scores to event lists, and event-based F1 metrics.

Decoding: per-class sliding median (edge-replicated), binarize at a
threshold, and every maximal run of positive frames becomes one event.
Scoring: collar-based F1 (onset/offset tolerance matching, greedy
one-to-one in onset order) and the simplified single-clip
intersection-based F1 with detection/ground-truth tolerance thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class Event:
    clip_id: str
    onset: float
    offset: float
    label: str

    def __post_init__(self):
        if not (0 <= self.onset < self.offset):
            raise ConfigError(f"need 0 <= onset < offset, got ({self.onset}, {self.offset})")


EventList = List[Event]


@dataclass
class PostConfig:
    threshold: float = 0.5
    frame_hop_seconds: float = 0.016
    median_windows: Dict[str, int] = field(default_factory=dict)
    default_window: int = 7

    def window_for(self, label: str) -> int:
        w = self.median_windows.get(label, self.default_window)
        if w < 1 or w % 2 == 0:
            raise ConfigError(f"median window must be odd and >= 1, got {w} for {label!r}")
        return w


def median_filter(scores: np.ndarray, windows: Sequence[int]) -> np.ndarray:
    """Per-class sliding median over [classes, T] with edge-replication padding."""
    if scores.ndim != 2:
        raise ShapeError(f"expected [classes, T], got {scores.shape}")
    if len(windows) != scores.shape[0]:
        raise ShapeError("one window per class required")
    out = np.empty_like(scores)
    for c, w in enumerate(windows):
        if w < 1 or w % 2 == 0:
            raise ConfigError(f"median window must be odd and >= 1, got {w}")
        if w == 1:
            out[c] = scores[c]
            continue
        half = w // 2
        padded = np.pad(scores[c], half, mode="edge")
        view = np.lib.stride_tricks.sliding_window_view(padded, w)
        out[c] = np.median(view, axis=1)
    return out


def decode_events(scores: np.ndarray, labels: Sequence[str], cfg: PostConfig, clip_id: str) -> EventList:
    """Binarize at the threshold; each maximal run of positives is one event,
    spanning [run_start*hop, (run_end+1)*hop] seconds."""
    if scores.ndim != 2 or scores.shape[0] != len(labels):
        raise ShapeError(f"scores {scores.shape} vs {len(labels)} labels")
    events: EventList = []
    hop = cfg.frame_hop_seconds
    for c, label in enumerate(labels):
        active = scores[c] >= cfg.threshold
        padded = np.concatenate([[False], active, [False]])
        starts = np.flatnonzero(~padded[:-1] & padded[1:])
        ends = np.flatnonzero(padded[:-1] & ~padded[1:])
        for s, e in zip(starts, ends):
            events.append(Event(clip_id, s * hop, e * hop, label))
    return events


def apply_postprocessing(scores: np.ndarray, labels: Sequence[str], cfg: PostConfig, clip_id: str) -> EventList:
    windows = [cfg.window_for(lab) for lab in labels]
    return decode_events(median_filter(scores, windows), labels, cfg, clip_id)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 1.0


def _group(events: Iterable[Event]) -> Dict[Tuple[str, str], List[Event]]:
    out: Dict[Tuple[str, str], List[Event]] = {}
    for ev in events:
        out.setdefault((ev.clip_id, ev.label), []).append(ev)
    return out


def _macro(per_class: Dict[str, Tuple[int, int, int]]) -> Tuple[Dict[str, float], float]:
    scores = {lab: _f1(*counts) for lab, counts in per_class.items()}
    # classes with neither references nor hypotheses are excluded
    active = [s for lab, s in scores.items() if sum(per_class[lab]) > 0]
    macro = float(np.mean(active)) if active else 0.0
    return scores, macro


def collar_f1(
    ref: EventList,
    hyp: EventList,
    onset_collar: float = 0.2,
    offset_collar: float = 0.2,
    offset_collar_rate: float = 0.2,
) -> Tuple[Dict[str, float], float]:
    """Collar-based F1: a hypothesis matches a reference of the same class
    and clip iff |onset diff| <= onset_collar and |offset diff| <=
    max(offset_collar, offset_collar_rate * ref duration). Matching is
    greedy one-to-one in onset order. Returns (per-class F1, macro F1)."""
    labels = sorted({e.label for e in ref} | {e.label for e in hyp})
    counts = {lab: [0, 0, 0] for lab in labels}  # tp, fp, fn
    ref_groups = _group(ref)
    hyp_groups = _group(hyp)
    for key in sorted(set(ref_groups) | set(hyp_groups)):
        _, label = key
        refs = sorted(ref_groups.get(key, []), key=lambda e: (e.onset, e.offset))
        hyps = sorted(hyp_groups.get(key, []), key=lambda e: (e.onset, e.offset))
        matched = [False] * len(refs)
        tp = 0
        for h in hyps:
            for i, r in enumerate(refs):
                if matched[i]:
                    continue
                tol_off = max(offset_collar, offset_collar_rate * (r.offset - r.onset))
                if abs(h.onset - r.onset) <= onset_collar and abs(h.offset - r.offset) <= tol_off:
                    matched[i] = True
                    tp += 1
                    break
        counts[label][0] += tp
        counts[label][1] += len(hyps) - tp
        counts[label][2] += len(refs) - tp
    return _macro({lab: tuple(c) for lab, c in counts.items()})


def _intersection(a: Event, b: Event) -> float:
    return max(0.0, min(a.offset, b.offset) - max(a.onset, b.onset))


def intersection_f1(
    ref: EventList, hyp: EventList, dtc: float = 0.5, gtc: float = 0.5
) -> Tuple[Dict[str, float], float]:
    """Intersection-based F1 with detection (dtc) and ground-truth (gtc)
    tolerance criteria. A hypothesis is a TP candidate when its total
    same-class intersection covers >= dtc of its own duration; a
    reference counts as detected when TP candidates cover >= gtc of its
    duration. TP = detected refs, FN = remaining refs, FP = hypotheses
    failing the dtc."""
    if not (0 < dtc <= 1 and 0 < gtc <= 1):
        raise ConfigError("dtc and gtc must lie in (0, 1]")
    labels = sorted({e.label for e in ref} | {e.label for e in hyp})
    counts = {lab: [0, 0, 0] for lab in labels}
    ref_groups = _group(ref)
    hyp_groups = _group(hyp)
    for key in sorted(set(ref_groups) | set(hyp_groups)):
        _, label = key
        refs = ref_groups.get(key, [])
        hyps = hyp_groups.get(key, [])
        candidates = []
        fp = 0
        for h in hyps:
            covered = sum(_intersection(h, r) for r in refs)
            if (h.offset - h.onset) > 0 and covered / (h.offset - h.onset) >= dtc:
                candidates.append(h)
            else:
                fp += 1
        tp = 0
        for r in refs:
            covered = sum(_intersection(r, h) for h in candidates)
            if covered / (r.offset - r.onset) >= gtc:
                tp += 1
        counts[label][0] += tp
        counts[label][1] += fp
        counts[label][2] += len(refs) - tp
    return _macro({lab: tuple(c) for lab, c in counts.items()})


# ---------------------------------------------------------------------------
# Events TSV
# ---------------------------------------------------------------------------

TSV_HEADER = "filename\tonset\toffset\tevent_label"


def write_events_tsv(path, events: EventList) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(TSV_HEADER + "\n")
        for ev in sorted(events, key=lambda e: (e.clip_id, e.onset, e.offset, e.label)):
            f.write(f"{ev.clip_id}\t{ev.onset:.3f}\t{ev.offset:.3f}\t{ev.label}\n")


def read_events_tsv(path) -> EventList:
    events: EventList = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        if header.split("\t") != TSV_HEADER.split("\t"):
            raise ConfigError(f"bad events TSV header: {header!r}")
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ConfigError(f"line {lineno}: expected 4 tab-separated fields")
            events.append(Event(parts[0], float(parts[1]), float(parts[2]), parts[3]))
    return events
