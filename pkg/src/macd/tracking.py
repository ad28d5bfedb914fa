"""Detection ingestion and track linking.

Per-frame detections come in as newline-delimited JSON records
{"frame": int, "bbox": [x1,y1,x2,y2], "class": int, "conf": float}
(unknown keys ignored). Linking is greedy frame-to-frame association on
IoU against a constant-velocity predicted box, with linear interpolation
bridging short detection gaps, followed by soft-mask rasterization and
confidence-based overlap normalization.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import FrameOutOfRange, MalformedRecord, ValueOutOfRange
from .video import BoundingBox


@dataclass(frozen=True)
class Detection:
    frame: int
    box: BoundingBox
    class_id: int
    confidence: float

    def __post_init__(self):
        if self.frame < 0:
            raise FrameOutOfRange(f"frame {self.frame} is negative")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueOutOfRange(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class TrackerConfig:
    iou_gate: float = 0.3
    motion_gate: float = 0.2
    max_gap: int = 3
    min_length: int = 2
    min_mean_conf: float = 0.2
    blur_sigma: float = 2.0
    det_threshold: float = 0.5

    def __post_init__(self):
        for name in ("iou_gate", "motion_gate", "min_mean_conf", "det_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueOutOfRange(f"{name}={v} outside [0, 1]")
        if self.max_gap < 0:
            raise ValueOutOfRange("max_gap must be >= 0")
        if self.blur_sigma < 0:
            raise ValueOutOfRange("blur_sigma must be >= 0")


@dataclass(frozen=True)
class ObjectTrack:
    """A temporally linked object: per-frame boxes over its span (gaps
    filled), optional per-frame soft masks, and mean detection confidence."""

    track_id: int
    class_id: int
    confidence: float
    span: tuple[int, int]
    boxes: dict[int, BoundingBox]
    masks: dict[int, np.ndarray] = field(default_factory=dict)
    detected_frames: tuple[int, ...] = ()

    def frames(self) -> range:
        return range(self.span[0], self.span[1] + 1)


def parse_detections(path, cfg: TrackerConfig) -> list[Detection]:
    dets: list[Detection] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(line_no, f"invalid JSON: {exc}") from exc
            if not isinstance(rec, dict):
                raise MalformedRecord(line_no, "record is not an object")
            for key in ("frame", "bbox", "class", "conf"):
                if key not in rec:
                    raise MalformedRecord(line_no, f"missing key {key!r}")
            bbox = rec["bbox"]
            if not (isinstance(bbox, (list, tuple)) and len(bbox) == 4):
                raise MalformedRecord(line_no, "bbox must be [x1, y1, x2, y2]")
            try:
                box = BoundingBox(*(float(v) for v in bbox))
                det = Detection(int(rec["frame"]), box, int(rec["class"]),
                                float(rec["conf"]))
            except FrameOutOfRange:
                raise
            except (TypeError, ValueError, ValueOutOfRange) as exc:
                raise MalformedRecord(line_no, str(exc)) from exc
            if det.confidence >= cfg.det_threshold:
                dets.append(det)
    dets.sort(key=lambda d: d.frame)  # stable: within-frame order preserved
    return dets


def validate_frames(dets: list[Detection], n_frames: int) -> None:
    for d in dets:
        if d.frame >= n_frames:
            raise FrameOutOfRange(f"detection frame {d.frame} >= T={n_frames}")


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ix1 = max(a.x1, b.x1)
    iy1 = max(a.y1, b.y1)
    ix2 = min(a.x2, b.x2)
    iy2 = min(a.y2, b.y2)
    iw = max(0.0, ix2 - ix1)
    ih = max(0.0, iy2 - iy1)
    inter = iw * ih
    if inter <= 0.0:
        return 0.0
    union = a.area + b.area - inter
    return inter / union


class _OpenTrack:
    __slots__ = ("order", "class_id", "entries")

    def __init__(self, order: int, class_id: int, frame: int, box: BoundingBox,
                 conf: float):
        self.order = order
        self.class_id = class_id
        self.entries: list[tuple[int, BoundingBox, float]] = [(frame, box, conf)]

    @property
    def last(self) -> tuple[int, BoundingBox, float]:
        return self.entries[-1]

    def predicted_box(self, frame: int) -> BoundingBox:
        lf, lb, _ = self.entries[-1]
        if len(self.entries) < 2:
            return lb
        pf, pb, _ = self.entries[-2]
        steps = lf - pf
        lc, pc = lb.center(), pb.center()
        vx = (lc[0] - pc[0]) / steps
        vy = (lc[1] - pc[1]) / steps
        dt = frame - lf
        dx, dy = vx * dt, vy * dt
        return BoundingBox(lb.x1 + dx, lb.y1 + dy, lb.x2 + dx, lb.y2 + dy)


def _interpolate(b0: BoundingBox, b1: BoundingBox, alpha: float) -> BoundingBox:
    return BoundingBox(
        b0.x1 + (b1.x1 - b0.x1) * alpha,
        b0.y1 + (b1.y1 - b0.y1) * alpha,
        b0.x2 + (b1.x2 - b0.x2) * alpha,
        b0.y2 + (b1.y2 - b0.y2) * alpha,
    )


def link_tracks(dets: list[Detection], cfg: TrackerConfig) -> list[ObjectTrack]:
    """Greedy best-IoU association against constant-velocity predictions.

    A detection may join an open same-class track when both the raw IoU
    with the track's last box passes iou_gate and the IoU with the
    predicted box passes motion_gate; pairs are taken in descending
    predicted-IoU order with the older track winning ties. Gaps up to
    max_gap frames are later bridged by linear corner interpolation.
    """
    if not dets:
        return []
    by_frame: dict[int, list[Detection]] = {}
    for d in dets:
        by_frame.setdefault(d.frame, []).append(d)

    open_tracks: list[_OpenTrack] = []
    for frame in sorted(by_frame):
        frame_dets = by_frame[frame]
        candidates = []
        for tr in open_tracks:
            lf = tr.last[0]
            if frame - lf - 1 > cfg.max_gap or lf >= frame:
                continue
            pred = tr.predicted_box(frame)
            for di, det in enumerate(frame_dets):
                if det.class_id != tr.class_id:
                    continue
                iou_pred = iou(det.box, pred)
                iou_last = iou(det.box, tr.last[1])
                if iou_pred >= cfg.motion_gate and iou_last >= cfg.iou_gate:
                    candidates.append((-iou_pred, tr.order, di, tr, det))
        candidates.sort(key=lambda c: (c[0], c[1], c[2]))
        used_tracks: set[int] = set()
        used_dets: set[int] = set()
        for _, torder, di, tr, det in candidates:
            if torder in used_tracks or di in used_dets:
                continue
            used_tracks.add(torder)
            used_dets.add(di)
            tr.entries.append((frame, det.box, det.confidence))
        for di, det in enumerate(frame_dets):
            if di not in used_dets:
                open_tracks.append(_OpenTrack(len(open_tracks), det.class_id,
                                              frame, det.box, det.confidence))

    tracks: list[ObjectTrack] = []
    next_id = 0
    for tr in open_tracks:
        frames = [e[0] for e in tr.entries]
        confs = [e[2] for e in tr.entries]
        mean_conf = sum(confs) / len(confs)
        span_len = frames[-1] - frames[0] + 1
        if mean_conf < cfg.min_mean_conf:
            continue
        if span_len < cfg.min_length and mean_conf < 0.6:
            # retention exception: short but confident tracks survive
            continue
        boxes: dict[int, BoundingBox] = {}
        for (f0, b0, _), (f1, b1, _) in zip(tr.entries, tr.entries[1:]):
            boxes[f0] = b0
            for g in range(f0 + 1, f1):
                boxes[g] = _interpolate(b0, b1, (g - f0) / (f1 - f0))
        boxes[frames[-1]] = tr.entries[-1][1]
        tracks.append(ObjectTrack(
            track_id=next_id,
            class_id=tr.class_id,
            confidence=mean_conf,
            span=(frames[0], frames[-1]),
            boxes=boxes,
            detected_frames=tuple(frames),
        ))
        next_id += 1
    return tracks


def rasterize_soft_masks(tracks: list[ObjectTrack], shape: tuple[int, int],
                         cfg: TrackerConfig) -> list[ObjectTrack]:
    """Per-frame soft masks: box indicator blurred with a separable
    Gaussian (sigma = cfg.blur_sigma), interior plateau renormalized to 1."""
    h, w = shape
    out = []
    for tr in tracks:
        masks = {}
        for f in tr.frames():
            box = tr.boxes[f].clamped(h, w)
            masks[f] = kernels.soft_box_mask(h, w, box.x1, box.y1, box.x2,
                                             box.y2, cfg.blur_sigma)
        out.append(replace(tr, masks=masks))
    return out


def normalize_overlaps(tracks: list[ObjectTrack]) -> list[ObjectTrack]:
    """Rescale masks at over-covered pixels so they share unit coverage in
    proportion to confidence-weighted mask mass; other pixels unchanged."""
    if not tracks:
        return []
    all_frames = sorted({f for tr in tracks for f in tr.masks})
    new_masks: list[dict[int, np.ndarray]] = [dict(tr.masks) for tr in tracks]
    for f in all_frames:
        idx = [i for i, tr in enumerate(tracks) if f in tr.masks]
        if len(idx) < 2:
            continue
        stack = np.stack([tracks[i].masks[f] for i in idx])
        confs = np.array([tracks[i].confidence for i in idx], dtype=np.float64)
        fixed = kernels.normalize_overlaps_px(stack, confs)
        for j, i in enumerate(idx):
            new_masks[i][f] = fixed[j]
    return [replace(tr, masks=m) for tr, m in zip(tracks, new_masks)]


def build_tracks(dets: list[Detection], shape: tuple[int, int],
                 cfg: TrackerConfig) -> list[ObjectTrack]:
    """parse -> link -> rasterize -> normalize convenience pipeline."""
    return normalize_overlaps(rasterize_soft_masks(link_tracks(dets, cfg), shape, cfg))


def serialize_tracks(tracks: list[ObjectTrack]) -> str:
    """Canonical JSON for determinism audits; masks appear as digests."""
    payload = []
    for tr in tracks:
        payload.append({
            "track_id": tr.track_id,
            "class_id": tr.class_id,
            "confidence": tr.confidence,
            "span": list(tr.span),
            "detected_frames": list(tr.detected_frames),
            "boxes": {str(f): [b.x1, b.y1, b.x2, b.y2]
                      for f, b in sorted(tr.boxes.items())},
            "mask_sha256": {str(f): hashlib.sha256(
                np.ascontiguousarray(m, dtype=np.float64).tobytes()).hexdigest()
                for f, m in sorted(tr.masks.items())},
        })
    return json.dumps(payload, sort_keys=True)
