"""External object-detection ingestion and dynamic-class selection.

Detections arrive as JSON Lines: one record per frame,
``{"timestamp": <sec>, "detections": [{"label", "confidence",
"bbox": [x, y, w, h]}, ...]}`` with bbox in pixels of the full-resolution
color image.  Records are produced by an external detector; this package
only consumes them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

__all__ = [
    "DetectionParseError",
    "Detection",
    "DetectionSet",
    "DynamicPolicy",
    "parse_detections",
    "select_dynamic",
]


class DetectionParseError(ValueError):
    """A detection record could not be parsed; the message names the line."""


@dataclass(frozen=True)
class Detection:
    label: str
    confidence: float
    bbox: tuple[float, float, float, float]  # (x, y, w, h), pixels


@dataclass(frozen=True)
class DetectionSet:
    timestamp: float
    detections: tuple[Detection, ...]


@dataclass(frozen=True)
class DynamicPolicy:
    """Which detections mark dynamic regions.

    A detection is dynamic iff its label is in ``dynamic_classes`` and its
    confidence is >= ``min_confidence``.
    """

    dynamic_classes: frozenset[str] = field(default_factory=lambda: frozenset({"person"}))
    min_confidence: float = 0.0


def _clamp_bbox(
    x: float, y: float, w: float, h: float, width: int, height: int
) -> tuple[float, float, float, float] | None:
    x0 = max(x, 0.0)
    y0 = max(y, 0.0)
    x1 = min(x + w, float(width))
    y1 = min(y + h, float(height))
    if x1 <= x0 or y1 <= y0:
        return None
    return (x0, y0, x1 - x0, y1 - y0)


def parse_detections(path: str | Path, width: int, height: int) -> list[DetectionSet]:
    """Parse a JSONL detections file.

    Bounding boxes are clamped to ``width`` x ``height``; boxes that are
    empty after clamping (including boxes fully outside the image and boxes
    with non-positive extent) are dropped.  Unknown fields are ignored.
    Structural problems raise :class:`DetectionParseError` naming the
    1-based line number.
    """
    out: list[DetectionSet] = []
    with open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DetectionParseError(f"{path}: line {lineno}: invalid JSON ({e})") from e
            try:
                ts = float(rec["timestamp"])
                raw = rec["detections"]
                dets = []
                for d in raw:
                    label = d["label"]
                    conf = float(d["confidence"])
                    bx, by, bw, bh = (float(v) for v in d["bbox"])
                    if not isinstance(label, str):
                        raise TypeError("label must be a string")
                    if not 0.0 <= conf <= 1.0:
                        raise ValueError(f"confidence {conf} outside [0, 1]")
                    clamped = _clamp_bbox(bx, by, bw, bh, width, height)
                    if clamped is None:
                        continue
                    dets.append(Detection(label, conf, clamped))
            except (KeyError, TypeError, ValueError) as e:
                raise DetectionParseError(f"{path}: line {lineno}: {e}") from e
            out.append(DetectionSet(ts, tuple(dets)))
    return out


def select_dynamic(
    ds: DetectionSet, policy: DynamicPolicy
) -> list[tuple[float, float, float, float]]:
    """Bounding boxes of the dynamic detections, in input order."""
    return [
        d.bbox
        for d in ds.detections
        if d.label in policy.dynamic_classes and d.confidence >= policy.min_confidence
    ]
