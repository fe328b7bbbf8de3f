"""Core value types for frame-level detections and action tubes.

Everything here is an immutable dataclass validated on construction.
Frame intervals are half-open ``[start, end)`` over integer frame
indices; boxes are continuous pixel coordinates with the origin at the
top left corner.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterator, Sequence

from .errors import InputError

SCORE_SUM_TOL = 1e-6


class Source(str, Enum):
    """Which stage produced a detection."""

    STATIC = "static"
    FLOW = "flow"
    EARLY_FUSION = "early_fusion"
    LATE_FUSION = "late_fusion"
    MERGED = "merged"
    TRACKED = "tracked"


def _require_finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise InputError(f"{name} must be finite, got {v!r}")


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with strictly positive extent on both axes."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        _require_finite("box coordinate", self.x_min, self.y_min,
                        self.x_max, self.y_max)
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InputError(
                f"degenerate box ({self.x_min}, {self.y_min}, "
                f"{self.x_max}, {self.y_max})")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def area(self) -> float:
        return self.width * self.height

    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max),
                0.5 * (self.y_min + self.y_max))

    def translated(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x_min + dx, self.y_min + dy,
                           self.x_max + dx, self.y_max + dy)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class FrameInterval:
    """Half-open, non-empty range of frame indices."""

    start: int
    end: int

    def __post_init__(self):
        if self.start >= self.end:
            raise InputError(
                f"empty frame interval [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start

    def __contains__(self, frame: int) -> bool:
        return self.start <= frame < self.end

    def frames(self) -> range:
        return range(self.start, self.end)


def _validated_scores(scores: Sequence[float]) -> tuple[float, ...]:
    out = tuple(float(s) for s in scores)
    if not out:
        raise InputError("class score vector must be non-empty")
    _require_finite("class score", *out)
    return out


def argmax_label(scores: Sequence[float]) -> int:
    """Index of the highest score; ties resolve to the lowest index."""
    best = 0
    for i in range(1, len(scores)):
        if scores[i] > scores[best]:
            best = i
    return best


@dataclass(frozen=True)
class Detection:
    """One scored action region on one frame.

    ``class_scores`` holds one real score per action class.  The
    detection's label is the argmax of that vector and its scalar score
    is the value at the label.
    """

    frame_index: int
    box: BoundingBox
    class_scores: tuple[float, ...]
    source: Source = Source.STATIC

    def __post_init__(self):
        object.__setattr__(self, "class_scores",
                           _validated_scores(self.class_scores))

    @property
    def label(self) -> int:
        return argmax_label(self.class_scores)

    @property
    def score(self) -> float:
        return self.class_scores[self.label]

    def score_for(self, class_index: int) -> float:
        if not 0 <= class_index < len(self.class_scores):
            raise InputError(
                f"class index {class_index} out of range for "
                f"{len(self.class_scores)} classes")
        return self.class_scores[class_index]


@dataclass(frozen=True)
class Proposal:
    """Unscored candidate region from the proposal stage."""

    frame_index: int
    box: BoundingBox
    objectness: float = 0.0

    def __post_init__(self):
        _require_finite("objectness", self.objectness)


@dataclass(frozen=True)
class ClipScoreSequence:
    """Per-clip class score distributions aligned with clip intervals.

    Each score vector must sum to 1 within ``SCORE_SUM_TOL``.  Intervals
    are consecutive and partition the frame span the clips cover.
    """

    clip_length: int
    intervals: tuple[FrameInterval, ...]
    scores: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if self.clip_length < 1:
            raise InputError(f"clip_length must be >= 1, got {self.clip_length}")
        if len(self.intervals) != len(self.scores):
            raise InputError(
                f"{len(self.intervals)} clip intervals but "
                f"{len(self.scores)} score vectors")
        if not self.scores:
            raise InputError("clip score sequence must be non-empty")
        object.__setattr__(
            self, "scores", tuple(_validated_scores(s) for s in self.scores))
        width = len(self.scores[0])
        for vec in self.scores:
            if len(vec) != width:
                raise InputError("clip score vectors differ in class count")
            total = sum(vec)
            if abs(total - 1.0) > SCORE_SUM_TOL:
                raise InputError(
                    f"clip scores sum to {total}, expected 1 within "
                    f"{SCORE_SUM_TOL}")
        for prev, cur in zip(self.intervals, self.intervals[1:]):
            if prev.end != cur.start:
                raise InputError("clip intervals must be consecutive")

    @property
    def num_classes(self) -> int:
        return len(self.scores[0])

    def __len__(self) -> int:
        return len(self.scores)

    def span(self) -> FrameInterval:
        return FrameInterval(self.intervals[0].start, self.intervals[-1].end)


@dataclass(frozen=True)
class Tube:
    """Spatio-temporal action tube: one detection per consecutive frame."""

    video_id: str
    tube_id: str
    entries: tuple[Detection, ...]
    label: int | None = None
    score: float | None = None
    clip_scores: ClipScoreSequence | None = None

    def __post_init__(self):
        if not self.entries:
            raise InputError("tube must contain at least one entry")
        object.__setattr__(self, "entries", tuple(self.entries))
        start = self.entries[0].frame_index
        for offset, det in enumerate(self.entries):
            if det.frame_index != start + offset:
                raise InputError(
                    f"tube entries must cover consecutive frames; entry "
                    f"{offset} is at frame {det.frame_index}, expected "
                    f"{start + offset}")
        if self.score is not None:
            _require_finite("tube score", self.score)

    def interval(self) -> FrameInterval:
        start = self.entries[0].frame_index
        return FrameInterval(start, start + len(self.entries))

    def box_at(self, frame: int) -> BoundingBox:
        start = self.entries[0].frame_index
        if not (start <= frame < start + len(self.entries)):
            raise InputError(f"frame {frame} outside tube {self.interval()}")
        return self.entries[frame - start].box

    def with_label(self, label: int, score: float | None = None) -> "Tube":
        return replace(self, label=label, score=score)


@dataclass(frozen=True)
class GroundTruthTube:
    """Annotated tube: one box per consecutive frame plus a class label."""

    video_id: str
    tube_id: str
    label: int
    start: int
    boxes: tuple[BoundingBox, ...]

    def __post_init__(self):
        if not self.boxes:
            raise InputError("ground truth tube must contain boxes")
        if self.label < 0:
            raise InputError(f"label must be non-negative, got {self.label}")
        object.__setattr__(self, "boxes", tuple(self.boxes))

    def interval(self) -> FrameInterval:
        return FrameInterval(self.start, self.start + len(self.boxes))

    def box_at(self, frame: int) -> BoundingBox:
        if not (self.start <= frame < self.start + len(self.boxes)):
            raise InputError(f"frame {frame} outside tube {self.interval()}")
        return self.boxes[frame - self.start]

    def iter_frames(self) -> Iterator[tuple[int, BoundingBox]]:
        for offset, box in enumerate(self.boxes):
            yield self.start + offset, box
