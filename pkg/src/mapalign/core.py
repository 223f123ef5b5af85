"""Domain types: masks, tracks, videos, detections and dataset manifests.

All types are immutable once built.  A track holds one optional mask per
frame; ``None`` means the entity is absent (an all-zero mask) in that frame.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Optional, Sequence, Union

import numpy as np

Timestamp = Union[str, int, float]


class ConfigError(ValueError):
    """A configuration value is out of range."""


class MaskError(ValueError):
    """Base class for mask construction and algebra errors."""


class DimensionError(MaskError):
    """Masks (or grids) have incompatible or degenerate dimensions."""


class MalformedRLEError(MaskError):
    """Run counts violate the canonical RLE invariants."""


class RleMask:
    """Run-length encoded binary mask of a ``height`` x ``width`` raster.

    Counts are column-major run lengths starting with a background run.
    Only the first run may be zero (for masks whose first pixel is set).
    """

    __slots__ = ("height", "width", "_counts", "_area")

    def __init__(self, height: int, width: int, counts: Sequence[int]):
        height = int(height)
        width = int(width)
        if height <= 0 or width <= 0:
            raise DimensionError(f"mask dimensions must be positive, got {height}x{width}")
        arr = np.array(counts, dtype=np.int64).reshape(-1)
        if arr.size == 0:
            raise MalformedRLEError("empty run counts")
        if (arr < 0).any():
            raise MalformedRLEError("negative run length")
        if arr.size > 1 and (arr[1:] == 0).any():
            raise MalformedRLEError("zero-length interior run")
        total = int(arr.sum())
        if total != height * width:
            raise MalformedRLEError(
                f"run counts sum to {total}, expected {height}*{width}={height * width}"
            )
        arr.flags.writeable = False
        self.height = height
        self.width = width
        self._counts = arr
        self._area = int(arr[1::2].sum())

    @property
    def counts(self) -> np.ndarray:
        return self._counts

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def area(self) -> int:
        return self._area

    def __setattr__(self, name, value):
        if hasattr(self, "_area"):
            raise AttributeError("RleMask is immutable")
        object.__setattr__(self, name, value)

    def __eq__(self, other):
        if not isinstance(other, RleMask):
            return NotImplemented
        return (
            self.height == other.height
            and self.width == other.width
            and np.array_equal(self._counts, other._counts)
        )

    def __hash__(self):
        return hash((self.height, self.width, self._counts.tobytes()))

    def __repr__(self):
        shown = self._counts[:8].tolist()
        tail = ", ..." if self._counts.size > 8 else ""
        return f"RleMask({self.height}x{self.width}, counts={shown}{tail})"

    @classmethod
    def empty(cls, height: int, width: int) -> "RleMask":
        return cls(height, width, [height * width])


@dataclass(frozen=True)
class Category:
    id: int
    name: str
    extra: dict = field(default_factory=dict, compare=True, repr=False)


DEFAULT_CATEGORIES = (Category(1, "building"),)


@dataclass(frozen=True)
class InstanceTrack:
    """One entity followed through a video.

    ``score`` is ``None`` for ground truth.  ``track_id`` may be ``None``
    before ids are assigned (see :func:`mapalign.dataset_io.tracks_to_manifest`).
    """

    track_id: Optional[int]
    category_id: int
    masks: tuple[Optional[RleMask], ...]
    score: Optional[float] = None
    video_id: Optional[int] = None
    extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "masks", tuple(self.masks))

    @property
    def length(self) -> int:
        return len(self.masks)

    @property
    def effective_score(self) -> float:
        return 1.0 if self.score is None else float(self.score)

    def is_empty(self) -> bool:
        return all(m is None or m.area == 0 for m in self.masks)

    def replace(self, **changes) -> "InstanceTrack":
        return replace(self, **changes)


@dataclass(frozen=True)
class VideoRecord:
    video_id: int
    frame_count: int
    height: int
    width: int
    frame_names: tuple[str, ...]
    timestamps: Optional[tuple[Timestamp, ...]] = None
    extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "frame_names", tuple(self.frame_names))
        if self.timestamps is not None:
            object.__setattr__(self, "timestamps", tuple(self.timestamps))


@dataclass(frozen=True)
class Detection:
    mask: RleMask
    score: float
    category_id: int = 1


@dataclass(frozen=True)
class FrameDetections:
    frame_index: int
    detections: tuple[Detection, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))
        shapes = {d.mask.shape for d in self.detections}
        if len(shapes) > 1:
            raise DimensionError(
                f"frame {self.frame_index}: detections have mixed shapes {sorted(shapes)}"
            )

    def __len__(self):
        return len(self.detections)

    def __iter__(self):
        return iter(self.detections)

    def __getitem__(self, k):
        return self.detections[k]

    @property
    def shape(self) -> Optional[tuple[int, int]]:
        return self.detections[0].mask.shape if self.detections else None


@dataclass(frozen=True)
class DatasetManifest:
    videos: tuple[VideoRecord, ...] = ()
    annotations: tuple[InstanceTrack, ...] = ()
    categories: tuple[Category, ...] = DEFAULT_CATEGORIES
    extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "videos", tuple(self.videos))
        object.__setattr__(self, "annotations", tuple(self.annotations))
        object.__setattr__(self, "categories", tuple(self.categories))

    def video(self, video_id: int) -> VideoRecord:
        for v in self.videos:
            if v.video_id == video_id:
                return v
        raise KeyError(video_id)

    def tracks_for(self, video_id: int) -> list[InstanceTrack]:
        return [a for a in self.annotations if a.video_id == video_id]

    def with_scores(self, score: float = 1.0) -> "DatasetManifest":
        """Copy with every track's score set to ``score`` (GT-as-prediction)."""
        return replace(self, annotations=tuple(a.replace(score=score) for a in self.annotations))


@dataclass(frozen=True)
class Violation:
    record: str
    rule: str
    message: str

    def __str__(self):
        return f"{self.record}: [{self.rule}] {self.message}"


def validate_manifest(manifest: DatasetManifest) -> list[Violation]:
    """Check every manifest invariant; return the violations (empty if valid)."""
    out: list[Violation] = []
    videos: dict[Any, VideoRecord] = {}
    for v in manifest.videos:
        rec = f"video {v.video_id}"
        if v.video_id in videos:
            out.append(Violation(rec, "duplicate-video-id", "video id appears more than once"))
        videos[v.video_id] = v
        if v.frame_count < 1:
            out.append(Violation(rec, "frame-count", f"frame_count {v.frame_count} < 1"))
        if v.height <= 0 or v.width <= 0:
            out.append(Violation(rec, "dimensions", f"non-positive size {v.height}x{v.width}"))
        if len(v.frame_names) != v.frame_count:
            out.append(Violation(
                rec, "frame-names-length",
                f"{len(v.frame_names)} frame names for frame_count {v.frame_count}",
            ))
        if v.timestamps is not None and len(v.timestamps) != v.frame_count:
            out.append(Violation(
                rec, "timestamps-length",
                f"{len(v.timestamps)} timestamps for frame_count {v.frame_count}",
            ))

    category_ids = [c.id for c in manifest.categories]
    if len(set(category_ids)) != len(category_ids):
        out.append(Violation("categories", "duplicate-category-id", "category ids not unique"))
    known_categories = set(category_ids)

    seen_tracks: set = set()
    for a in manifest.annotations:
        rec = f"annotation {a.track_id}"
        if a.track_id is None:
            out.append(Violation(rec, "missing-track-id", "track has no id"))
        elif a.track_id in seen_tracks:
            out.append(Violation(rec, "duplicate-track-id", "track id appears more than once"))
        else:
            seen_tracks.add(a.track_id)
        if a.category_id not in known_categories:
            out.append(Violation(rec, "unknown-category", f"category_id {a.category_id} not declared"))
        if a.score is not None and not (0.0 <= a.score <= 1.0):
            out.append(Violation(rec, "score-range", f"score {a.score} outside [0, 1]"))
        if a.is_empty():
            out.append(Violation(rec, "empty-track", "track has no non-empty mask"))
        v = videos.get(a.video_id)
        if v is None:
            out.append(Violation(rec, "dangling-video", f"video_id {a.video_id} not in videos"))
            continue
        if a.length != v.frame_count:
            out.append(Violation(
                rec, "length-mismatch",
                f"{a.length} masks for a {v.frame_count}-frame video {v.video_id}",
            ))
        for t, m in enumerate(a.masks):
            if m is not None and m.shape != (v.height, v.width):
                out.append(Violation(
                    rec, "mask-dimensions",
                    f"frame {t} mask is {m.height}x{m.width}, video is {v.height}x{v.width}",
                ))
    return out
