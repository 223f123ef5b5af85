"""Reading and writing manifests, detection files and image tiles.

Manifests use the YouTube-VIS JSON layout (``videos`` / ``annotations`` /
``categories``) so third-party files load unchanged.  Keys this package
does not interpret are kept in each record's ``extra`` dict and written
back verbatim.  Output is compact JSON with sorted keys, so writing the
same manifest twice gives identical bytes.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .core import (
    DEFAULT_CATEGORIES,
    Category,
    DatasetManifest,
    Detection,
    DimensionError,
    FrameDetections,
    InstanceTrack,
    MaskError,
    RleMask,
    VideoRecord,
    Violation,
    validate_manifest,
)

log = logging.getLogger(__name__)

SCHEMA_KEY = "mapalign_schema"
SCHEMA_VERSION = 1
TILE_SIZE = (256, 256)


class ManifestError(Exception):
    pass


class ParseError(ManifestError):
    """Malformed input; ``context`` locates the problem (byte offset or field path)."""

    def __init__(self, message: str, context: str = "", path: Optional[os.PathLike] = None):
        self.message = message
        self.context = context
        self.path = path
        where = f"{path}: " if path else ""
        at = f" ({context})" if context else ""
        super().__init__(f"{where}{message}{at}")


class RangeError(ParseError):
    pass


class SchemaVersionError(ManifestError):
    pass


class ValidationError(ManifestError):
    def __init__(self, violations: Sequence[Violation]):
        self.violations = list(violations)
        lines = "\n  ".join(str(v) for v in self.violations)
        super().__init__(f"manifest has {len(self.violations)} violation(s):\n  {lines}")


# -- compressed RLE strings ------------------------------------------------------
# The COCO/YouTube-VIS text form: each count is delta-coded against the count
# two positions back (from the fourth on), then written as little-endian 5-bit
# groups with a continuation bit, offset by 48 into printable ASCII.

def rle_to_string(counts: Iterable[int]) -> str:
    counts = [int(c) for c in counts]
    out = []
    for i, x in enumerate(counts):
        if i > 2:
            x -= counts[i - 2]
        more = True
        while more:
            c = x & 0x1F
            x >>= 5
            more = (x != -1) if (c & 0x10) else (x != 0)
            if more:
                c |= 0x20
            out.append(chr(c + 48))
    return "".join(out)


def rle_from_string(s: str) -> list[int]:
    counts: list[int] = []
    p = 0
    n = len(s)
    while p < n:
        x = 0
        k = 0
        more = True
        while more:
            if p >= n:
                raise ValueError("truncated compressed RLE string")
            c = ord(s[p]) - 48
            if c < 0 or c > 63:
                raise ValueError(f"invalid character {s[p]!r} in compressed RLE")
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


# -- segmentation dicts ------------------------------------------------------------

def segmentation_to_mask(seg: Any, context: str = "") -> Optional[RleMask]:
    if seg is None:
        return None
    if not isinstance(seg, dict) or "size" not in seg or "counts" not in seg:
        raise ParseError("segmentation must be null or {size, counts}", context)
    try:
        h, w = (int(v) for v in seg["size"])
        counts = seg["counts"]
        if isinstance(counts, str):
            counts = rle_from_string(counts)
        elif isinstance(counts, list):
            if any(isinstance(c, list) for c in counts):
                raise ParseError("polygon segmentations are not supported", context)
        else:
            raise ParseError("counts must be a list or a compressed string", context)
        return RleMask(h, w, counts)
    except (MaskError, ValueError, TypeError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"bad segmentation: {exc}", context) from exc


def mask_to_segmentation(mask: Optional[RleMask], compress: bool = False):
    if mask is None:
        return None
    counts = mask.counts.tolist()
    return {
        "size": [mask.height, mask.width],
        "counts": rle_to_string(counts) if compress else counts,
    }


# -- manifest <-> dict ---------------------------------------------------------------

_VIDEO_KEYS = {"id", "height", "width", "length", "file_names", "timestamps"}
_ANN_KEYS = {"id", "video_id", "category_id", "score", "segmentations"}
_CAT_KEYS = {"id", "name"}
_TOP_KEYS = {"videos", "annotations", "categories", SCHEMA_KEY}


def _require(obj: dict, key: str, context: str):
    if not isinstance(obj, dict):
        raise ParseError("expected an object", context)
    if key not in obj:
        raise ParseError(f"missing field {key!r}", context)
    return obj[key]


def _extra(obj: dict, known: set) -> dict:
    return {k: v for k, v in obj.items() if k not in known}


def _video_from_dict(d: dict, ctx: str) -> VideoRecord:
    names = _require(d, "file_names", ctx)
    if not isinstance(names, list):
        raise ParseError("file_names must be a list", ctx)
    length = d.get("length", len(names))
    if length != len(names):
        raise ParseError(f"length {length} disagrees with {len(names)} file_names", ctx)
    ts = d.get("timestamps")
    if ts is not None and not isinstance(ts, list):
        raise ParseError("timestamps must be a list", ctx)
    try:
        return VideoRecord(
            video_id=_require(d, "id", ctx),
            frame_count=len(names),
            height=int(_require(d, "height", ctx)),
            width=int(_require(d, "width", ctx)),
            frame_names=names,
            timestamps=ts,
            extra=_extra(d, _VIDEO_KEYS),
        )
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), ctx) from exc


def _annotation_from_dict(d: dict, ctx: str) -> InstanceTrack:
    segs = _require(d, "segmentations", ctx)
    if not isinstance(segs, list):
        raise ParseError("segmentations must be a list", ctx)
    masks = [segmentation_to_mask(s, f"{ctx}.segmentations[{t}]") for t, s in enumerate(segs)]
    score = d.get("score")
    if score is not None and not isinstance(score, (int, float)):
        raise ParseError("score must be a number", ctx)
    return InstanceTrack(
        track_id=_require(d, "id", ctx),
        category_id=_require(d, "category_id", ctx),
        masks=masks,
        score=None if score is None else float(score),
        video_id=_require(d, "video_id", ctx),
        extra=_extra(d, _ANN_KEYS),
    )


def manifest_from_dict(obj: Any) -> DatasetManifest:
    if not isinstance(obj, dict):
        raise ParseError("top level must be an object")
    version = obj.get(SCHEMA_KEY, SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"unsupported {SCHEMA_KEY} {version!r} (this reader handles {SCHEMA_VERSION})"
        )
    videos = [_video_from_dict(v, f"videos[{i}]") for i, v in enumerate(obj.get("videos", []))]
    anns = [
        _annotation_from_dict(a, f"annotations[{i}]")
        for i, a in enumerate(obj.get("annotations", []))
    ]
    if "categories" in obj:
        cats = [
            Category(
                id=_require(c, "id", f"categories[{i}]"),
                name=_require(c, "name", f"categories[{i}]"),
                extra=_extra(c, _CAT_KEYS),
            )
            for i, c in enumerate(obj["categories"])
        ]
    else:
        cats = list(DEFAULT_CATEGORIES)
    return DatasetManifest(videos, anns, cats, extra=_extra(obj, _TOP_KEYS))


def manifest_to_dict(manifest: DatasetManifest, compress_rle: bool = False) -> dict:
    videos = []
    for v in manifest.videos:
        d = dict(v.extra)
        d.update(
            id=v.video_id,
            height=v.height,
            width=v.width,
            length=v.frame_count,
            file_names=list(v.frame_names),
        )
        if v.timestamps is not None:
            d["timestamps"] = list(v.timestamps)
        videos.append(d)
    anns = []
    for a in manifest.annotations:
        d = dict(a.extra)
        d.update(
            id=a.track_id,
            video_id=a.video_id,
            category_id=a.category_id,
            segmentations=[mask_to_segmentation(m, compress_rle) for m in a.masks],
        )
        if a.score is not None:
            d["score"] = a.score
        anns.append(d)
    cats = []
    for c in manifest.categories:
        d = dict(c.extra)
        d.update(id=c.id, name=c.name)
        cats.append(d)
    out = dict(manifest.extra)
    out.update({SCHEMA_KEY: SCHEMA_VERSION, "videos": videos, "annotations": anns, "categories": cats})
    return out


def dumps_manifest(manifest: DatasetManifest, compress_rle: bool = False) -> str:
    obj = manifest_to_dict(manifest, compress_rle)
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"


# -- file level ------------------------------------------------------------------------

def load_json(path) -> Any:
    path = Path(path)
    raw = path.read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError("invalid UTF-8", f"byte {exc.start}", path) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise ParseError(
            f"malformed JSON: {exc.msg}",
            f"byte {offset}, line {exc.lineno}, column {exc.colno}",
            path,
        ) from exc


def read_manifest(path, strict: bool = False) -> DatasetManifest:
    """Load a manifest.  Invariant violations are logged, or raised if ``strict``."""
    obj = load_json(path)
    try:
        manifest = manifest_from_dict(obj)
    except ParseError as exc:
        raise type(exc)(exc.message, exc.context, path) from None
    problems = validate_manifest(manifest)
    if problems:
        if strict:
            raise ValidationError(problems)
        for p in problems:
            log.warning("%s: %s", path, p)
    return manifest


def write_manifest(manifest: DatasetManifest, path, compress_rle: bool = False) -> None:
    problems = validate_manifest(manifest)
    if problems:
        raise ValidationError(problems)
    text = dumps_manifest(manifest, compress_rle)
    path = Path(path)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write manifest to {path}: {exc}") from exc


def tracks_to_manifest(
    video: VideoRecord,
    tracks: Sequence[InstanceTrack],
    categories: Sequence[Category] = DEFAULT_CATEGORIES,
) -> DatasetManifest:
    """Wrap one video's tracks in a manifest, assigning ids where missing."""
    supplied = [t.track_id for t in tracks if t.track_id is not None]
    if len(set(supplied)) != len(supplied):
        raise ManifestError(f"duplicate track ids supplied: {sorted(supplied)}")
    next_id = max([int(i) for i in supplied], default=0) + 1
    out = []
    for t in tracks:
        if t.length != video.frame_count:
            raise DimensionError(
                f"track {t.track_id} has {t.length} frames, video has {video.frame_count}"
            )
        for m in t.masks:
            if m is not None and m.shape != (video.height, video.width):
                raise DimensionError(
                    f"track {t.track_id} mask {m.shape} vs video {(video.height, video.width)}"
                )
        tid = t.track_id
        if tid is None:
            tid = next_id
            next_id += 1
        out.append(t.replace(track_id=tid, video_id=video.video_id))
    return DatasetManifest([video], out, categories)


# -- detection files ---------------------------------------------------------------------

@dataclass(frozen=True)
class DetectionFile:
    video_id: Any
    frames: tuple[FrameDetections, ...]
    file_names: Optional[tuple[str, ...]] = None
    timestamps: Optional[tuple] = None
    height: Optional[int] = None
    width: Optional[int] = None
    extra: dict = field(default_factory=dict, repr=False)

    @property
    def shape(self) -> Optional[tuple[int, int]]:
        if self.height is not None and self.width is not None:
            return (self.height, self.width)
        for f in self.frames:
            if f.shape is not None:
                return f.shape
        return None


def detection_file_from_dict(obj: Any) -> DetectionFile:
    if not isinstance(obj, dict):
        raise ParseError("top level must be an object")
    frames_raw = _require(obj, "frames", "")
    if not isinstance(frames_raw, list):
        raise ParseError("frames must be a list", "frames")
    frames = []
    shape = None
    for t, dets in enumerate(frames_raw):
        if not isinstance(dets, list):
            raise ParseError("each frame must be a list of detections", f"frames[{t}]")
        parsed = []
        for k, d in enumerate(dets):
            ctx = f"frames[{t}][{k}]"
            score = _require(d, "score", ctx)
            if not isinstance(score, (int, float)) or not (0.0 <= score <= 1.0):
                raise RangeError(f"score {score!r} outside [0, 1]", ctx)
            mask = segmentation_to_mask(_require(d, "segmentation", ctx), f"{ctx}.segmentation")
            if mask is None:
                raise ParseError("detection without a mask", ctx)
            if shape is None:
                shape = mask.shape
            elif mask.shape != shape:
                raise ParseError(f"mask size {mask.shape} differs from {shape}", ctx)
            parsed.append(Detection(mask, float(score), d.get("category_id", 1)))
        frames.append(FrameDetections(t, parsed))
    h, w = obj.get("height"), obj.get("width")
    if shape is not None and h is not None and (h, w) != shape:
        raise ParseError(f"declared size {(h, w)} differs from mask size {shape}", "height/width")
    names = obj.get("file_names")
    ts = obj.get("timestamps")
    for key, seq in (("file_names", names), ("timestamps", ts)):
        if seq is not None and len(seq) != len(frames):
            raise ParseError(f"{len(seq)} {key} for {len(frames)} frames", key)
    known = {"video_id", "frames", "file_names", "timestamps", "height", "width"}
    return DetectionFile(
        video_id=obj.get("video_id"),
        frames=tuple(frames),
        file_names=None if names is None else tuple(names),
        timestamps=None if ts is None else tuple(ts),
        height=h,
        width=w,
        extra=_extra(obj, known),
    )


def load_detection_file(path) -> DetectionFile:
    obj = load_json(path)
    try:
        return detection_file_from_dict(obj)
    except ParseError as exc:
        raise type(exc)(exc.message, exc.context, path) from None


def read_detections(path) -> list[FrameDetections]:
    return list(load_detection_file(path).frames)


def detections_to_dict(
    frames: Sequence[FrameDetections], video_id: Any = None, compress_rle: bool = False, **meta
) -> dict:
    out = {k: v for k, v in meta.items() if v is not None}
    out["video_id"] = video_id
    out["frames"] = [
        [
            {
                "category_id": d.category_id,
                "score": d.score,
                "segmentation": mask_to_segmentation(d.mask, compress_rle),
            }
            for d in f
        ]
        for f in sorted(frames, key=lambda f: f.frame_index)
    ]
    return out


def write_detections(path, frames: Sequence[FrameDetections], video_id: Any = None, **meta) -> None:
    obj = detections_to_dict(frames, video_id, **meta)
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"
    Path(path).write_text(text, encoding="utf-8")


# -- image tiles -------------------------------------------------------------------

def read_tile(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    if arr.shape[:2] != TILE_SIZE:
        log.warning("%s: tile is %dx%d, expected %dx%d", path, *arr.shape[:2], *TILE_SIZE)
    return arr


def tile_size(path) -> tuple[int, int]:
    """(height, width) of an image without decoding its pixels."""
    from PIL import Image

    with Image.open(path) as im:
        w, h = im.size
    return h, w


def write_tile(path, pixels: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(pixels, dtype=np.uint8)[..., :3]).save(path, format="PNG")
