"""Synthetic two-frame pretraining videos built from single map tiles.

Each tile with at least one kept pseudo-mask becomes a video whose two
frames both show that tile.  Every kept mask becomes a track with the same
mask in both frames, so identities are linked by construction.  Optionally
the second frame's masks are jittered by small per-instance translations to
mimic sheet-to-sheet distortion.
"""
from __future__ import annotations

import hashlib
import logging
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import (
    DEFAULT_CATEGORIES,
    Category,
    ConfigError,
    DatasetManifest,
    DimensionError,
    FrameDetections,
    InstanceTrack,
    VideoRecord,
)
from .dataset_io import TILE_SIZE, load_detection_file, tile_size
from .mask_ops import rle_decode, rle_encode

log = logging.getLogger(__name__)

SYNTH_FRAMES = 2


class MissingImageError(FileNotFoundError):
    def __init__(self, missing: Sequence[str]):
        self.missing = list(missing)
        super().__init__(f"{len(self.missing)} image(s) not found: " + ", ".join(self.missing))


@dataclass(frozen=True)
class SynthConfig:
    score_threshold: float = 0.5
    min_instance_area: int = 1
    max_displacement: int = 0
    random_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ConfigError(f"score_threshold {self.score_threshold} outside [0, 1]")
        if self.min_instance_area < 0:
            raise ConfigError("min_instance_area must be >= 0")
        if self.max_displacement < 0:
            raise ConfigError("max_displacement must be >= 0")
        if not 0 <= self.random_seed < 2**64:
            raise ConfigError("random_seed must fit in 64 unsigned bits")


def image_rng(seed: int, image_name: str) -> np.random.Generator:
    """Generator keyed on (seed, image name), independent of processing order."""
    digest = hashlib.blake2b(
        f"{int(seed)}\x00{image_name}".encode("utf-8"), digest_size=16
    ).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def shift_grid(grid: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Translate a dense mask by (dy, dx); pixels leaving the raster are dropped."""
    h, w = grid.shape
    out = np.zeros_like(grid)
    if abs(dy) >= h or abs(dx) >= w:
        return out
    src_r = slice(max(0, -dy), h - max(0, dy))
    dst_r = slice(max(0, dy), h - max(0, -dy))
    src_c = slice(max(0, -dx), w - max(0, dx))
    dst_c = slice(max(0, dx), w - max(0, -dx))
    out[dst_r, dst_c] = grid[src_r, src_c]
    return out


def displace_second_frame(
    tracks: Sequence[InstanceTrack],
    config: SynthConfig,
    rng: Optional[np.random.Generator] = None,
    offsets: Optional[Sequence[tuple[int, int]]] = None,
) -> list[InstanceTrack]:
    """Translate each track's frame-1 mask by its own random (dy, dx) offset.

    Offsets are drawn uniformly from ``[-d, d]`` per axis with
    ``d = config.max_displacement``; pass ``offsets`` to force them.
    """
    for t in tracks:
        if t.length != SYNTH_FRAMES:
            raise DimensionError(f"track {t.track_id} has {t.length} frames, expected 2")
    d = config.max_displacement
    if offsets is None:
        if d == 0:
            return list(tracks)
        if rng is None:
            rng = np.random.default_rng(config.random_seed)
        offsets = [tuple(int(v) for v in rng.integers(-d, d + 1, size=2)) for _ in tracks]
    elif len(offsets) != len(tracks):
        raise ValueError(f"{len(offsets)} offsets for {len(tracks)} tracks")

    out = []
    for track, (dy, dx) in zip(tracks, offsets):
        m = track.masks[1]
        if m is None or (dy == 0 and dx == 0):
            out.append(track)
            continue
        moved = shift_grid(rle_decode(m), dy, dx)
        new = rle_encode(moved) if moved.any() else None
        out.append(track.replace(masks=(track.masks[0], new)))
    return out


def make_synthetic_video(
    image_name: str,
    detections: FrameDetections,
    config: SynthConfig,
    video_id: int = 1,
    first_track_id: int = 1,
) -> Optional[tuple[VideoRecord, list[InstanceTrack]]]:
    """Duplicate one tile and its kept pseudo-masks into a two-frame video.

    Returns ``None`` when no detection survives the score and area filters.
    """
    shape = detections.shape
    kept = [
        d for d in detections
        if d.score >= config.score_threshold and d.mask.area >= max(config.min_instance_area, 1)
    ]
    if not kept:
        return None
    h, w = shape
    video = VideoRecord(
        video_id=video_id,
        frame_count=SYNTH_FRAMES,
        height=h,
        width=w,
        frame_names=(image_name, image_name),
    )
    tracks = [
        InstanceTrack(
            track_id=first_track_id + k,
            category_id=d.category_id,
            masks=(d.mask, d.mask),
            score=None,
            video_id=video_id,
        )
        for k, d in enumerate(kept)
    ]
    if config.max_displacement > 0:
        tracks = displace_second_frame(tracks, config, image_rng(config.random_seed, image_name))
    return video, tracks


def _image_name_for(path: Path, det) -> str:
    if det.file_names:
        return det.file_names[0]
    return path.stem + ".png"


def _prepare(path, image_dir, config):
    path = Path(path)
    det = load_detection_file(path)
    if len(det.frames) != 1:
        raise DimensionError(f"{path}: synthetic input needs exactly 1 frame, got {len(det.frames)}")
    name = _image_name_for(path, det)
    image = Path(image_dir) / name
    if not image.is_file():
        return name, None, None
    size = tile_size(image)
    if det.shape is not None and size != det.shape:
        raise DimensionError(f"{image}: image is {size}, masks are {det.shape}")
    if size != TILE_SIZE:
        log.warning("%s: tile is %dx%d, expected %dx%d", image, *size, *TILE_SIZE)
    return name, det.frames[0], make_synthetic_video(name, det.frames[0], config)


@dataclass(frozen=True)
class SynthSummary:
    images_in: int
    excluded: int
    videos_out: int
    tracks_out: int


def build_synthetic_dataset(
    detection_files: Sequence[os.PathLike],
    image_dir: os.PathLike,
    config: SynthConfig = SynthConfig(),
    workers: int = 1,
    return_summary: bool = False,
):
    """One synthetic video per tile with kept detections, in image-name order.

    Video and track ids are assigned sequentially after sorting, so the
    result does not depend on ``workers`` or on the input order.
    """
    files = list(detection_files)
    args = [(f, image_dir, config) for f in files]
    if workers > 1 and len(files) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_prepare, *zip(*args), chunksize=16))
    else:
        results = [_prepare(*a) for a in args]

    missing = sorted(name for name, frame, _ in results if frame is None)
    if missing:
        raise MissingImageError(missing)
    dupes = sorted(n for n, c in Counter(r[0] for r in results).items() if c > 1)
    if dupes:
        raise ValueError(f"several detection files reference the same image: {dupes}")

    videos, annotations = [], []
    next_track = 1
    for name, _, made in sorted(results, key=lambda r: r[0]):
        if made is None:
            continue
        video, tracks = made
        vid = len(videos) + 1
        videos.append(VideoRecord(vid, video.frame_count, video.height, video.width, video.frame_names))
        for t in tracks:
            annotations.append(t.replace(track_id=next_track, video_id=vid))
            next_track += 1
    categories = list(DEFAULT_CATEGORIES)
    declared = {c.id for c in categories}
    for cid in sorted({a.category_id for a in annotations} - declared):
        categories.append(Category(cid, f"category_{cid}"))
    manifest = DatasetManifest(videos, annotations, categories)
    if return_summary:
        summary = SynthSummary(len(files), len(files) - len(videos), len(videos), len(annotations))
        return manifest, summary
    return manifest
