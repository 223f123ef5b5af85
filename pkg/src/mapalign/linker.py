"""Heuristic baseline: link per-map detections into tracks.

Detections on consecutive maps are paired when one is "approximately
within" the other: their overlap covers at least a threshold fraction
(default 60 %) of the smaller entity.  Pairs are accepted one-to-one,
greedily by containment ratio, and chained across the series.  A track
that finds no partner on the next map is closed for good, which is exactly
why this baseline struggles on long series with intermittent misses.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Optional, Sequence, Union

import numpy as np

from .core import ConfigError, DimensionError, FrameDetections, InstanceTrack, RleMask, VideoRecord
from .mask_ops import intersection_area, pairwise_intersection_matrix

Ratio = Union[float, Fraction]


def exact_ratio(value: Ratio) -> Fraction:
    """Exact rational for a threshold; floats go through their shortest repr so 0.6 -> 3/5."""
    if isinstance(value, Rational):
        return Fraction(value)
    return Fraction(repr(float(value)))


@dataclass(frozen=True)
class LinkConfig:
    containment_threshold: Ratio = 0.6
    score_threshold: float = 0.5

    def __post_init__(self):
        if not 0 <= self.containment_threshold <= 1:
            raise ConfigError(f"containment_threshold {self.containment_threshold} outside [0, 1]")
        if not 0 <= self.score_threshold <= 1:
            raise ConfigError(f"score_threshold {self.score_threshold} outside [0, 1]")


def _within(inter: int, area_a: int, area_b: int, threshold: Fraction) -> bool:
    smaller = min(area_a, area_b)
    if smaller == 0:
        return False
    # inter / smaller >= p / q, cross-multiplied
    return inter * threshold.denominator >= threshold.numerator * smaller


def approximately_within(a: RleMask, b: RleMask, threshold: Ratio = 0.6) -> bool:
    thr = exact_ratio(threshold)
    if not 0 <= thr <= 1:
        raise ConfigError(f"threshold {threshold} outside [0, 1]")
    if a.shape != b.shape:
        raise DimensionError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return _within(intersection_area(a, b), a.area, b.area, thr)


def match_consecutive(
    frame_t: FrameDetections, frame_t1: FrameDetections, config: LinkConfig = LinkConfig()
) -> list[tuple[int, int]]:
    """One-to-one pairs ``(i, j)`` between two frames, sorted by ``i``.

    Candidates must share a category and satisfy the containment relation.
    Accepted greedily by descending containment ratio, then larger
    intersection, then smaller ``(i, j)``.
    """
    if frame_t.shape and frame_t1.shape and frame_t.shape != frame_t1.shape:
        raise DimensionError(f"frame shapes differ: {frame_t.shape} vs {frame_t1.shape}")
    if not len(frame_t) or not len(frame_t1):
        return []
    thr = exact_ratio(config.containment_threshold)
    inter = pairwise_intersection_matrix(
        [d.mask for d in frame_t], [d.mask for d in frame_t1]
    )
    candidates = []
    for i, j in zip(*np.nonzero(inter)):
        i, j = int(i), int(j)
        a, b = frame_t[i], frame_t1[j]
        if a.category_id != b.category_id:
            continue
        n = int(inter[i, j])
        if _within(n, a.mask.area, b.mask.area, thr):
            ratio = Fraction(n, min(a.mask.area, b.mask.area))
            candidates.append((-ratio, -n, i, j))
    # zero-overlap pairs only qualify at threshold 0
    if thr == 0:
        for i, a in enumerate(frame_t):
            for j, b in enumerate(frame_t1):
                if inter[i, j] == 0 and a.category_id == b.category_id and a.mask.area and b.mask.area:
                    candidates.append((Fraction(0), 0, i, j))
    candidates.sort()
    used_i, used_j, pairs = set(), set(), []
    for _, _, i, j in candidates:
        if i in used_i or j in used_j:
            continue
        used_i.add(i)
        used_j.add(j)
        pairs.append((i, j))
    return sorted(pairs)


def _kept(frame: FrameDetections, config: LinkConfig):
    idx = [
        k for k, d in enumerate(frame)
        if d.score >= config.score_threshold and d.mask.area > 0
    ]
    return idx, FrameDetections(frame.frame_index, [frame[k] for k in idx])


def link_series(
    frames: Sequence[FrameDetections],
    video: VideoRecord,
    config: LinkConfig = LinkConfig(),
    return_members: bool = False,
):
    """Chain consecutive-frame matches into tracks over the whole series.

    Detections below ``score_threshold`` (and empty masks) are dropped
    first; every remaining detection ends up in exactly one track.  Track
    scores are the mean of member scores; ids are 1.. in creation order.
    With ``return_members`` also returns, per track, the list of
    ``(frame_index, detection_index)`` it was built from.
    """
    if len(frames) != video.frame_count:
        raise DimensionError(f"{len(frames)} frames for a {video.frame_count}-frame video")
    frames = sorted(frames, key=lambda f: f.frame_index)
    if [f.frame_index for f in frames] != list(range(video.frame_count)):
        raise DimensionError("frame indices must be 0..T-1")
    for f in frames:
        if f.shape is not None and f.shape != (video.height, video.width):
            raise DimensionError(
                f"frame {f.frame_index} masks are {f.shape}, video is {(video.height, video.width)}"
            )

    kept = [_kept(f, config) for f in frames]
    T = video.frame_count
    members: list[list[tuple[int, int]]] = []
    owner_prev: list[int] = []
    for t, (idx, frame) in enumerate(kept):
        owner = [-1] * len(idx)
        if t > 0:
            for i, j in match_consecutive(kept[t - 1][1], frame, config):
                owner[j] = owner_prev[i]
        for j in range(len(idx)):
            if owner[j] < 0:
                owner[j] = len(members)
                members.append([])
            members[owner[j]].append((t, idx[j]))
        owner_prev = owner

    tracks = []
    for n, mem in enumerate(members):
        masks: list[Optional[RleMask]] = [None] * T
        scores = []
        for t, k in mem:
            det = frames[t][k]
            masks[t] = det.mask
            scores.append(det.score)
        first = frames[mem[0][0]][mem[0][1]]
        tracks.append(InstanceTrack(
            track_id=n + 1,
            category_id=first.category_id,
            masks=masks,
            score=sum(scores) / len(scores),
            video_id=video.video_id,
        ))
    return (tracks, members) if return_members else tracks
