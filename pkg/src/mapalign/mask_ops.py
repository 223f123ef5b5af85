"""RLE codec and exact mask algebra.

Dense masks ("pixel grids") are 2-D numpy arrays indexed ``[row, col]``;
any dtype works, nonzero means foreground.  All areas are exact integers.
"""
from __future__ import annotations

from fractions import Fraction
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import kernels
from .core import DimensionError, InstanceTrack, MalformedRLEError, RleMask

__all__ = [
    "rle_encode",
    "rle_decode",
    "area",
    "intersection_area",
    "union_area",
    "mask_iou",
    "TrackOverlap",
    "track_overlap",
    "spatio_temporal_iou",
    "pairwise_intersection_matrix",
    "track_iou_matrix",
]


def rle_encode(grid) -> RleMask:
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise DimensionError(f"expected a 2-D grid, got shape {grid.shape}")
    h, w = grid.shape
    if h == 0 or w == 0:
        raise DimensionError(f"zero-sized grid {h}x{w}")
    flat = np.ascontiguousarray((grid != 0).T).reshape(-1).view(np.uint8)
    return RleMask(h, w, kernels.encode_runs(flat))


def rle_decode(mask: RleMask) -> np.ndarray:
    """Dense ``bool`` array of shape ``(height, width)``."""
    n = mask.height * mask.width
    if int(mask.counts.sum()) != n:  # only reachable for hand-built objects
        raise MalformedRLEError("run counts do not cover the grid")
    flat = kernels.decode_runs(mask.counts, n)
    return flat.reshape(mask.width, mask.height).T.astype(bool)


def area(mask: Optional[RleMask]) -> int:
    return 0 if mask is None else mask.area


def _check_pair(a: RleMask, b: RleMask):
    if a.shape != b.shape:
        raise DimensionError(f"mask shapes differ: {a.shape} vs {b.shape}")


def intersection_area(a: Optional[RleMask], b: Optional[RleMask]) -> int:
    if a is None or b is None:
        return 0
    _check_pair(a, b)
    if a.area == 0 or b.area == 0:
        return 0
    return int(kernels.intersect_runs(a.counts, b.counts))


def union_area(a: Optional[RleMask], b: Optional[RleMask]) -> int:
    return area(a) + area(b) - intersection_area(a, b)


def mask_iou(a: Optional[RleMask], b: Optional[RleMask]) -> float:
    u = union_area(a, b)
    return intersection_area(a, b) / u if u else 0.0


class TrackOverlap(NamedTuple):
    """Frame-summed intersection and union of two tracks."""

    intersection: int
    union: int

    @property
    def degenerate(self) -> bool:
        # both tracks empty in every frame
        return self.union == 0

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.intersection, self.union) if self.union else Fraction(0)

    @property
    def iou(self) -> float:
        return float(self.ratio)


def _check_tracks(p: InstanceTrack, g: InstanceTrack):
    if p.length != g.length:
        raise DimensionError(f"track lengths differ: {p.length} vs {g.length}")
    shapes = {m.shape for m in (*p.masks, *g.masks) if m is not None}
    if len(shapes) > 1:
        raise DimensionError(f"tracks mix mask shapes {sorted(shapes)}")


def track_overlap(p: InstanceTrack, g: InstanceTrack) -> TrackOverlap:
    _check_tracks(p, g)
    inter = 0
    union = 0
    for a, b in zip(p.masks, g.masks):
        i = intersection_area(a, b)
        inter += i
        union += area(a) + area(b) - i
    return TrackOverlap(inter, union)


def spatio_temporal_iou(p: InstanceTrack, g: InstanceTrack) -> float:
    """IoU of two tracks with intersections and unions summed over frames.

    Returns 0.0 when both tracks are empty everywhere; use
    :func:`track_overlap` to tell that case apart via ``.degenerate``.
    """
    return track_overlap(p, g).iou


def pairwise_intersection_matrix(
    a: Sequence[Optional[RleMask]], b: Sequence[Optional[RleMask]]
) -> np.ndarray:
    """``out[i, j] = |a[i] & b[j]|``; absent masks contribute zero."""
    shapes = {m.shape for m in (*a, *b) if m is not None}
    if len(shapes) > 1:
        raise DimensionError(f"masks mix shapes {sorted(shapes)}")
    empty = np.zeros(1, dtype=np.int64)
    fa, oa = kernels.pack_counts([empty if m is None else m.counts for m in a])
    fb, ob = kernels.pack_counts([empty if m is None else m.counts for m in b])
    return kernels.pairwise_intersections(fa, oa, fb, ob)


def track_iou_matrix(preds: Sequence[InstanceTrack], gts: Sequence[InstanceTrack]):
    """Spatio-temporal IoU for every (pred, gt) pair.

    Returns ``(iou, inter, union)`` where the last two are exact int64
    matrices and ``iou`` is ``inter / union`` (0 where ``union == 0``).
    """
    n, m = len(preds), len(gts)
    inter = np.zeros((n, m), dtype=np.int64)
    if n and m:
        lengths = {t.length for t in (*preds, *gts)}
        if len(lengths) > 1:
            raise DimensionError(f"tracks have differing lengths {sorted(lengths)}")
        for t in range(lengths.pop()):
            inter += pairwise_intersection_matrix(
                [p.masks[t] for p in preds], [g.masks[t] for g in gts]
            )
    pa = np.array([sum(area(x) for x in p.masks) for p in preds], dtype=np.int64)
    ga = np.array([sum(area(x) for x in g.masks) for g in gts], dtype=np.int64)
    union = pa[:, None] + ga[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        iou = np.where(union > 0, inter / np.maximum(union, 1), 0.0)
    return iou, inter, union
