"""Independent oracles and random fixture builders for the test-suite.

Nothing here calls the package's RLE kernels: oracles work on dense numpy
grids with plain loops or boolean algebra.
"""
from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np

from mapalign.core import Category, DatasetManifest, Detection, FrameDetections, InstanceTrack, RleMask, VideoRecord
from mapalign.dataset_io import write_detections, write_tile


def loop_encode(grid) -> list[int]:
    """Column-major RLE by walking pixels one at a time."""
    h, w = grid.shape
    counts, cur, run = [], 0, 0
    for c in range(w):
        for r in range(h):
            v = 1 if grid[r, c] else 0
            if v != cur:
                counts.append(run)
                cur, run = v, 0
            run += 1
    counts.append(run)
    return counts


def loop_decode(counts, h, w) -> np.ndarray:
    grid = np.zeros((h, w), dtype=bool)
    pos = 0
    for k, c in enumerate(counts):
        for p in range(pos, pos + c):
            if k % 2:
                grid[p % h, p // h] = True
        pos += c
    return grid


def mask_from_grid(grid) -> RleMask:
    h, w = grid.shape
    return RleMask(h, w, loop_encode(grid))


def random_grid(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    kind = rng.integers(0, 6)
    if kind == 0:
        return np.zeros((h, w), bool)
    if kind == 1:
        return np.ones((h, w), bool)
    if kind == 2:
        g = np.zeros((h, w), bool)
        g[rng.integers(h), rng.integers(w)] = True
        return g
    if kind == 3:
        g = np.zeros((h, w), bool)
        for _ in range(rng.integers(1, 4)):
            r0, c0 = rng.integers(0, h), rng.integers(0, w)
            g[r0:r0 + rng.integers(1, h + 1), c0:c0 + rng.integers(1, w + 1)] = True
        return g
    return rng.random((h, w)) < rng.uniform(0.05, 0.95)


def rect(h, w, r0, r1, c0, c1) -> np.ndarray:
    """Dense grid with rows [r0, r1) x cols [c0, c1) set."""
    g = np.zeros((h, w), bool)
    g[r0:r1, c0:c1] = True
    return g


def track_from_grids(grids, track_id=1, score=None, video_id=1, category_id=1):
    masks = [None if g is None else mask_from_grid(g) for g in grids]
    return InstanceTrack(track_id, category_id, masks, score=score, video_id=video_id)


def dense_track_iou(grids_a, grids_b) -> Fraction:
    inter = union = 0
    for a, b in zip(grids_a, grids_b):
        a = np.zeros_like(b) if a is None else a
        b = np.zeros_like(a) if b is None else b
        inter += int(np.count_nonzero(a & b))
        union += int(np.count_nonzero(a | b))
    return Fraction(inter, union) if union else Fraction(0)


def brute_force_ranked_flags(pred_grids, pred_scores, gt_grids, threshold: Fraction):
    """TP/FP flags of predictions in rank order using plain greedy matching (IoU >= thr)."""
    order = sorted(range(len(pred_grids)), key=lambda i: (-pred_scores[i], i))
    taken = set()
    flags = []
    for i in order:
        best, best_j = None, None
        for j, g in enumerate(gt_grids):
            if j in taken:
                continue
            iou = dense_track_iou(pred_grids[i], g)
            if iou > 0 and iou >= threshold and (best is None or iou > best):
                best, best_j = iou, j
        if best_j is None:
            flags.append(False)
        else:
            taken.add(best_j)
            flags.append(True)
    return flags


def pr_integral_ap(flags, n_gt) -> float:
    """Exact area under the interpolated precision-recall curve, x100."""
    tp = fp = 0
    points = []
    for f in flags:
        tp += bool(f)
        fp += not f
        points.append((Fraction(tp, n_gt), Fraction(tp, tp + fp)))
    area = Fraction(0)
    prev = Fraction(0)
    for i, (r, _) in enumerate(points):
        if r > prev:
            area += (r - prev) * max(p for _, p in points[i:])
            prev = r
    return float(100 * area)


def sampled_ap(flags, n_gt, points=101) -> float:
    """101-point AP by scanning every rank for each recall level, in exact rationals."""
    tp = fp = 0
    pr = []
    for f in flags:
        tp += bool(f)
        fp += not f
        pr.append((Fraction(tp, n_gt), Fraction(tp, tp + fp)))
    total = Fraction(0)
    for k in range(points):
        r = Fraction(k, points - 1)
        reach = [p for rc, p in pr if rc >= r]
        total += max(reach) if reach else 0
    return float(100 * total / points)


def optimal_tp_count(iou, threshold, strict=True) -> int:
    """Maximum one-to-one matching size by enumeration (small inputs only)."""
    n, m = iou.shape
    ok = (iou > threshold) if strict else (iou >= threshold)
    best = 0
    if n <= m:
        for perm in itertools.permutations(range(m), n):
            best = max(best, sum(ok[i, perm[i]] for i in range(n)))
    else:
        for perm in itertools.permutations(range(n), m):
            best = max(best, sum(ok[perm[j], j] for j in range(m)))
    return int(best)


def make_tile_corpus(root, n_images=10, empty=(2, 5, 7), size=32):
    """Tiles + one-frame detection files; images listed in ``empty`` get only low-score masks."""
    dets, imgs = root / "detections", root / "images"
    dets.mkdir()
    imgs.mkdir()
    rng = np.random.default_rng(5)
    for k in range(n_images):
        name = f"tile_{k:03d}"
        write_tile(imgs / f"{name}.png", rng.integers(0, 256, (size, size, 3), dtype=np.uint8))
        if k in empty:
            frame = FrameDetections(0, [Detection(mask_from_grid(rect(size, size, 0, 3, 0, 3)), 0.2)])
        else:
            frame = FrameDetections(0, [
                Detection(mask_from_grid(rect(size, size, 4 * j, 4 * j + 3, j, j + 5)), 0.9)
                for j in range(1 + k % 3)
            ])
        write_detections(dets / f"{name}.json", [frame], video_id=k)
    return dets, imgs


def random_manifest(rng: np.random.Generator, max_videos=4, max_tracks=6, max_side=16, n_categories=2):
    """A valid manifest of random tracks; every track has at least one non-empty frame."""
    videos, tracks = [], []
    tid = 1
    for vid in range(1, int(rng.integers(1, max_videos + 1)) + 1):
        T = int(rng.integers(1, 5))
        h, w = (int(v) for v in rng.integers(2, max_side + 1, size=2))
        videos.append(VideoRecord(vid, T, h, w, [f"v{vid}/{t}.png" for t in range(T)]))
        for _ in range(int(rng.integers(0, max_tracks + 1))):
            grids = [random_grid(rng, h, w) if rng.random() < 0.75 else None for _ in range(T)]
            grids = [g if g is not None and g.any() else None for g in grids]
            if all(g is None for g in grids):
                g = np.zeros((h, w), bool)
                g[rng.integers(h), rng.integers(w)] = True
                grids[int(rng.integers(T))] = g
            cat = int(rng.integers(1, n_categories + 1))
            tracks.append(track_from_grids(grids, tid, video_id=vid, category_id=cat))
            tid += 1
    cats = [Category(c, f"class{c}") for c in range(1, n_categories + 1)]
    return DatasetManifest(videos, tracks, cats)
