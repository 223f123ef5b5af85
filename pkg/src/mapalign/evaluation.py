"""Track-level evaluation: spatio-temporal IoU matching, P/R/F1 and AP.

Two matching rules coexist on purpose:

* P/R/F1 count a prediction as a true positive only when its IoU with a
  ground-truth track is strictly greater than 0.5 (``iou_matching="gt"``);
  ``"gte"`` switches to the inclusive rule.
* AP follows the COCO / YouTube-VIS convention: IoU >= threshold, at
  thresholds 0.50:0.05:0.95, 101-point interpolated, reported x100.

Both use greedy matching: predictions in descending score order each take
the still-unmatched ground truth with the highest IoU.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .core import DatasetManifest, DimensionError, InstanceTrack
from .linker import exact_ratio
from .mask_ops import track_iou_matrix

log = logging.getLogger(__name__)

IOU_THRESHOLDS: tuple[float, ...] = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
RECALL_POINTS = 101
MATCHING_RULES = ("gt", "gte")


class EvaluationError(ValueError):
    pass


class VideoMismatchError(EvaluationError):
    def __init__(self, missing_from_pred: Sequence, missing_from_gt: Sequence):
        self.missing_from_pred = sorted(missing_from_pred)
        self.missing_from_gt = sorted(missing_from_gt)
        parts = []
        if self.missing_from_pred:
            parts.append(f"videos missing from predictions: {self.missing_from_pred}")
        if self.missing_from_gt:
            parts.append(f"videos missing from ground truth: {self.missing_from_gt}")
        super().__init__("; ".join(parts))


class MissingScoreError(EvaluationError):
    pass


@dataclass(frozen=True)
class Match:
    pred_id: Any
    gt_id: Any
    iou: float


@dataclass(frozen=True)
class MatchResult:
    matches: tuple[Match, ...]
    unmatched_preds: tuple[Any, ...]
    unmatched_gts: tuple[Any, ...]

    @property
    def tp(self) -> int:
        return len(self.matches)

    @property
    def fp(self) -> int:
        return len(self.unmatched_preds)

    @property
    def fn(self) -> int:
        return len(self.unmatched_gts)


# -- greedy core -------------------------------------------------------------------

def _rank(preds: Sequence[InstanceTrack]) -> list[int]:
    return sorted(range(len(preds)), key=lambda i: (-preds[i].effective_score, preds[i].track_id))


def _eligible(inter, union, threshold: Fraction, strict: bool, same_cat) -> np.ndarray:
    p, q = threshold.numerator, threshold.denominator
    lhs = inter * q
    rhs = union * p
    ok = lhs > rhs if strict else lhs >= rhs
    return ok & (inter > 0) & same_cat


def _greedy(order, iou, eligible) -> np.ndarray:
    """gt index assigned to each prediction (-1 if none)."""
    n, m = eligible.shape
    assigned = np.full(n, -1, dtype=np.int64)
    taken = np.zeros(m, dtype=bool)
    for i in order:
        cand = eligible[i] & ~taken
        if not cand.any():
            continue
        j = int(np.argmax(np.where(cand, iou[i], -1.0)))
        assigned[i] = j
        taken[j] = True
    return assigned


@dataclass
class _VideoPairs:
    preds: list
    gts: list
    order: list
    iou: np.ndarray
    inter: np.ndarray
    union: np.ndarray
    same_cat: np.ndarray


def _pairs(preds: Sequence[InstanceTrack], gts: Sequence[InstanceTrack]) -> _VideoPairs:
    iou, inter, union = track_iou_matrix(preds, gts)
    pc = np.array([p.category_id for p in preds], dtype=object)
    gc = np.array([g.category_id for g in gts], dtype=object)
    same = (pc[:, None] == gc[None, :]) if len(preds) and len(gts) else np.zeros((len(preds), len(gts)), bool)
    return _VideoPairs(list(preds), list(gts), _rank(preds), iou, inter, union, same.astype(bool))


def _match(vp: _VideoPairs, threshold, strict: bool) -> MatchResult:
    thr = exact_ratio(threshold)
    assigned = _greedy(vp.order, vp.iou, _eligible(vp.inter, vp.union, thr, strict, vp.same_cat))
    matches, fps = [], []
    for i in vp.order:
        j = assigned[i]
        if j < 0:
            fps.append(vp.preds[i].track_id)
        else:
            matches.append(Match(vp.preds[i].track_id, vp.gts[j].track_id, float(vp.iou[i, j])))
    hit = set(int(j) for j in assigned if j >= 0)
    fns = [g.track_id for k, g in enumerate(vp.gts) if k not in hit]
    return MatchResult(tuple(matches), tuple(fps), tuple(fns))


def _same_video(preds, gts):
    vids = {t.video_id for t in (*preds, *gts)}
    if len(vids) > 1:
        raise EvaluationError(f"tracks from several videos passed together: {sorted(vids, key=str)}")


def match_tracks(
    preds: Sequence[InstanceTrack],
    gts: Sequence[InstanceTrack],
    iou_threshold: float = 0.5,
    iou_matching: str = "gt",
) -> MatchResult:
    """Greedy score-ordered matching of one video's predictions to its GT.

    Tracks without a score rank as 1.0.  Only same-category pairs match.
    """
    if iou_matching not in MATCHING_RULES:
        raise ValueError(f"iou_matching must be one of {MATCHING_RULES}")
    _same_video(preds, gts)
    return _match(_pairs(preds, gts), iou_threshold, iou_matching == "gt")


def precision_recall_f1(matches) -> tuple[float, float, float]:
    """(P, R, F1) from one :class:`MatchResult`, an iterable of them, or a (tp, fp, fn) triple."""
    if isinstance(matches, MatchResult):
        tp, fp, fn = matches.tp, matches.fp, matches.fn
    elif isinstance(matches, tuple) and len(matches) == 3 and all(isinstance(x, int) for x in matches):
        tp, fp, fn = matches
    else:
        tp = fp = fn = 0
        for r in matches:
            tp, fp, fn = tp + r.tp, fp + r.fp, fn + r.fn
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


# -- AP ------------------------------------------------------------------------------

def interpolated_ap(tp_flags: Sequence[bool], n_gt: int, points: int = RECALL_POINTS) -> float:
    """101-point interpolated AP in [0, 1] for a ranked list of TP/FP flags.

    Precision at recall r is the best precision at any recall >= r.
    Recall levels are compared as exact rationals.
    """
    if n_gt <= 0:
        raise ValueError("AP is undefined without ground truth")
    flags = np.asarray(tp_flags, dtype=bool)
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    precision = tp / (tp + fp)
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    steps = points - 1
    total = 0.0
    for k in range(points):
        # first rank whose recall tp/n_gt reaches k/steps
        idx = int(np.searchsorted(tp * steps, k * n_gt, side="left"))
        if idx < flags.size:
            total += precision[idx]
    return total / points


@dataclass(frozen=True)
class APTable:
    thresholds: tuple[float, ...]
    per_threshold: tuple[float, ...]
    per_category: dict = field(default_factory=dict)

    @property
    def ap(self) -> float:
        return float(np.mean(self.per_threshold)) if self.per_threshold else 0.0

    def at(self, threshold: float) -> float:
        for t, v in zip(self.thresholds, self.per_threshold):
            if abs(t - threshold) < 1e-9:
                return v
        raise KeyError(threshold)

    @property
    def ap50(self) -> float:
        return self.at(0.5)

    @property
    def ap75(self) -> float:
        return self.at(0.75)


def _by_video(tracks: Iterable[InstanceTrack]) -> dict:
    out = defaultdict(list)
    for t in tracks:
        out[t.video_id].append(t)
    return out


def _ap_from_pairs(
    video_pairs: dict, video_order: Sequence, thresholds: Sequence[float], strict: bool = False
) -> APTable:
    categories = sorted({g.category_id for vp in video_pairs.values() for g in vp.gts}, key=str)
    per_cat: dict = {}
    for cat in categories:
        n_gt = sum(1 for vp in video_pairs.values() for g in vp.gts if g.category_id == cat)
        values = []
        for thr in thresholds:
            ranked = []  # (-score, video rank, in-video rank, is_tp)
            fthr = exact_ratio(thr)
            for vrank, vid in enumerate(video_order):
                vp = video_pairs.get(vid)
                if vp is None:
                    continue
                elig = _eligible(vp.inter, vp.union, fthr, strict, vp.same_cat)
                gcat = np.array([g.category_id == cat for g in vp.gts], dtype=bool)
                elig = elig & gcat[None, :] if elig.size else elig
                order = [i for i in vp.order if vp.preds[i].category_id == cat]
                assigned = _greedy(order, vp.iou, elig)
                for r, i in enumerate(order):
                    ranked.append((-vp.preds[i].effective_score, vrank, r, assigned[i] >= 0))
            ranked.sort(key=lambda x: x[:3])
            values.append(100.0 * interpolated_ap([x[3] for x in ranked], n_gt))
        per_cat[cat] = values
    if per_cat:
        per_threshold = tuple(float(np.mean([v[k] for v in per_cat.values()])) for k in range(len(thresholds)))
    else:
        per_threshold = tuple(0.0 for _ in thresholds)
    return APTable(tuple(thresholds), per_threshold, per_cat)


def _require_scores(preds: Sequence[InstanceTrack]):
    missing = [p.track_id for p in preds if p.score is None]
    if missing:
        raise MissingScoreError(f"predictions without a score: {missing[:10]}")


def average_precision(
    preds: Sequence[InstanceTrack],
    gts: Sequence[InstanceTrack],
    thresholds: Sequence[float] = IOU_THRESHOLDS,
) -> APTable:
    """AP over all videos, pooled per category, averaged over categories present in GT."""
    _require_scores(preds)
    pv, gv = _by_video(preds), _by_video(gts)
    order = sorted(set(pv) | set(gv), key=str)
    pairs = {vid: _pairs(pv.get(vid, []), gv.get(vid, [])) for vid in order}
    return _ap_from_pairs(pairs, order, thresholds)


# -- full report ------------------------------------------------------------------------

TABLE_COLUMNS = ("AP", "AP50", "AP75", "Precision", "Recall", "F1")


@dataclass(frozen=True)
class EvalReport:
    ap_table: APTable
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    matches: dict
    iou_matching: str = "gt"
    n_pred: int = 0
    n_gt: int = 0

    @property
    def ap(self) -> float:
        return self.ap_table.ap

    @property
    def ap50(self) -> float:
        return self.ap_table.ap50

    @property
    def ap75(self) -> float:
        return self.ap_table.ap75

    def row(self) -> tuple[str, ...]:
        return (
            f"{self.ap:.2f}", f"{self.ap50:.2f}", f"{self.ap75:.2f}",
            f"{self.precision:.2f}", f"{self.recall:.2f}", f"{self.f1:.2f}",
        )

    def format_table(self, label: Optional[str] = None) -> str:
        header = " ".join(TABLE_COLUMNS)
        row = " ".join(self.row())
        if label is not None:
            header = "Configuration " + header
            row = f"{label} {row}"
        return f"{header}\n{row}"

    def to_dict(self) -> dict:
        return {
            "AP": self.ap,
            "AP50": self.ap50,
            "AP75": self.ap75,
            "ap_per_threshold": {f"{t:.2f}": v for t, v in zip(self.ap_table.thresholds, self.ap_table.per_threshold)},
            "ap_per_category": {str(c): v for c, v in self.ap_table.per_category.items()},
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "iou_matching": self.iou_matching,
            "num_predictions": self.n_pred,
            "num_ground_truth": self.n_gt,
            "matches": {
                str(vid): [{"pred_id": m.pred_id, "gt_id": m.gt_id, "iou": m.iou} for m in ms]
                for vid, ms in self.matches.items()
            },
        }


def _check_compatible(pred: DatasetManifest, gt: DatasetManifest):
    pids = {v.video_id for v in pred.videos}
    gids = {v.video_id for v in gt.videos}
    if pids != gids:
        raise VideoMismatchError(gids - pids, pids - gids)
    for v in gt.videos:
        p = pred.video(v.video_id)
        if (p.frame_count, p.height, p.width) != (v.frame_count, v.height, v.width):
            raise DimensionError(
                f"video {v.video_id}: prediction is {p.frame_count}x{p.height}x{p.width}, "
                f"ground truth is {v.frame_count}x{v.height}x{v.width}"
            )
    gt_cats = {c.id for c in gt.categories}
    unknown = sorted({a.category_id for a in pred.annotations} - gt_cats, key=str)
    if unknown:
        raise EvaluationError(f"prediction categories not in ground truth table: {unknown}")


def evaluate(
    pred: DatasetManifest,
    gt: DatasetManifest,
    iou_matching: str = "gt",
    f1_threshold: float = 0.5,
    thresholds: Sequence[float] = IOU_THRESHOLDS,
    workers: int = 1,
) -> EvalReport:
    """Score a prediction manifest against ground truth.

    A prediction manifest in which *no* track has a score (e.g. ground truth
    evaluated against itself) is scored as if every track had 1.0.  A
    manifest with only some scores missing is rejected.
    """
    if iou_matching not in MATCHING_RULES:
        raise ValueError(f"iou_matching must be one of {MATCHING_RULES}")
    _check_compatible(pred, gt)
    preds = list(pred.annotations)
    if preds and all(p.score is None for p in preds):
        log.info("prediction manifest has no scores; treating every track as score 1.0")
        preds = [p.replace(score=1.0) for p in preds]
    _require_scores(preds)

    pv, gv = _by_video(preds), _by_video(gt.annotations)
    order = [v.video_id for v in gt.videos]

    def work(vid):
        return vid, _pairs(pv.get(vid, []), gv.get(vid, []))

    if workers > 1 and len(order) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pairs = dict(pool.map(work, order))
    else:
        pairs = dict(map(work, order))

    strict = iou_matching == "gt"
    per_video = {vid: _match(pairs[vid], f1_threshold, strict) for vid in order}
    tp = sum(r.tp for r in per_video.values())
    fp = sum(r.fp for r in per_video.values())
    fn = sum(r.fn for r in per_video.values())
    p, r, f1 = precision_recall_f1((tp, fp, fn))
    return EvalReport(
        ap_table=_ap_from_pairs(pairs, order, thresholds),
        tp=tp, fp=fp, fn=fn,
        precision=p, recall=r, f1=f1,
        matches={vid: list(res.matches) for vid, res in per_video.items()},
        iou_matching=iou_matching,
        n_pred=len(preds),
        n_gt=len(gt.annotations),
    )
