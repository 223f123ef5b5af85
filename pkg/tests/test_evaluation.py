from fractions import Fraction

import numpy as np
import pytest

from mapalign.core import DatasetManifest, DimensionError, VideoRecord
from mapalign.evaluation import (
    IOU_THRESHOLDS,
    EvaluationError,
    MissingScoreError,
    VideoMismatchError,
    average_precision,
    evaluate,
    interpolated_ap,
    match_tracks,
    precision_recall_f1,
)
from mapalign.mask_ops import track_iou_matrix

from helpers import (
    brute_force_ranked_flags,
    optimal_tp_count,
    pr_integral_ap,
    random_grid,
    random_manifest,
    rect,
    sampled_ap,
    track_from_grids,
)

H = W = 8


def _t(grid, tid, score=None, vid=1, cat=1):
    return track_from_grids([grid], tid, score=score, video_id=vid, category_id=cat)


def _manifest(tracks, T=1):
    return DatasetManifest([VideoRecord(1, T, H, W, [str(t) for t in range(T)])], tracks)


def spec_fixture():
    """2 GT; predictions ranked TP (0.9), FP (0.8), TP (0.7), all TPs at IoU 1."""
    g1, g2 = rect(H, W, 0, 3, 0, 3), rect(H, W, 5, 8, 5, 8)
    stray = rect(H, W, 0, 2, 6, 8)
    gts = [_t(g1, 1), _t(g2, 2)]
    preds = [_t(g1, 11, 0.9), _t(stray, 12, 0.8), _t(g2, 13, 0.7)]
    return preds, gts


# -- matching ---------------------------------------------------------------------------

def test_identity_all_tp():
    gts = [_t(rect(H, W, 0, 2, 0, 2), 1), _t(rect(H, W, 4, 6, 4, 6), 2)]
    preds = [g.replace(score=1.0) for g in gts]
    r = match_tracks(preds, gts)
    assert (r.tp, r.fp, r.fn) == (2, 0, 0)


def test_iou_exactly_half_is_not_a_match_by_default():
    gt = _t(rect(H, W, 0, 2, 0, 2), 1)          # 4 px
    pred = _t(rect(H, W, 0, 2, 0, 1), 2, 1.0)   # 2 px inside -> IoU 1/2
    strict = match_tracks([pred], [gt])
    assert (strict.tp, strict.fp, strict.fn) == (0, 1, 1)
    inclusive = match_tracks([pred], [gt], iou_matching="gte")
    assert (inclusive.tp, inclusive.fp, inclusive.fn) == (1, 0, 0)


def test_higher_score_wins_shared_gt():
    gt = _t(rect(H, W, 0, 4, 0, 4), 1)
    a = _t(rect(H, W, 0, 4, 0, 4), 10, 0.9)
    b = _t(rect(H, W, 0, 4, 0, 3), 11, 0.8)
    r = match_tracks([b, a], [gt])
    assert [m.pred_id for m in r.matches] == [10]
    assert r.unmatched_preds == (11,)
    iou, _, _ = track_iou_matrix([a, b], [gt])
    assert optimal_tp_count(iou, 0.5) == r.tp == 1


def test_score_ties_break_by_track_id():
    gt = _t(rect(H, W, 0, 4, 0, 4), 1)
    r = match_tracks([_t(rect(H, W, 0, 4, 0, 4), 7, 0.5), _t(rect(H, W, 0, 4, 0, 4), 3, 0.5)], [gt])
    assert r.matches[0].pred_id == 3


def test_categories_do_not_cross():
    g = rect(H, W, 0, 4, 0, 4)
    r = match_tracks([_t(g, 2, 1.0, cat=2)], [_t(g, 1, cat=1)])
    assert (r.tp, r.fp, r.fn) == (0, 1, 1)


def test_cross_video_is_an_error():
    g = rect(H, W, 0, 4, 0, 4)
    with pytest.raises(EvaluationError):
        match_tracks([_t(g, 2, 1.0, vid=2)], [_t(g, 1, vid=1)])


def test_unknown_matching_rule():
    with pytest.raises(ValueError):
        match_tracks([], [], iou_matching="ge")


# -- P / R / F1 ---------------------------------------------------------------------------

def test_prf_examples():
    assert precision_recall_f1((3, 0, 0)) == (1.0, 1.0, 1.0)
    p, r, f1 = precision_recall_f1((1, 1, 0))
    assert (p, r) == (0.5, 1.0) and f1 == pytest.approx(2 / 3, abs=1e-15)
    assert precision_recall_f1((0, 0, 4)) == (0.0, 0.0, 0.0)


def test_prf_against_counting_oracle(rng):
    for _ in range(200):
        tp, fp, fn = (int(v) for v in rng.integers(0, 6, size=3))
        p, r, f1 = precision_recall_f1((tp, fp, fn))
        P = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
        R = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
        F = 2 * P * R / (P + R) if P + R else Fraction(0)
        assert (p, r) == (float(P), float(R))
        assert f1 == pytest.approx(float(F), abs=1e-15)


# -- AP ---------------------------------------------------------------------------------

def test_perfect_detector():
    gts = [_t(rect(H, W, 0, 2, 0, 2), 1), _t(rect(H, W, 4, 6, 4, 6), 2)]
    table = average_precision([g.replace(score=1.0) for g in gts], gts)
    assert (table.ap, table.ap50, table.ap75) == (100.0, 100.0, 100.0)


def test_no_predictions():
    table = average_precision([], [_t(rect(H, W, 0, 2, 0, 2), 1)])
    assert table.ap == 0.0


def test_missing_score_is_an_error():
    g = _t(rect(H, W, 0, 2, 0, 2), 1)
    with pytest.raises(MissingScoreError):
        average_precision([g], [g])


def test_fixture_ap50_agrees_with_oracles():
    preds, gts = spec_fixture()
    table = average_precision(preds, gts)
    assert table.ap50 == pytest.approx(sampled_ap([True, False, True], 2), abs=1e-9)
    assert table.ap50 == pytest.approx(25300 / 303, abs=1e-9)
    assert abs(table.ap50 - pr_integral_ap([True, False, True], 2)) <= 0.5
    assert table.per_threshold == (table.ap50,) * 10   # TPs sit at IoU 1


def test_interpolated_ap_matches_exact_scan(rng):
    for _ in range(500):
        n = int(rng.integers(0, 9))
        flags = [bool(f) for f in rng.random(n) < 0.5]
        n_gt = max(sum(flags), 1) + int(rng.integers(0, 3))
        assert 100 * interpolated_ap(flags, n_gt) == pytest.approx(sampled_ap(flags, n_gt), abs=1e-9)


def test_quantization_gap_worst_cases():
    # largest |101-point - continuous| gap over every flag list with <= 6 predictions
    worst = {}
    for n_gt in range(1, 7):
        best = 0.0
        for n in range(0, 7):
            for bits in range(2 ** n):
                flags = [bool(bits >> k & 1) for k in range(n)]
                if sum(flags) > n_gt:
                    continue
                best = max(best, abs(100 * interpolated_ap(flags, n_gt) - pr_integral_ap(flags, n_gt)))
        worst[n_gt] = round(best, 4)
    assert worst == {1: 0.0, 2: 0.495, 3: 0.33, 4: 0.7426, 5: 0.7921, 6: 0.495}


def _random_video_tracks(rng, n_pred, n_gt, T=2, h=6, w=6):
    gt_grids = [[random_grid(rng, h, w) for _ in range(T)] for _ in range(n_gt)]
    pred_grids = []
    for _ in range(n_pred):
        if gt_grids and rng.random() < 0.6:
            base = gt_grids[int(rng.integers(n_gt))]
            pred_grids.append([g ^ (rng.random((h, w)) < 0.1) for g in base])
        else:
            pred_grids.append([random_grid(rng, h, w) for _ in range(T)])
    scores = [float(s) for s in rng.permutation(n_pred) / max(n_pred, 1) + 0.01]
    preds = [track_from_grids(g, 100 + k, score=scores[k]) for k, g in enumerate(pred_grids)]
    gts = [track_from_grids(g, 1 + k) for k, g in enumerate(gt_grids)]
    return preds, gts, pred_grids, gt_grids, scores


def test_ranked_flags_match_dense_greedy(rng):
    for _ in range(200):
        preds, gts, pg, gg, scores = _random_video_tracks(rng, int(rng.integers(0, 7)), int(rng.integers(1, 7)))
        for thr in (0.5, 0.75, 0.95):
            flags = brute_force_ranked_flags(pg, scores, gg, Fraction(str(thr)))
            table = average_precision(preds, gts, thresholds=(thr,))
            assert table.per_threshold[0] == pytest.approx(sampled_ap(flags, len(gts)), abs=1e-9)


def test_threshold_monotonicity(rng):
    for _ in range(200):
        preds, gts, *_ = _random_video_tracks(rng, int(rng.integers(0, 7)), int(rng.integers(1, 7)))
        values = average_precision(preds, gts).per_threshold
        assert all(a >= b - 1e-9 for a, b in zip(values, values[1:]))


def test_score_monotone_ap(rng):
    for _ in range(200):
        preds, gts, *_ = _random_video_tracks(rng, int(rng.integers(1, 7)), int(rng.integers(1, 7)))
        r = match_tracks(preds, gts, iou_threshold=0.5, iou_matching="gte")
        tp_ids = {m.pred_id for m in r.matches}
        before = average_precision(preds, gts, thresholds=(0.5,)).ap
        # same score multiset, every TP above every FP, relative order kept within each group
        ranked = sorted(preds, key=lambda p: (p.track_id not in tp_ids, -p.score, p.track_id))
        scores = sorted((p.score for p in preds), reverse=True)
        promoted = [p.replace(score=s) for p, s in zip(ranked, scores)]
        after = average_precision(promoted, gts, thresholds=(0.5,)).ap
        assert after >= before - 1e-9


def test_greedy_vs_optimal_audit(rng):
    agree, differ = 0, 0
    for _ in range(300):
        preds, gts, *_ = _random_video_tracks(rng, int(rng.integers(0, 7)), int(rng.integers(1, 7)))
        r = match_tracks(preds, gts)
        iou, _, _ = track_iou_matrix(preds, gts)
        best = optimal_tp_count(iou, 0.5) if len(preds) else 0
        assert r.tp <= best
        if r.tp == best:
            agree += 1
        else:
            differ += 1
    print(f"greedy == optimal on {agree}/{agree + differ} instances")
    assert agree > 0


def test_counting_conservation(rng):
    for _ in range(100):
        preds, gts, *_ = _random_video_tracks(rng, int(rng.integers(0, 7)), int(rng.integers(0, 7)))
        for rule in ("gt", "gte"):
            r = match_tracks(preds, gts, iou_matching=rule)
            assert r.tp + r.fp == len(preds) and r.tp + r.fn == len(gts)


# -- evaluate ---------------------------------------------------------------------------

def test_self_evaluation_identity(rng):
    for _ in range(20):
        gt = random_manifest(rng)
        if not gt.annotations:
            continue
        rep = evaluate(gt.with_scores(1.0), gt)
        assert round(rep.ap, 2) == 100.0
        assert (rep.precision, rep.recall, rep.f1) == (1.0, 1.0, 1.0)
        assert rep.fp == rep.fn == 0


def test_unscored_predictions_default_to_one():
    gt = _manifest([_t(rect(H, W, 0, 2, 0, 2), 1)])
    assert evaluate(gt, gt).ap == 100.0
    mixed = _manifest([_t(rect(H, W, 0, 2, 0, 2), 1), _t(rect(H, W, 4, 6, 4, 6), 2, 0.3)])
    with pytest.raises(MissingScoreError):
        evaluate(mixed, gt)


def test_empty_predictions():
    gt = _manifest([_t(rect(H, W, 0, 2, 0, 2), 1), _t(rect(H, W, 4, 6, 4, 6), 2)])
    rep = evaluate(_manifest([]), gt)
    assert rep.ap == 0.0 and rep.f1 == 0.0 and rep.fn == 2


def test_video_mismatch_lists_ids():
    gt = DatasetManifest([VideoRecord(v, 1, H, W, ["x"]) for v in (1, 2, 3)], [])
    pred = DatasetManifest([VideoRecord(v, 1, H, W, ["x"]) for v in (1, 4)], [])
    with pytest.raises(VideoMismatchError) as err:
        evaluate(pred, gt)
    assert err.value.missing_from_pred == [2, 3]
    assert err.value.missing_from_gt == [4]


def test_video_dimension_mismatch():
    gt = _manifest([])
    pred = DatasetManifest([VideoRecord(1, 2, H, W, ["0", "1"])], [])
    with pytest.raises(DimensionError):
        evaluate(pred, gt)


def test_table_row_format():
    preds, gts = spec_fixture()
    rep = evaluate(_manifest(preds), _manifest(gts))
    header, row = rep.format_table().splitlines()
    assert header == "AP AP50 AP75 Precision Recall F1"
    assert row == "83.50 83.50 83.50 0.67 1.00 0.80"
    labelled = rep.format_table(label="synthetic").splitlines()
    assert labelled[1].startswith("synthetic 83.50")


def test_report_dict_and_worker_independence(rng):
    gt = random_manifest(rng, max_videos=4)
    pred = gt.with_scores(0.5)
    a = evaluate(pred, gt).to_dict()
    b = evaluate(pred, gt, workers=3).to_dict()
    assert a == b
    assert a["tp"] + a["fn"] == len(gt.annotations)


def test_thresholds_constant():
    assert IOU_THRESHOLDS == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)
    assert np.allclose(np.diff(IOU_THRESHOLDS), 0.05)
