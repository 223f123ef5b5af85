"""Command-line entry point: ``mapalign {synth,link,eval,convert,stats,render}``.

Exit codes: 0 success, 1 internal error, 2 usage or validation error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import ConfigError, DatasetManifest, InstanceTrack, MaskError, VideoRecord, validate_manifest
from .dataset_io import (
    ManifestError,
    load_detection_file,
    load_json,
    read_manifest,
    read_tile,
    segmentation_to_mask,
    tracks_to_manifest,
    write_manifest,
    write_tile,
)
from .evaluation import EvaluationError, evaluate
from .linker import LinkConfig, link_series
from .mask_ops import rle_decode
from .synth import MissingImageError, SynthConfig, build_synthetic_dataset

log = logging.getLogger("mapalign")

WORKERS_ENV = "MAPALIGN_WORKERS"
EXIT_OK, EXIT_INTERNAL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return int(env)
    return os.cpu_count() or 1


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _existing_dir(path: Path, what: str) -> Path:
    if not path.is_dir():
        raise UsageError(f"{what} directory not found: {path}")
    return path


def _existing_file(path: Path, what: str) -> Path:
    if not path.is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


# -- synth ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    det_dir = _existing_dir(Path(args.detections), "detections")
    img_dir = _existing_dir(Path(args.images), "images")
    try:
        config = SynthConfig(
            score_threshold=args.score_threshold,
            min_instance_area=args.min_area,
            max_displacement=args.max_displacement,
            random_seed=args.seed,
        )
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    files = sorted(det_dir.glob("*.json"))
    try:
        manifest, summary = build_synthetic_dataset(
            files, img_dir, config, workers=args.workers, return_summary=True
        )
    except MissingImageError as exc:
        raise UsageError(str(exc)) from exc
    write_manifest(manifest, args.out, compress_rle=args.compress_rle)
    print(
        f"images in: {summary.images_in}  excluded (no kept pseudo-masks): {summary.excluded}  "
        f"videos out: {summary.videos_out}  tracks: {summary.tracks_out}"
    )
    return EXIT_OK


# -- link ------------------------------------------------------------------------------

def cmd_link(args) -> int:
    try:
        config = LinkConfig(args.containment_threshold, args.score_threshold)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    frames, names, stamps, shape, video_id = [], [], [], None, None
    for p in args.detections:
        det = load_detection_file(_existing_file(Path(p), "detection file"))
        if video_id is None:
            video_id = det.video_id
        if det.shape is not None:
            if shape is not None and det.shape != shape:
                raise UsageError(f"{p}: mask size {det.shape} differs from {shape}")
            shape = det.shape
        base = len(frames)
        for f in det.frames:
            frames.append(type(f)(base + f.frame_index, f.detections))
        names.extend(det.file_names or [None] * len(det.frames))
        stamps.extend(det.timestamps or [None] * len(det.frames))
    if not frames:
        raise UsageError("detection files contain no frames")
    if video_id is None:
        video_id = args.video_id
    h, w = shape or (args.height, args.width)
    names = [n if n is not None else f"{video_id}/{t:05d}.png" for t, n in enumerate(names)]
    video = VideoRecord(
        video_id=video_id,
        frame_count=len(frames),
        height=h,
        width=w,
        frame_names=names,
        timestamps=None if all(s is None for s in stamps) else stamps,
    )
    tracks = link_series(frames, video, config)
    write_manifest(tracks_to_manifest(video, tracks), args.out, compress_rle=args.compress_rle)
    print(f"frames: {len(frames)}  detections kept: {sum(t.length - t.masks.count(None) for t in tracks)}  "
          f"tracks: {len(tracks)}")
    return EXIT_OK


# -- eval ------------------------------------------------------------------------------

def cmd_eval(args) -> int:
    pred = read_manifest(_existing_file(Path(args.pred), "prediction manifest"))
    gt = read_manifest(_existing_file(Path(args.gt), "ground-truth manifest"))
    try:
        report = evaluate(pred, gt, iou_matching=args.iou_matching, workers=args.workers)
    except EvaluationError as exc:
        raise UsageError(str(exc)) from exc
    print(report.format_table(args.label))
    if args.report:
        Path(args.report).write_text(
            json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    return EXIT_OK


# -- convert ---------------------------------------------------------------------------

def _results_to_manifest(results: list, gt: DatasetManifest) -> DatasetManifest:
    """YouTube-VIS results list -> prediction manifest over ``gt``'s videos."""
    tracks = []
    for k, r in enumerate(results):
        ctx = f"results[{k}]"
        try:
            segs = r["segmentations"]
            tracks.append(InstanceTrack(
                track_id=k + 1,
                category_id=r["category_id"],
                masks=[segmentation_to_mask(s, f"{ctx}.segmentations[{t}]") for t, s in enumerate(segs)],
                score=float(r["score"]),
                video_id=r["video_id"],
            ))
        except (KeyError, TypeError) as exc:
            raise UsageError(f"{ctx}: malformed result entry ({exc})") from exc
    return DatasetManifest(gt.videos, tracks, gt.categories)


def cmd_convert(args) -> int:
    src = _existing_file(Path(args.input), "input")
    if args.results:
        if not args.gt:
            raise UsageError("--results needs --gt to supply the video table")
        gt = read_manifest(_existing_file(Path(args.gt), "ground-truth manifest"))
        obj = load_json(src)
        if not isinstance(obj, list):
            raise UsageError(f"{src}: a results file is a JSON list")
        manifest = _results_to_manifest(obj, gt)
    else:
        manifest = read_manifest(src)
    write_manifest(manifest, args.output, compress_rle=args.compress_rle)
    print(f"wrote {len(manifest.videos)} videos, {len(manifest.annotations)} tracks to {args.output}")
    return EXIT_OK


# -- stats -----------------------------------------------------------------------------

def manifest_stats(manifest: DatasetManifest) -> dict:
    lengths = [t.length - t.masks.count(None) for t in manifest.annotations]
    areas = [m.area for t in manifest.annotations for m in t.masks if m is not None]
    per_video = [len(manifest.tracks_for(v.video_id)) for v in manifest.videos]
    scores = [t.score for t in manifest.annotations if t.score is not None]
    return {
        "videos": len(manifest.videos),
        "frames": sum(v.frame_count for v in manifest.videos),
        "tracks": len(manifest.annotations),
        "categories": {str(c.id): c.name for c in manifest.categories},
        "tracks_per_video_mean": float(np.mean(per_video)) if per_video else 0.0,
        "present_frames_histogram": {str(k): lengths.count(k) for k in sorted(set(lengths))},
        "mask_area_mean": float(np.mean(areas)) if areas else 0.0,
        "mask_area_min": int(min(areas)) if areas else 0,
        "mask_area_max": int(max(areas)) if areas else 0,
        "scored_tracks": len(scores),
        "violations": [str(v) for v in validate_manifest(manifest)],
    }


def cmd_stats(args) -> int:
    manifest = read_manifest(_existing_file(Path(args.manifest), "manifest"))
    stats = manifest_stats(manifest)
    if args.json:
        print(json.dumps(stats, sort_keys=True, indent=2))
    else:
        for key, value in stats.items():
            print(f"{key}: {value}")
    return EXIT_OK if not stats["violations"] else EXIT_USAGE


# -- render ----------------------------------------------------------------------------

def track_color(track_id) -> tuple[int, int, int]:
    """Stable RGB colour for a track id (never pure black or white)."""
    digest = hashlib.blake2b(str(track_id).encode("utf-8"), digest_size=3).digest()
    r, g, b = (64 + (c % 160) for c in digest)
    return int(r), int(g), int(b)


def render_video(manifest: DatasetManifest, video: VideoRecord, image_dir: Path, out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    tracks = sorted(manifest.tracks_for(video.video_id), key=lambda t: str(t.track_id))
    written = []
    for t, name in enumerate(video.frame_names):
        src = image_dir / name
        if not src.is_file():
            raise UsageError(f"image not found: {src}")
        canvas = read_tile(src).copy()
        if canvas.shape[:2] != (video.height, video.width):
            raise UsageError(f"{src}: image is {canvas.shape[:2]}, video is {(video.height, video.width)}")
        for track in tracks:
            m = track.masks[t]
            if m is not None:
                canvas[rle_decode(m)] = track_color(track.track_id)
        dst = out_dir / f"frame_{t:03d}.png"
        write_tile(dst, canvas)
        written.append(dst)
    return written


def cmd_render(args) -> int:
    manifest = read_manifest(_existing_file(Path(args.manifest), "manifest"))
    img_dir = _existing_dir(Path(args.images), "images")
    out = Path(args.out)
    count = 0
    for video in manifest.videos:
        count += len(render_video(manifest, video, img_dir, out / str(video.video_id)))
    print(f"rendered {count} frames to {out}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mapalign", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--workers", type=_positive_int, default=None,
                        help=f"parallel workers (default: ${WORKERS_ENV} or CPU count)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="build synthetic two-frame videos from tiles + pseudo-masks")
    p.add_argument("--detections", required=True, help="directory of per-tile detection files (*.json)")
    p.add_argument("--images", required=True, help="directory of PNG tiles")
    p.add_argument("--out", required=True, help="output manifest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--score-threshold", type=float, default=0.5)
    p.add_argument("--min-area", type=int, default=1)
    p.add_argument("--max-displacement", type=int, default=0,
                   help="max per-axis pixel shift of frame-1 masks (0 = off)")
    p.add_argument("--compress-rle", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("link", help="link per-frame detections into tracks (heuristic baseline)")
    p.add_argument("--detections", required=True, nargs="+", help="detection file(s), frames in order")
    p.add_argument("--out", required=True)
    p.add_argument("--containment-threshold", type=float, default=0.6)
    p.add_argument("--score-threshold", type=float, default=0.5)
    p.add_argument("--video-id", type=int, default=1, help="used when the detection file has none")
    p.add_argument("--height", type=int, default=256, help="used when no masks are present")
    p.add_argument("--width", type=int, default=256, help="used when no masks are present")
    p.add_argument("--compress-rle", action="store_true")
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("eval", help="evaluate predicted tracks against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--report", help="write the full report as JSON")
    p.add_argument("--iou-matching", choices=("gt", "gte"), default="gt",
                   help="TP rule for P/R/F1: IoU > 0.5 (gt, default) or >= 0.5 (gte)")
    p.add_argument("--label", help="row label for the printed table")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("convert", help="rewrite a manifest, or turn a results list into one")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--results", action="store_true", help="input is a YouTube-VIS results list")
    p.add_argument("--gt", help="manifest whose videos/categories a results list refers to")
    p.add_argument("--compress-rle", action="store_true", help="emit compressed RLE strings")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("stats", help="summarise a manifest")
    p.add_argument("manifest")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("render", help="draw tracks over their tiles, one PNG per frame")
    p.add_argument("--manifest", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.workers is None:
        try:
            args.workers = max(1, _default_workers())
        except ValueError:
            print(f"error: ${WORKERS_ENV} must be an integer", file=sys.stderr)
            return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ManifestError, ConfigError, MaskError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
