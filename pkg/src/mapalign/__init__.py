"""Entity alignment across historical map series.

Synthetic pretraining videos from map tiles, a containment-based linking
baseline, and spatio-temporal IoU / AP / F1 evaluation of entity tracks.
"""
__version__ = "0.1.0"

from .core import (
    DEFAULT_CATEGORIES,
    Category,
    ConfigError,
    DatasetManifest,
    Detection,
    DimensionError,
    FrameDetections,
    InstanceTrack,
    MalformedRLEError,
    RleMask,
    VideoRecord,
    Violation,
    validate_manifest,
)
from .mask_ops import (
    area,
    intersection_area,
    rle_decode,
    rle_encode,
    spatio_temporal_iou,
    track_overlap,
    union_area,
)
from .dataset_io import (
    read_detections,
    read_manifest,
    tracks_to_manifest,
    write_detections,
    write_manifest,
)
from .synth import SynthConfig, build_synthetic_dataset, displace_second_frame, make_synthetic_video
from .linker import LinkConfig, approximately_within, link_series, match_consecutive
from .evaluation import (
    EvalReport,
    average_precision,
    evaluate,
    match_tracks,
    precision_recall_f1,
)
from .kernels import BACKEND
