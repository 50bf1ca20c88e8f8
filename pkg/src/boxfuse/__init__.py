"""Post-processing for dense oriented detections: NMS baselines and graph-based box fusion."""

from .clustering import Cluster, MergeError, cluster_partitioned, locality_aware_cluster, merge
from .evaluation import BenchResult, EvalReport, bench, match_detections, sweep
from .fusion import AdamState, FusionModel, box_loss, fuse, smooth_l1, train, train_step
from .geometry import ImageMeta, InvalidPolygonError, QuadBox, convex_clip, iou, iou_matrix, polygon_area
from .graph import InstanceSubGraph, build_subgraph, sample_nodes
from .io import DetectionRecord, ParseError, RunConfig, parse_detections, serialize_detections
from .matching import hungarian_match
from .nms import locality_aware_nms, polygon_nms, rotated_nms, skew_nms, soft_nms, standard_nms
from .synth import PerturbSpec, generate_dataset, generate_scene

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "BenchResult",
    "Cluster",
    "DetectionRecord",
    "EvalReport",
    "FusionModel",
    "ImageMeta",
    "InstanceSubGraph",
    "InvalidPolygonError",
    "MergeError",
    "ParseError",
    "PerturbSpec",
    "QuadBox",
    "RunConfig",
    "bench",
    "box_loss",
    "build_subgraph",
    "cluster_partitioned",
    "convex_clip",
    "fuse",
    "generate_dataset",
    "generate_scene",
    "hungarian_match",
    "iou",
    "iou_matrix",
    "locality_aware_cluster",
    "locality_aware_nms",
    "match_detections",
    "merge",
    "parse_detections",
    "polygon_area",
    "polygon_nms",
    "rotated_nms",
    "serialize_detections",
    "skew_nms",
    "smooth_l1",
    "soft_nms",
    "standard_nms",
    "sweep",
    "train",
    "train_step",
]
