"""Downstream evaluation protocols and metrics."""

from .heads import (ensemble_logits, finetune_semi, frame_probs, knn_retrieve, linear_probe,
                    median_smooth, postprocess_segments, predict_early, stratified_subset)
from .metrics import Segment, eval_detection_map, eval_segmentation, temporal_iou

__all__ = [
    "Segment", "ensemble_logits", "eval_detection_map", "eval_segmentation", "finetune_semi",
    "frame_probs", "knn_retrieve", "linear_probe", "median_smooth", "postprocess_segments", "predict_early",
    "stratified_subset", "temporal_iou",
]
