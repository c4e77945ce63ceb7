"""Keypoint detection and description learned from labelled image pairs."""

from .backbone import BackboneConfig, KeypointNet, build_model, load_checkpoint, save_checkpoint
from .config import TrainConfig, build_config, load_config
from .detector import KeypointSet, sample_keypoints, top_k_inference
from .geometry import MatchResult, RansacConfig, eight_point, mutual_nearest_neighbors, ransac_fundamental
from .trainer import Trainer, train

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig", "KeypointNet", "build_model", "load_checkpoint", "save_checkpoint",
    "TrainConfig", "build_config", "load_config",
    "KeypointSet", "sample_keypoints", "top_k_inference",
    "MatchResult", "RansacConfig", "eight_point", "mutual_nearest_neighbors", "ransac_fundamental",
    "Trainer", "train",
]
