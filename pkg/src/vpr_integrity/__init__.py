"""Integrity monitoring for visual place recognition (VPR) matches.

A small MLP over statistics of the match distance vector and the query and
reference features predicts whether a VPR match lies within a position
tolerance. The prediction gates single-query localization and a
history-of-queries localizer that dead-reckons along the reference route.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    DistanceMode,
    MatchRecord,
    Pose2D,
    QueryStream,
    SynthConfig,
    ToleranceConfig,
    Traverse,
    generate_synthetic,
)
from .errors import VprError  # noqa: E402
from .featurizer import CATALOGUE, FeatureBundle, extract_stats, featurize  # noqa: E402
from .localizer import HistoryWindow, hoq_localize, update_history, verify_single  # noqa: E402
from .matcher import DistanceMetric, best_match, distance_vector, label_match, match_queries  # noqa: E402
from .mlp import MlpModel, TrainConfig, forward, predict, train, weighted_mse  # noqa: E402

__all__ = [
    "CATALOGUE", "DistanceMetric", "DistanceMode", "FeatureBundle", "HistoryWindow",
    "MatchRecord", "MlpModel", "Pose2D", "QueryStream", "SynthConfig", "ToleranceConfig",
    "TrainConfig", "Traverse", "VprError", "best_match", "distance_vector", "extract_stats",
    "featurize", "forward", "generate_synthetic", "hoq_localize", "label_match",
    "match_queries", "predict", "train", "update_history", "verify_single", "weighted_mse",
]
