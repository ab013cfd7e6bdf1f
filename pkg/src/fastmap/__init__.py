"""FastMap: global structure-from-motion from verified keypoint matches."""

from .config import PipelineConfig
from .model import (CameraModel, GeometryClass, ImageInfo, ImagePairMatches,
                    MatchSet, PoseState, SceneModel, ScenePoint, TrackSet)
from .pipeline import FastMapReconstructor, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "CameraModel", "FastMapReconstructor", "GeometryClass", "ImageInfo",
    "ImagePairMatches", "MatchSet", "PipelineConfig", "PoseState",
    "SceneModel", "ScenePoint", "TrackSet", "run_pipeline", "__version__",
]
