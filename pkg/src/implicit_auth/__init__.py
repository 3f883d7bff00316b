"""Continuous implicit authentication from phone and watch motion sensors."""

from .context import CONTEXTS, MOVING, STATIONARY, ForestModel, detect, train_forest
from .dataset import PHONE_AND_WATCH, PHONE_ONLY, FeatureDataset, build_dataset
from .features import COMBINED_LAYOUT, PHONE_LAYOUT, auth_vector, device_features
from .krr import ACCEPT, REJECT, AuthModel, TrainingSet, classify, score, train_dual, train_primal
from .pipeline import ModelBank, ResponsePolicy, RetrainConfig, authenticate_window, enroll, run_stream
from .sensors import SensorSample, SensorStream, ValidationError, segment
from .synth import make_population

__version__ = "0.1.0"

__all__ = [
    "ACCEPT", "COMBINED_LAYOUT", "CONTEXTS", "MOVING", "PHONE_AND_WATCH", "PHONE_LAYOUT", "PHONE_ONLY", "REJECT",
    "STATIONARY", "AuthModel", "FeatureDataset", "ForestModel", "ModelBank", "ResponsePolicy", "RetrainConfig",
    "SensorSample", "SensorStream", "TrainingSet", "ValidationError", "auth_vector", "authenticate_window",
    "build_dataset", "classify", "detect", "device_features", "enroll", "make_population", "run_stream", "score",
    "segment", "train_dual", "train_forest", "train_primal",
]
