"""Backpropagation-free two-view convolutional feature extraction with DCA filters."""

from .dataset import MultiViewDataset, SplitSpec, load_dataset, make_splits, make_views
from .network import NetworkConfig, TrainedModel, extract_features, fit, forward
from .classify import evaluate, train_classifier, predict

__version__ = "0.1.0"

__all__ = [
    "MultiViewDataset", "SplitSpec", "load_dataset", "make_splits", "make_views",
    "NetworkConfig", "TrainedModel", "extract_features", "fit", "forward",
    "evaluate", "train_classifier", "predict",
]
