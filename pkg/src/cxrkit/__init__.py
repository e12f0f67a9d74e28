"""Explainable chest X-ray classification toolkit."""

__version__ = "0.1.0"

from .imagecore import CLASS_LABELS, ClaheParams, NormalizationStats, inference_preprocess
from .models import build_convnext_tiny, build_resnet18, replace_head
from .nn import ModelGraph, WeightStore, graph_execute, load_weights, save_weights

__all__ = [
    "CLASS_LABELS",
    "ClaheParams",
    "NormalizationStats",
    "ModelGraph",
    "WeightStore",
    "build_convnext_tiny",
    "build_resnet18",
    "graph_execute",
    "inference_preprocess",
    "load_weights",
    "replace_head",
    "save_weights",
    "__version__",
]
