"""Decision-tree training, integer compilation and evaluation."""

from ._kernels import backend
from .cart import TrainParams, TreeNode, train
from .evaluate import CVResult, cross_validate, depth_sweep, macro_f1, nearest_centroid_cv, stratified_folds
from .features import DEFAULT_FEATURE_WORDS, FeatureVector, content_to_words, extract_features, stack_features
from .flat import (EvalBudget, FlatTree, Granularity, compile_tree, flatten, load_model, predict,
                   predict_many, predict_real, quantize, save_model, verify)

__all__ = [
    "backend", "TrainParams", "TreeNode", "train", "CVResult", "cross_validate", "depth_sweep",
    "macro_f1", "nearest_centroid_cv", "stratified_folds", "DEFAULT_FEATURE_WORDS", "FeatureVector",
    "content_to_words", "extract_features", "stack_features", "EvalBudget", "FlatTree", "Granularity",
    "compile_tree", "flatten", "load_model", "predict", "predict_many", "predict_real", "quantize",
    "save_model", "verify",
]
