"""Conditional (CLNN) and masked conditional (MCLNN) neural networks."""

from .data import (FoldManifest, Segment, Standardizer, append_delta, load_features,
                   save_features, segment_clip, synth_dataset)
from .estimator import MCLNNClassifier
from .evaluation import confusion, run_cross_validation, vote
from .layers import ClnnLayer, DenseLayer, clnn_backward, clnn_forward
from .mask import BinaryMask, MaskSpec, build_mask, mask_ones
from .network import LayerSpec, ModelConfig, Network, load_network, save_network
from .training import TrainConfig, gradient_check, train

__all__ = [
    "BinaryMask", "ClnnLayer", "DenseLayer", "FoldManifest", "LayerSpec", "MCLNNClassifier",
    "MaskSpec", "ModelConfig", "Network", "Segment", "Standardizer", "TrainConfig",
    "append_delta", "build_mask", "clnn_backward", "clnn_forward", "confusion",
    "gradient_check", "load_features", "load_network", "mask_ones", "run_cross_validation",
    "save_features", "save_network", "segment_clip", "synth_dataset", "train", "vote",
]
__version__ = "0.1.0"
