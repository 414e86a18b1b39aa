"""Numpy-only multi-scale restoration network with its own autodiff."""

from .loss import content_loss, pyramid
from .model import Architecture, ModelWeights, init_weights, mimo_forward, restore_array
from .tensor import ShapeError, Tensor, conv2d, conv2d_forward
from .train import GradcheckReport, TrainConfig, backward, gradcheck, gradcheck_report, lr_at, train_toy
from .weights_io import CorruptWeightsError, load_weights, save_weights

__all__ = [
    "Architecture", "CorruptWeightsError", "ModelWeights", "ShapeError", "Tensor", "TrainConfig",
    "GradcheckReport", "backward", "content_loss", "conv2d", "conv2d_forward", "gradcheck",
    "gradcheck_report", "init_weights",
    "load_weights", "lr_at", "mimo_forward", "pyramid", "restore_array", "save_weights", "train_toy",
]
