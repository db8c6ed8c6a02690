"""Window classifier: a 1D-CNN whose depth grows with the window size."""
from .gradcheck import GradCheckResult, numeric_grad_check
from .model import LayerSpec, ModelSpec, Network, ShapeError, build_model, layer_shapes
from .serialize import ModelFormatError, load_model, save_model
from .train import ModelBundle, TrainConfig, TrainingError, forward, predict, train

__all__ = [
    "GradCheckResult", "LayerSpec", "ModelBundle", "ModelFormatError", "ModelSpec",
    "Network", "ShapeError", "TrainConfig", "TrainingError", "build_model", "forward",
    "layer_shapes", "load_model", "numeric_grad_check", "predict", "save_model", "train",
]
