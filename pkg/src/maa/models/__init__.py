from .encoders import (
    PatchTransformerEncoder,
    ResidualCnnEncoder,
    TextTransformerEncoder,
    VlpModel,
    build_model,
    load_model,
    save_model,
    input_gradient,
)
from .train import TrainSpec, train_contrastive, TrainingDivergedError

__all__ = [
    "PatchTransformerEncoder",
    "ResidualCnnEncoder",
    "TextTransformerEncoder",
    "VlpModel",
    "build_model",
    "load_model",
    "save_model",
    "input_gradient",
    "TrainSpec",
    "train_contrastive",
    "TrainingDivergedError",
]
