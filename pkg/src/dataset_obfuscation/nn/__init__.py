from .layers import Conv2D, Dense, Flatten, MaxPool, ReLU, SoftmaxCrossEntropyHead
from .model import (
    ModelArch,
    ModelWeights,
    evaluate,
    init_model,
    loss_and_grads,
    predict_proba,
    preset,
)
from .optim import Optimizer, OptState
from .train import Checkpoint, EpochTrace, TrainConfig, batch_at, replay, train

__all__ = [
    "Checkpoint", "Conv2D", "Dense", "EpochTrace", "Flatten", "MaxPool", "ModelArch",
    "ModelWeights", "OptState", "Optimizer", "ReLU", "SoftmaxCrossEntropyHead", "TrainConfig",
    "batch_at", "evaluate", "init_model", "loss_and_grads", "predict_proba", "preset", "replay",
    "train",
]
