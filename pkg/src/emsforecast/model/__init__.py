"""Spatio-temporal CNN and per-subregion MLP forecasters."""

from .network import Network, build_network, gather_inputs
from .spec import OPTIMIZERS, ModelSpec, TrainOptions, schema_hash
from .training import (
    Optimizer,
    TrainedModel,
    build_cnn,
    build_mlp,
    count_params,
    load_model,
    loss_and_grads,
    mse_loss,
    predict,
    predict_demand,
    save_model,
    train,
)

__all__ = [
    "Network",
    "build_network",
    "gather_inputs",
    "OPTIMIZERS",
    "ModelSpec",
    "TrainOptions",
    "schema_hash",
    "Optimizer",
    "TrainedModel",
    "build_cnn",
    "build_mlp",
    "count_params",
    "load_model",
    "loss_and_grads",
    "mse_loss",
    "predict",
    "predict_demand",
    "save_model",
    "train",
]
