from .oracle import oracle_predict
from .model import (PredictorConfig, ObserveNet, model_init, forward, loss,
                    gradient_check)
from .io import save_model, load_model
from .train import train, windowed_samples, split_by_drive, predict_last_mse

__all__ = [
    "oracle_predict",
    "PredictorConfig",
    "ObserveNet",
    "model_init",
    "forward",
    "loss",
    "gradient_check",
    "save_model",
    "load_model",
    "train",
    "windowed_samples",
    "split_by_drive",
    "predict_last_mse",
]
