"""Predict spatial gene expression from histology spots by querying with gene metadata."""

from .config import RunConfig, TrainConfig, load_config, parse_config
from .model import GeneQueryModel, ModelConfig, predict_matrix

__version__ = "0.1.0"

__all__ = ["GeneQueryModel", "ModelConfig", "RunConfig", "TrainConfig", "load_config", "parse_config", "predict_matrix"]
