"""Single-image texture translation with positional-moment re-injection."""
from .model import DomainId, ModelConfig, SittaModel
from .losses import LossWeights
from .trainer import TrainConfig, train, train_pair, translate

__version__ = "0.1.0"

__all__ = ["DomainId", "ModelConfig", "SittaModel", "LossWeights", "TrainConfig", "train",
           "train_pair", "translate"]
