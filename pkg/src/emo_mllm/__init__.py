"""Toy multimodal emotion-recognition LM: facial-region attention, image and
video Q-Formers, LoRA decoder, set metrics and a batch harness."""

from .config import RunConfig, load_config, make_config
from .errors import ConfigError, ContractViolation, DataError, EmoError, NumericError

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "load_config", "make_config",
    "EmoError", "ConfigError", "DataError", "NumericError", "ContractViolation",
]
