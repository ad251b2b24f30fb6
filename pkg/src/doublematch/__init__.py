"""Semi-supervised image classification with pseudo-labeling plus a
stop-gradient cosine feature-similarity loss."""

from .config import TrainConfig, load_config, preset, save_config

__all__ = ["TrainConfig", "load_config", "preset", "save_config"]
__version__ = "0.1.0"
