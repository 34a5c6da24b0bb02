"""Edge-guided non-local fully convolutional network for salient object detection.

A numpy-only implementation: tensors with reverse-mode differentiation,
the encoder / edge guidance / decoder network, its training loss, and the
saliency evaluation metrics.
"""

from .config import DESK_NETWORK, PAPER_NETWORK, LossWeights, NetworkConfig, TrainConfig
from .model import ENFNet, ForwardResult
from .params import ParamStore
from .tensor import GraphTape, ShapeError, Tensor, reverse_accumulate

__all__ = [
    "DESK_NETWORK",
    "PAPER_NETWORK",
    "ENFNet",
    "ForwardResult",
    "GraphTape",
    "LossWeights",
    "NetworkConfig",
    "ParamStore",
    "ShapeError",
    "Tensor",
    "TrainConfig",
    "reverse_accumulate",
]

__version__ = "0.1.0"
