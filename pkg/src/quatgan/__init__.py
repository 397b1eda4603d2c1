"""quatgan: quaternion-valued neural network building blocks and a GAN
training harness, verifiable at desk scale.

The library is organized around a four-component tensor type (`QTensor`),
Hamilton-product layers with shared submatrices, a minimal reverse-mode
autodiff tape with per-component gradients, proper-signal quaternion batch
normalization, two quaternion spectral-normalization schemes, and the
QDCGAN / QSNGAN architectures with real-valued twins for parameter
comparison.
"""

from .quaternion import Quaternion
from .qtensor import QTensor
from .layers import ConvConfig, QWeight
from .autodiff import Tape, grad_check
from .optim import AdamState, adam_step
from .models import ModelSpec, build_qdcgan, build_qsngan, build_real_twin, count_parameters
from .train import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "Quaternion",
    "QTensor",
    "ConvConfig",
    "QWeight",
    "Tape",
    "grad_check",
    "AdamState",
    "adam_step",
    "ModelSpec",
    "build_qdcgan",
    "build_qsngan",
    "build_real_twin",
    "count_parameters",
    "TrainConfig",
]
