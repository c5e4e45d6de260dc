"""GraphCAGE: unaligned multimodal sequence modeling by converting fused
sequences into graphs with capsule dynamic routing and aggregating them with
graph convolution plus capsule readout."""

from .config import ModelConfig, TrainConfig, load_config
from .construction import RoutingTrace
from .metrics import MetricsReport, compute_metrics
from .model import Batch, GraphCage
from .tensor import Tensor, Parameter, ParameterRegistry, backward, grad_check
from .training import RMSprop, evaluate, train

__all__ = [
    "Batch", "GraphCage", "MetricsReport", "ModelConfig", "Parameter",
    "ParameterRegistry", "RMSprop", "RoutingTrace", "Tensor", "TrainConfig",
    "backward", "compute_metrics", "evaluate", "grad_check", "load_config",
    "train",
]
