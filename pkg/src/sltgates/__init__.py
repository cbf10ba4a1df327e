"""Strong lottery tickets from frozen random networks via relaxed Bernoulli gates."""

__version__ = "0.1.0"

from .gates import GateTensor, NoiseSource, active_probability, expected_l0, sample_gates, threshold_mask
from .layers import NetworkSpec, count_gates, init_weights
from .maskio import MaskArtifact, apply_mask, read_mask, sparsity_report, write_mask
from .pipeline import RunConfig, composite_loss, evaluate, lambda_sweep, train, width_sweep
from .tensor import Tensor, backward

__all__ = [
    "GateTensor", "NoiseSource", "active_probability", "expected_l0", "sample_gates",
    "threshold_mask", "NetworkSpec", "count_gates", "init_weights", "MaskArtifact",
    "apply_mask", "read_mask", "sparsity_report", "write_mask", "RunConfig",
    "composite_loss", "evaluate", "lambda_sweep", "train", "width_sweep", "Tensor", "backward",
]
