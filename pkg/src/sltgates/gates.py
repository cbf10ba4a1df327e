"""Continuously relaxed Bernoulli gates.

A gate is ``z = clamp01(mu + eps)`` with ``eps ~ N(0, sigma^2)``. Its
probability of being non-zero is ``Phi(mu / sigma)``, which makes the
expected number of active gates a smooth function of the means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .tensor import Tensor, add, get_default_dtype, hard_sigmoid_clamp, record

TRAIN = "train"
EVAL = "eval"
_MODES = (TRAIN, EVAL)


class NoiseSource:
    """Seeded standard-normal stream.

    Uses numpy's PCG64 bit generator with the ziggurat normal sampler of
    ``Generator.standard_normal``; both are stable across platforms for a
    given numpy release, so a seed fixes the whole variate sequence.
    """

    def __init__(self, seed):
        self.seed = seed
        self._rng = np.random.Generator(np.random.PCG64(seed))

    def normal(self, shape, dtype=None) -> np.ndarray:
        dt = np.dtype(dtype) if dtype is not None else get_default_dtype()
        return self._rng.standard_normal(shape, dtype=dt)


@dataclass
class GateTensor:
    """Learnable gate means plus the shared, fixed noise scale."""

    mu: Tensor
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        self.sigma = float(self.sigma)
        if not self.mu.requires_grad:
            raise ValueError("gate means must require grad")

    @classmethod
    def init(cls, shape, mu_init: float = 0.5, sigma: float = 0.5, dtype=None) -> "GateTensor":
        return cls(Tensor(np.full(shape, mu_init), requires_grad=True, dtype=dtype), sigma)

    @property
    def shape(self) -> tuple:
        return self.mu.shape

    @property
    def size(self) -> int:
        return self.mu.size


def sample_gates(g: GateTensor, noise: NoiseSource | None, mode: str = TRAIN) -> Tensor:
    """Draw gate values; one fresh noise draw per gate in train mode, none in eval."""
    if mode == EVAL:
        return hard_sigmoid_clamp(g.mu)
    if mode != TRAIN:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")
    eps = noise.normal(g.shape, dtype=g.mu.dtype)
    eps *= eps.dtype.type(g.sigma)
    return hard_sigmoid_clamp(add(g.mu, Tensor._wrap(eps, False)))


def normal_cdf(x):
    """Standard normal CDF via erfc, elementwise, in float64."""
    return kernels.normal_cdf(x)


def normal_pdf(x):
    return kernels.normal_pdf(x)


def expected_l0(g: GateTensor) -> Tensor:
    """Sum over gates of Phi(mu / sigma), as a float64 scalar tensor."""
    mu = g.mu
    s = g.sigma
    x = mu.data.astype(np.float64) / s
    total = np.asarray(np.sum(normal_cdf(x)))

    def bw(grad):
        return (normal_pdf(x) * (float(grad) / s),)

    return record(total, (mu,), bw, "expected_l0")


def threshold_mask(g: GateTensor) -> np.ndarray:
    """Deterministic ticket: True where mu > 0 (mu == 0 is pruned)."""
    return np.asarray(g.mu.data > 0)


def active_probability(mu: float, sigma: float) -> float:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return 0.5 * math.erfc(-(mu / sigma) / math.sqrt(2.0))
