"""Edge-popup baseline: per-layer top-k score selection, straight-through gradients."""

from __future__ import annotations

import math

import numpy as np

from .maskio import MaskArtifact
from .pipeline import DataSplits, RunConfig, RunResult, _accuracy, _Method, build_network, fit, prepare_data
from .tensor import Tensor, elementwise_mul, get_default_dtype, precision, record, softmax_cross_entropy


def retain_count(n: int, k: float) -> int:
    """ceil(k * n), guarded against float noise such as 2/3 * 3."""
    if not 0 < k <= 1:
        raise ValueError(f"retain fraction must lie in (0, 1], got {k}")
    return min(n, max(1, math.ceil(round(k * n, 9))))


def popup_mask(scores, k: float) -> np.ndarray:
    """Top ceil(k*N) scores within the layer; ties go to the lowest flat index."""
    s = np.asarray(scores)
    keep = retain_count(s.size, k)
    order = np.argsort(-s.reshape(-1), kind="stable")
    mask = np.zeros(s.size, dtype=bool)
    mask[order[:keep]] = True
    return mask.reshape(s.shape)


def straight_through(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Forward value is ``mask``; the gradient passes to ``scores`` unchanged."""
    return record(mask.astype(scores.dtype), (scores,), lambda g: (g,), "straight_through")


class _EdgePopup(_Method):
    method_id = "edgepopup"

    def __init__(self, network, config: RunConfig):
        super().__init__(network, config)
        # scores: |N(0, 2/fan_in)|, a separate stream from the weights
        rng = np.random.default_rng([config.seed, 2])
        dt = get_default_dtype()
        self.scores = []
        for layer in network.layers:
            std = math.sqrt(2.0 / layer.fan_in)
            s = np.abs(rng.normal(0.0, std, size=layer.shape))
            self.scores.append(Tensor(s, requires_grad=True, dtype=dt))
        self._zero = Tensor._wrap(np.asarray(0.0), False)

    @property
    def params(self) -> list:
        return self.scores

    def step_loss(self, x: Tensor, labels, noise):
        k = self.config.retain_k
        weights = [elementwise_mul(straight_through(s, popup_mask(s.data, k)), layer.weight)
                   for s, layer in zip(self.scores, self.network.layers)]
        ce = softmax_cross_entropy(self.network.forward_with(x, weights), labels)
        return ce, ce, self._zero

    def masks(self) -> list:
        return [popup_mask(s.data, self.config.retain_k) for s in self.scores]

    def expected_active(self) -> float:
        return float(sum(int(m.sum()) for m in self.masks()))

    def soft_forward(self, x: Tensor) -> Tensor:
        return self.network.forward_masked(x, self.masks())


def edge_popup_train(config: RunConfig, data: DataSplits | None = None,
                     on_epoch=None) -> RunResult:
    """Train popup scores with Adam on frozen weights; same loop as the gate method."""
    return fit(config.replace(method="edgepopup"), data, _EdgePopup, on_epoch)


def random_masks(network, k: float, seed: int) -> list:
    """Uniformly random per-layer masks with exactly ceil(k*N) active entries."""
    rng = np.random.default_rng([seed, 3])
    out = []
    for layer in network.layers:
        n = layer.weight.size
        m = np.zeros(n, dtype=bool)
        m[rng.permutation(n)[:retain_count(n, k)]] = True
        out.append(m.reshape(layer.shape))
    return out


def random_mask_control(config: RunConfig, data: DataSplits | None = None) -> dict:
    """Accuracy of a random ``retain_k`` mask over the same frozen weights."""
    config.validate()
    if data is None:
        data = prepare_data(config)
    with precision(config.dtype):
        network = build_network(config, data)
        masks = random_masks(network, config.retain_k, config.seed)
        dtype = np.dtype(config.dtype)

        def fwd(x):
            return network.forward_masked(x, masks)

        artifact = MaskArtifact.from_masks(network.names, masks, method="random", seed=config.seed)
        return {"val_acc": _accuracy(fwd, data.val, 1000, dtype),
                "test_acc": _accuracy(fwd, data.test, 1000, dtype),
                "artifact": artifact}
