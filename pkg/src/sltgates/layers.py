"""Gated layers over frozen random weights, and the reference networks."""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .gates import EVAL, TRAIN, GateTensor, NoiseSource, sample_gates, threshold_mask
from .tensor import (
    ShapeError,
    Tensor,
    conv2d,
    elementwise_mul,
    flatten,
    get_default_dtype,
    matmul,
    maxpool2d,
    relu,
    transpose,
)

TICKET = "ticket"
ARCHS = ("lenet300", "smallconv")
INIT_SCHEMES = ("kaiming_normal", "scaled_kaiming_normal")


@dataclass
class NetworkSpec:
    arch: str = "lenet300"
    input_shape: tuple = (1, 28, 28)
    num_classes: int = 10
    width: float = 1.0
    init: str = "kaiming_normal"
    init_gain: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        if self.arch not in ARCHS:
            raise ValueError(f"unknown architecture {self.arch!r}; choose from {ARCHS}")
        if self.init not in INIT_SCHEMES:
            raise ValueError(f"unknown init scheme {self.init!r}; choose from {INIT_SCHEMES}")
        if not 0 < self.width <= 1:
            raise ValueError(f"width multiplier must lie in (0, 1], got {self.width}")
        if len(self.input_shape) != 3:
            raise ValueError(f"input_shape must be (C, H, W), got {self.input_shape}")

    @property
    def gain(self) -> float:
        return self.init_gain if self.init == "scaled_kaiming_normal" else 1.0

    def scaled(self, n: int) -> int:
        """Hidden size after the width multiplier: floor, at least 1."""
        return max(1, math.floor(n * self.width + 1e-9))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d


class GatedLinear:
    def __init__(self, name: str, weight: Tensor, gate: GateTensor):
        if weight.requires_grad:
            raise ValueError(f"{name}: weights must be frozen")
        if gate.shape != weight.shape:
            raise ShapeError(f"{name}: gate shape {gate.shape} != weight shape {weight.shape}")
        self.name = name
        self.weight = weight
        self.gate = gate

    @property
    def shape(self) -> tuple:
        return self.weight.shape

    @property
    def fan_in(self) -> int:
        return self.weight.shape[1]

    def apply(self, h: Tensor, w: Tensor) -> Tensor:
        if h.ndim != 2 or h.shape[1] != w.shape[1]:
            raise ShapeError(f"{self.name}: input {h.shape} does not fit weight {w.shape}")
        return matmul(h, transpose(w))


class GatedConv2d(GatedLinear):
    def __init__(self, name: str, weight: Tensor, gate: GateTensor, stride: int = 1,
                 padding: int = 0):
        super().__init__(name, weight, gate)
        self.stride = stride
        self.padding = padding

    @property
    def fan_in(self) -> int:
        _, c, kh, kw = self.weight.shape
        return c * kh * kw

    def apply(self, h: Tensor, w: Tensor) -> Tensor:
        if h.ndim != 4 or h.shape[1] != w.shape[1]:
            raise ShapeError(f"{self.name}: input {h.shape} does not fit kernel {w.shape}")
        return conv2d(h, w, self.stride, self.padding)


def gated_weight(layer: GatedLinear, noise: NoiseSource | None, mode: str) -> Tensor:
    """B (.) W for one layer. ``ticket`` mode uses the binary mask 1[mu > 0]."""
    if mode == TICKET:
        mask = threshold_mask(layer.gate).astype(layer.weight.dtype)
        return Tensor._wrap(layer.weight.data * mask, False)
    z = sample_gates(layer.gate, noise, mode)
    return elementwise_mul(z, layer.weight)


def forward_gated_linear(layer: GatedLinear, h: Tensor, noise: NoiseSource | None,
                         mode: str = TRAIN) -> Tensor:
    """Pre-activation output of a single gated layer."""
    return layer.apply(h, gated_weight(layer, noise, mode))


@dataclass
class Network:
    spec: NetworkSpec
    layers: list
    plan: list = field(repr=False)

    @property
    def gates(self) -> list:
        return [layer.gate for layer in self.layers]

    @property
    def names(self) -> list:
        return [layer.name for layer in self.layers]

    def effective_weights(self, noise: NoiseSource | None, mode: str) -> list:
        return [gated_weight(layer, noise, mode) for layer in self.layers]

    def forward_with(self, x: Tensor, weights) -> Tensor:
        """Run the network with explicit per-layer effective weights."""
        want = tuple(self.spec.input_shape)
        if x.ndim != 4 or x.shape[1:] != want:
            raise ShapeError(f"input batch {x.shape} does not match network input (N, {want})")
        h = x
        for step in self.plan:
            if isinstance(step, int):
                h = self.layers[step].apply(h, weights[step])
            elif step == "relu":
                h = relu(h)
            elif step == "pool":
                h = maxpool2d(h, 2)
            elif step == "flatten":
                h = flatten(h)
        return h

    def forward(self, x: Tensor, noise: NoiseSource | None = None, mode: str = EVAL) -> Tensor:
        return self.forward_with(x, self.effective_weights(noise, mode))

    def forward_masked(self, x: Tensor, masks) -> Tensor:
        """Forward with fixed binary masks (one array per layer)."""
        weights = []
        for layer, m in zip(self.layers, masks):
            m = np.asarray(m)
            if m.shape != layer.shape:
                raise ShapeError(f"{layer.name}: mask shape {m.shape} != weight shape {layer.shape}")
            weights.append(Tensor._wrap(layer.weight.data * m.astype(layer.weight.dtype), False))
        return self.forward_with(x, weights)

    def weight_checksum(self) -> str:
        h = hashlib.sha256()
        for layer in self.layers:
            h.update(layer.name.encode())
            h.update(np.ascontiguousarray(layer.weight.data).tobytes())
        return h.hexdigest()

    def reset_gates(self, mu_init: float) -> None:
        for g in self.gates:
            g.mu.data[...] = mu_init
            g.mu.zero_grad()


def count_gates(network: Network) -> dict:
    per_layer = {layer.name: int(layer.weight.size) for layer in network.layers}
    return {"layers": per_layer, "total": sum(per_layer.values())}


def _layer_shapes(spec: NetworkSpec) -> list:
    c, h, w = spec.input_shape
    k = spec.num_classes
    if spec.arch == "lenet300":
        h1, h2 = spec.scaled(300), spec.scaled(100)
        return [("fc1", (h1, c * h * w)), ("fc2", (h2, h1)), ("fc3", (k, h2))]
    c1, c2 = spec.scaled(32), spec.scaled(64)
    feat = c2 * (h // 4) * (w // 4)
    return [("conv1", (c1, c, 3, 3)), ("conv2", (c2, c1, 3, 3)), ("fc", (k, feat))]


def init_weights(spec: NetworkSpec, seed: int | None = None, mu_init: float = 0.5,
                 sigma: float = 0.5, dtype=None) -> Network:
    """Build ``spec`` with frozen Kaiming-normal weights and fresh gates.

    Weights are drawn in float64 from a generator seeded by ``seed`` (default
    ``spec.seed``), in layer order, then cast to the working precision.
    """
    dt = np.dtype(dtype) if dtype is not None else get_default_dtype()
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    layers = []
    for name, shape in _layer_shapes(spec):
        fan_in = int(np.prod(shape[1:]))
        std = spec.gain * math.sqrt(2.0 / fan_in)
        w = Tensor(rng.normal(0.0, std, size=shape), dtype=dt)
        w.data.flags.writeable = False
        gate = GateTensor.init(shape, mu_init, sigma, dtype=dt)
        if len(shape) == 4:
            layers.append(GatedConv2d(name, w, gate, stride=1, padding=1))
        else:
            layers.append(GatedLinear(name, w, gate))
    if spec.arch == "lenet300":
        plan = ["flatten", 0, "relu", 1, "relu", 2]
    else:
        plan = [0, "relu", "pool", 1, "relu", "pool", "flatten", 2]
    return Network(spec, layers, plan)


# ---------------------------------------------------------------------------
# weight snapshots ("SLTW")

WEIGHTS_MAGIC = b"SLTW"
WEIGHTS_VERSION = 1
_DTYPE_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


class SnapshotError(ValueError):
    pass


def write_weights(network: Network, path) -> None:
    """Little-endian snapshot of the frozen weights, one record per layer."""
    parts = [WEIGHTS_MAGIC, struct.pack("<II", WEIGHTS_VERSION, len(network.layers))]
    for layer in network.layers:
        arr = np.ascontiguousarray(layer.weight.data)
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        name = layer.name.encode("utf-8")
        parts.append(struct.pack("<H", len(name)) + name)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(struct.pack("<B", _DTYPE_TAGS[arr.dtype]))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_weights(path) -> list:
    """Inverse of :func:`write_weights`; returns ``[(name, array), ...]``."""
    buf = Path(path).read_bytes()
    if buf[:4] != WEIGHTS_MAGIC:
        raise SnapshotError(f"{path}: bad magic {buf[:4]!r}")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != WEIGHTS_VERSION:
            raise SnapshotError(f"{path}: unsupported version {version}")
        pos = 12
        out = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            name = buf[pos + 2:pos + 2 + nlen].decode("utf-8")
            pos += 2 + nlen
            (rank,) = struct.unpack_from("<I", buf, pos)
            dims = struct.unpack_from(f"<{rank}I", buf, pos + 4)
            pos += 4 + 4 * rank
            (tag,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            dt = _TAG_DTYPES[tag]
            nbytes = int(np.prod(dims)) * dt.itemsize
            if pos + nbytes > len(buf):
                raise SnapshotError(f"{path}: truncated data for layer {name!r}")
            arr = np.frombuffer(buf, dtype=dt, count=int(np.prod(dims)), offset=pos)
            out.append((name, arr.reshape(dims).copy()))
            pos += nbytes
    except (struct.error, KeyError) as exc:
        raise SnapshotError(f"{path}: malformed snapshot ({exc})") from None
    if pos != len(buf):
        raise SnapshotError(f"{path}: {len(buf) - pos} trailing bytes")
    return out


def verify_weights(network: Network, snapshot: list) -> None:
    """Raise unless ``snapshot`` holds exactly this network's weights."""
    if [n for n, _ in snapshot] != network.names:
        raise SnapshotError("snapshot layer names do not match the network")
    for layer, (name, arr) in zip(network.layers, snapshot):
        if arr.shape != layer.shape or not np.array_equal(arr, layer.weight.data):
            raise SnapshotError(f"snapshot weights differ for layer {name!r}")
