"""Gate training: composite objective, epoch loop, evaluation, sweeps."""

from __future__ import annotations

import csv
import dataclasses
import functools
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .data import (
    CIFAR_MEAN,
    CIFAR_STD,
    MNIST_MEAN,
    MNIST_STD,
    BatchIterator,
    Dataset,
    load_cifar10,
    load_mnist,
    make_synthetic,
    split_validation,
    standardize,
    take_subset,
)
from .gates import TRAIN, NoiseSource, expected_l0, threshold_mask
from .layers import EVAL, TICKET, Network, NetworkSpec, count_gates, init_weights, write_weights
from .maskio import MaskArtifact, sparsity_report, write_mask, write_report_json
from .optim import Adam
from .tensor import (
    NumericFault,
    Tape,
    Tensor,
    add,
    backward,
    no_grad,
    precision,
    scale,
    softmax_cross_entropy,
)

logger = logging.getLogger(__name__)

DATASETS = ("mnist", "cifar10", "synthetic")
AGGREGATIONS = ("mean", "sum")
METRIC_COLUMNS = ("epoch", "ce", "reg", "loss", "expected_sparsity", "ticket_sparsity",
                  "soft_acc", "ticket_acc", "seconds")


class ConfigError(ValueError):
    """Invalid run configuration; ``field`` names the offending setting."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class FrozenWeightError(RuntimeError):
    pass


class TrainingAborted(RuntimeError):
    """A numeric fault stopped training; ``metrics`` holds the completed epochs."""

    def __init__(self, message, last_good_epoch, metrics, config):
        super().__init__(message)
        self.last_good_epoch = last_good_epoch
        self.metrics = metrics
        self.config = config


@dataclass
class RunConfig:
    arch: str = "lenet300"
    dataset: str = "mnist"
    data_dir: str = "data/mnist"
    lam: float = 0.1
    sigma: float = 0.5
    mu_init: float = 0.5
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 128
    seed: int = 0
    agg: str = "mean"
    width: float = 1.0
    init: str = "kaiming_normal"
    init_gain: float = 1.0
    val_count: int = 5000
    train_subset: int | None = None
    data_seed: int = 0
    eval_every: int = 1
    dtype: str = "float32"
    method: str = "crbg"
    retain_k: float = 0.5
    synthetic_n: int = 200
    log_wall_time: bool = True

    def validate(self) -> "RunConfig":
        checks = [
            (self.lam >= 0 and math.isfinite(self.lam), "lam", "must be a finite number >= 0"),
            (self.sigma > 0, "sigma", "must be > 0"),
            (self.lr > 0, "lr", "must be > 0"),
            (self.epochs >= 1, "epochs", "must be >= 1"),
            (self.batch_size >= 1, "batch_size", "must be >= 1"),
            (self.agg in AGGREGATIONS, "agg", f"must be one of {AGGREGATIONS}"),
            (0 < self.width <= 1, "width", "must lie in (0, 1]"),
            (self.dataset in DATASETS, "dataset", f"must be one of {DATASETS}"),
            (self.arch in ("lenet300", "smallconv"), "arch", "must be lenet300 or smallconv"),
            (self.eval_every >= 1, "eval_every", "must be >= 1"),
            (self.dtype in ("float32", "float64"), "dtype", "must be float32 or float64"),
            (self.method in ("crbg", "edgepopup"), "method", "must be crbg or edgepopup"),
            (0 < self.retain_k <= 1, "retain_k", "must lie in (0, 1]"),
            (self.val_count >= 0, "val_count", "must be >= 0"),
            (self.train_subset is None or self.train_subset >= 1, "train_subset", "must be >= 1"),
            (self.init_gain > 0, "init_gain", "must be > 0"),
        ]
        for ok, name, msg in checks:
            if not ok:
                raise ConfigError(f"{name}={getattr(self, name)!r} {msg}", field=name)
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def manifest_hash(config: RunConfig) -> str:
    """sha256 over the canonical JSON of the config and library version."""
    blob = json.dumps({"config": config.to_dict(), "version": __version__},
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# data


@dataclass
class DataSplits:
    train: Dataset
    val: Dataset
    test: Dataset


@functools.lru_cache(maxsize=4)
def _load_raw(dataset: str, data_dir: str, split: str) -> Dataset:
    if dataset == "mnist":
        return load_mnist(data_dir, split)
    return load_cifar10(data_dir, split)


def prepare_data(config: RunConfig) -> DataSplits:
    """Load, split, subset and standardize according to ``config``."""
    if config.dataset == "synthetic":
        n = config.synthetic_n
        return DataSplits(make_synthetic("two-gaussians", n, config.data_seed),
                          make_synthetic("two-gaussians", n, config.data_seed + 1),
                          make_synthetic("two-gaussians", n, config.data_seed + 2))
    full = _load_raw(config.dataset, str(config.data_dir), "train")
    test = _load_raw(config.dataset, str(config.data_dir), "test")
    train, val = split_validation(full, config.val_count, config.data_seed)
    if config.train_subset:
        train = take_subset(train, config.train_subset, config.data_seed)
    mean, std = (MNIST_MEAN, MNIST_STD) if config.dataset == "mnist" else (CIFAR_MEAN, CIFAR_STD)
    train, _, _ = standardize(train, mean, std)
    val, _, _ = standardize(val, mean, std)
    test, _, _ = standardize(test, mean, std)
    return DataSplits(train, val, dataclasses.replace(test, split="test"))


def network_spec(config: RunConfig, input_shape, num_classes: int) -> NetworkSpec:
    return NetworkSpec(arch=config.arch, input_shape=tuple(input_shape),
                       num_classes=num_classes, width=config.width, init=config.init,
                       init_gain=config.init_gain, seed=config.seed)


def build_network(config: RunConfig, data: DataSplits) -> Network:
    spec = network_spec(config, data.train.input_shape, data.train.num_classes)
    return init_weights(spec, mu_init=config.mu_init, sigma=config.sigma, dtype=config.dtype)


# ---------------------------------------------------------------------------
# objective and evaluation


def regularizer(gates, agg: str = "mean") -> Tensor:
    """Sum of expected active gates over layers; divided by gate count in mean mode."""
    total = expected_l0(gates[0])
    for g in gates[1:]:
        total = add(total, expected_l0(g))
    if agg == "mean":
        return scale(total, 1.0 / sum(g.size for g in gates))
    if agg != "sum":
        raise ValueError(f"aggregation must be mean or sum, got {agg!r}")
    return total


def composite_loss(logits: Tensor, labels, gates, lam: float, agg: str = "mean",
                   return_parts: bool = False):
    """Cross-entropy plus ``lam`` times the aggregated expected-l0 penalty."""
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    ce = softmax_cross_entropy(logits, labels)
    reg = regularizer(gates, agg)
    loss = add(ce, scale(reg, lam))
    if return_parts:
        return loss, ce, reg
    return loss


def _accuracy(forward: Callable, data: Dataset, batch_size: int, dtype) -> float:
    if len(data) == 0:
        return float("nan")
    correct = 0
    with no_grad():
        for start in range(0, len(data), batch_size):
            x = Tensor._wrap(data.images[start:start + batch_size].astype(dtype), False)
            logits = forward(x).data
            # argmax ties resolve to the lowest class index
            correct += int(np.sum(np.argmax(logits, axis=1) == data.labels[start:start + batch_size]))
    return correct / len(data)


def evaluate(network, data: Dataset, mode: str = "ticket", batch_size: int = 1000) -> float:
    """Top-1 accuracy. ``soft`` uses clamp01(mu) gates, ``ticket`` the 1[mu > 0] mask.

    Anything with a ``forward(x)`` method (e.g. a :class:`MaskedNetwork`) is
    evaluated as-is.
    """
    if isinstance(network, Network):
        gate_mode = {"soft": EVAL, "ticket": TICKET}.get(mode)
        if gate_mode is None:
            raise ValueError(f"mode must be soft or ticket, got {mode!r}")
        dtype = network.layers[0].weight.dtype
        return _accuracy(lambda x: network.forward(x, None, gate_mode), data, batch_size, dtype)
    dtype = network.network.layers[0].weight.dtype
    return _accuracy(network.forward, data, batch_size, dtype)


def expected_active(gates) -> float:
    with no_grad():
        return float(sum(expected_l0(g).item() for g in gates))


def ticket_masks(network: Network) -> list:
    return [threshold_mask(g) for g in network.gates]


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochMetrics:
    epoch: int
    ce: float
    reg: float
    loss: float
    expected_sparsity: float
    ticket_sparsity: float
    soft_acc: float
    ticket_acc: float
    seconds: float

    def row(self) -> list:
        return [self.epoch, repr(self.ce), repr(self.reg), repr(self.loss),
                repr(self.expected_sparsity), repr(self.ticket_sparsity),
                _fmt(self.soft_acc), _fmt(self.ticket_acc), repr(self.seconds)]


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(x)


@dataclass
class RunResult:
    config: RunConfig
    network: Network
    metrics: list
    artifact: MaskArtifact
    final: dict
    checksum: str
    state: list = field(default_factory=list, repr=False)

    @property
    def manifest(self) -> dict:
        return {
            "library": "sltgates",
            "version": __version__,
            "status": "complete",
            "config": self.config.to_dict(),
            "manifest_hash": self.artifact.manifest_hash,
            "weight_checksum": self.checksum,
            "gate_counts": count_gates(self.network),
            "final": self.final,
        }


class _Method:
    """What a training run optimizes; the loop itself is shared."""

    method_id = "crbg"

    def __init__(self, network: Network, config: RunConfig):
        self.network = network
        self.config = config

    @property
    def params(self) -> list:
        return [g.mu for g in self.network.gates]

    def step_loss(self, x: Tensor, labels, noise: NoiseSource):
        logits = self.network.forward(x, noise, TRAIN)
        return composite_loss(logits, labels, self.network.gates, self.config.lam,
                              self.config.agg, return_parts=True)

    def expected_active(self) -> float:
        return expected_active(self.network.gates)

    def masks(self) -> list:
        return ticket_masks(self.network)

    def soft_forward(self, x: Tensor) -> Tensor:
        return self.network.forward(x, None, EVAL)


def fit(config: RunConfig, data: DataSplits | None, method_cls=_Method,
        on_epoch: Callable | None = None) -> RunResult:
    """Shared epoch loop: forward, loss, backward, Adam on the method's params."""
    config.validate()
    if data is None:
        data = prepare_data(config)
    with precision(config.dtype):
        network = build_network(config, data)
        checksum = network.weight_checksum()
        method = method_cls(network, config)
        params = method.params
        opt = Adam(params, lr=config.lr)
        noise = NoiseSource([config.seed, 1])
        batches = BatchIterator(data.train, config.batch_size, seed=config.seed)
        total = count_gates(network)["total"]
        dtype = np.dtype(config.dtype)
        tape = Tape()
        metrics = []
        t0 = time.perf_counter()
        for epoch in range(config.epochs):
            sums = np.zeros(3)
            steps = 0
            try:
                for xb, yb in batches:
                    tape.reset()
                    with tape:
                        loss, ce, reg = method.step_loss(Tensor._wrap(xb.astype(dtype), False),
                                                         yb, noise)
                        backward(loss)
                    opt.step()
                    opt.zero_grad()
                    sums += (ce.item(), reg.item(), loss.item())
                    steps += 1
            except NumericFault as exc:
                last = metrics[-1].epoch if metrics else -1
                raise TrainingAborted(f"numeric fault in epoch {epoch}: {exc}", last, metrics,
                                      config) from exc
            tape.reset()
            ce_m, reg_m, loss_m = sums / steps
            masks = method.masks()
            active = sum(int(m.sum()) for m in masks)
            soft_acc = ticket_acc = float("nan")
            if (epoch + 1) % config.eval_every == 0 or epoch + 1 == config.epochs:
                soft_acc = _accuracy(method.soft_forward, data.val, 1000, dtype)
                ticket_acc = _accuracy(lambda x: network.forward_masked(x, masks), data.val,
                                       1000, dtype)
            m = EpochMetrics(epoch, float(ce_m), float(reg_m), float(loss_m),
                             1.0 - method.expected_active() / total, 1.0 - active / total,
                             soft_acc, ticket_acc,
                             time.perf_counter() - t0 if config.log_wall_time else 0.0)
            metrics.append(m)
            logger.info("epoch %d loss %.5f ticket_sparsity %.4f val_ticket_acc %.4f",
                        epoch, m.loss, m.ticket_sparsity, m.ticket_acc)
            if on_epoch is not None:
                on_epoch(m)
        if network.weight_checksum() != checksum:
            raise FrozenWeightError("frozen weights changed during training")
        masks = method.masks()
        artifact = MaskArtifact.from_masks(network.names, masks, method=method.method_id,
                                           seed=config.seed, manifest_hash=manifest_hash(config))
        final = {
            "val_soft_acc": metrics[-1].soft_acc,
            "val_ticket_acc": metrics[-1].ticket_acc,
            "test_soft_acc": _accuracy(method.soft_forward, data.test, 1000, dtype),
            "test_ticket_acc": _accuracy(lambda x: network.forward_masked(x, masks), data.test,
                                         1000, dtype),
            "expected_sparsity": metrics[-1].expected_sparsity,
            "ticket_sparsity": artifact.sparsity,
            "active": artifact.active,
            "total": artifact.total,
            "seconds": time.perf_counter() - t0,
        }
    return RunResult(config, network, metrics, artifact, final, checksum,
                     [p.data.copy() for p in params])


def train(config: RunConfig, data: DataSplits | None = None,
          on_epoch: Callable | None = None) -> RunResult:
    """Train gate means on frozen random weights; returns metrics and the ticket."""
    if config.method != "crbg":
        raise ConfigError("train() runs the gate method; use baseline.edge_popup_train")
    return fit(config, data, _Method, on_epoch)


# ---------------------------------------------------------------------------
# run directories


def write_metrics_csv(metrics, path, truncated: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for m in metrics:
            w.writerow(m.row())
        if truncated:
            w.writerow(["TRUNCATED"] + [""] * (len(METRIC_COLUMNS) - 1))


def read_metrics_csv(path) -> tuple:
    """Returns ``(rows, truncated)``; rows are dicts of floats (None for blanks)."""
    rows, truncated = [], False
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            if r["epoch"] == "TRUNCATED":
                truncated = True
                continue
            rows.append({k: (None if v == "" else (int(v) if k == "epoch" else float(v)))
                         for k, v in r.items()})
    return rows, truncated


def write_run(result: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = result.manifest
    if not result.config.log_wall_time:
        manifest["final"] = {k: v for k, v in manifest["final"].items() if k != "seconds"}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    write_metrics_csv(result.metrics, out / "metrics.csv")
    write_mask(result.artifact, out / "ticket.sltm")
    write_report_json(sparsity_report(result.artifact), out / "report.json")
    write_weights(result.network, out / "weights.sltw")
    return out


def write_aborted_run(exc: TrainingAborted, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"library": "sltgates", "version": __version__, "status": "aborted",
                "error": str(exc), "last_good_epoch": exc.last_good_epoch,
                "config": exc.config.to_dict(), "manifest_hash": manifest_hash(exc.config)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    write_metrics_csv(exc.metrics, out / "metrics.csv", truncated=True)
    return out


# ---------------------------------------------------------------------------
# sweeps


def sweep_threads() -> int:
    try:
        return max(1, int(os.environ.get("SLT_THREADS", "1")))
    except ValueError:
        return 1


def _run_row(config: RunConfig, out_dir: str | None, runner: str) -> dict:
    try:
        if runner == "edgepopup":
            from .baseline import edge_popup_train
            result = edge_popup_train(config)
        else:
            result = train(config)
    except Exception as exc:  # a failed run is recorded, the sweep goes on
        logger.warning("run failed: %s", exc)
        if out_dir and isinstance(exc, TrainingAborted):
            write_aborted_run(exc, out_dir)
        return {"status": f"failed: {type(exc).__name__}: {exc}"}
    if out_dir:
        write_run(result, out_dir)
    f = result.final
    return {"status": "ok", "gate_count": f["total"], "expected_sparsity": f["expected_sparsity"],
            "ticket_sparsity": f["ticket_sparsity"], "val_ticket_acc": f["val_ticket_acc"],
            "test_soft_acc": f["test_soft_acc"], "test_ticket_acc": f["test_ticket_acc"]}


def _dispatch(configs, out_dirs, runner: str, threads: int | None) -> list:
    threads = sweep_threads() if threads is None else threads
    if threads <= 1 or len(configs) <= 1:
        return [_run_row(c, d, runner) for c, d in zip(configs, out_dirs)]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_run_row, configs, out_dirs, [runner] * len(configs)))


def lambda_sweep(base: RunConfig, grid, out_dir=None, threads: int | None = None) -> list:
    """One full run per lambda; rows sorted by lambda."""
    grid = sorted(float(v) for v in grid)
    if not grid:
        raise ConfigError("lambda grid is empty")
    configs = [base.replace(lam=lam).validate() for lam in grid]
    dirs = [str(Path(out_dir) / f"lambda_{i:02d}_{lam:g}") if out_dir else None
            for i, lam in enumerate(grid)]
    rows = _dispatch(configs, dirs, "crbg", threads)
    return [{"lambda": lam, **row} for lam, row in zip(grid, rows)]


def width_sweep(base: RunConfig, multipliers, out_dir=None, threads: int | None = None) -> list:
    """One run per width multiplier (hidden sizes floor(m * size), at least 1)."""
    mults = [float(m) for m in multipliers]
    if not mults:
        raise ConfigError("width list is empty")
    for m in mults:
        if not 0 < m <= 1:
            raise ConfigError(f"width={m} must lie in (0, 1]", field="width")
    configs = [base.replace(width=m) for m in mults]
    dirs = [str(Path(out_dir) / f"width_{i:02d}_{m:g}") if out_dir else None
            for i, m in enumerate(mults)]
    rows = _dispatch(configs, dirs, "crbg", threads)
    return [{"width": m, **row} for m, row in zip(mults, rows)]


def select_lambda(rows, tolerance: float = 0.01) -> float:
    """Largest lambda whose validation ticket accuracy is within ``tolerance`` of the best."""
    ok = [r for r in rows if r.get("status") == "ok"]
    if not ok:
        raise ValueError("no successful runs to select from")
    best = max(r["val_ticket_acc"] for r in ok)
    return max(r["lambda"] for r in ok if r["val_ticket_acc"] >= best - tolerance)


def write_table_csv(rows, path, columns=None) -> None:
    if not rows:
        raise ValueError("no rows to write")
    if columns is None:
        columns = []
        for r in rows:
            columns += [k for k in r if k not in columns]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
