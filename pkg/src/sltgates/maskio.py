"""Binary mask artifacts ("tickets"): SLTM files, sparsity reports, re-application.

SLTM layout (all integers little-endian)::

    b"SLTM"  version:u32  layer_count:u32
    per layer:
        name_len:u16  name:utf-8  rank:u32  dims:u32[rank]  active:u64
        mask bits, row-major, LSB-first within each byte, zero-padded
    provenance trailer:
        method_len:u16  method:utf-8  seed:i64  manifest_sha256:32 bytes
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import ShapeError

MAGIC = b"SLTM"
VERSION = 1
METHODS = ("crbg", "edgepopup", "random")


class MaskFormatError(ValueError):
    """Unreadable or inconsistent SLTM file."""


class MaskCorruptionError(MaskFormatError):
    """Stored active count disagrees with the mask bits."""


@dataclass(frozen=True)
class LayerMask:
    name: str
    mask: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.mask).astype(bool)
        if m.size == 0:
            raise ValueError(f"layer {self.name!r} has no gates")
        object.__setattr__(self, "mask", m)

    @property
    def shape(self) -> tuple:
        return self.mask.shape

    @property
    def total(self) -> int:
        return int(self.mask.size)

    @property
    def active(self) -> int:
        return int(np.count_nonzero(self.mask))

    @property
    def sparsity(self) -> float:
        return 1.0 - self.active / self.total


@dataclass
class MaskArtifact:
    layers: list
    method: str = "crbg"
    seed: int = 0
    manifest_hash: str = ""

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method id {self.method!r}")
        if self.manifest_hash and len(bytes.fromhex(self.manifest_hash)) != 32:
            raise ValueError("manifest_hash must be a sha256 hex digest")

    @classmethod
    def from_masks(cls, names, masks, **provenance) -> "MaskArtifact":
        return cls([LayerMask(n, m) for n, m in zip(names, masks)], **provenance)

    @property
    def total(self) -> int:
        return sum(lm.total for lm in self.layers)

    @property
    def active(self) -> int:
        return sum(lm.active for lm in self.layers)

    @property
    def sparsity(self) -> float:
        return 1.0 - self.active / self.total

    @property
    def masks(self) -> list:
        return [lm.mask for lm in self.layers]

    def __eq__(self, other):
        if not isinstance(other, MaskArtifact):
            return NotImplemented
        return (self.method == other.method and self.seed == other.seed
                and self.manifest_hash == other.manifest_hash
                and len(self.layers) == len(other.layers)
                and all(a.name == b.name and a.shape == b.shape and np.array_equal(a.mask, b.mask)
                        for a, b in zip(self.layers, other.layers)))


def pack_bits(mask: np.ndarray) -> bytes:
    return np.packbits(np.asarray(mask, dtype=bool).reshape(-1), bitorder="little").tobytes()


def encode_mask(artifact: MaskArtifact) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(artifact.layers))]
    for lm in artifact.layers:
        name = lm.name.encode("utf-8")
        out.append(struct.pack("<H", len(name)) + name)
        out.append(struct.pack("<I", len(lm.shape)) + struct.pack(f"<{len(lm.shape)}I", *lm.shape))
        out.append(struct.pack("<Q", lm.active))
        out.append(pack_bits(lm.mask))
    method = artifact.method.encode("utf-8")
    digest = bytes.fromhex(artifact.manifest_hash) if artifact.manifest_hash else bytes(32)
    out.append(struct.pack("<H", len(method)) + method + struct.pack("<q", artifact.seed) + digest)
    return b"".join(out)


def decode_mask(buf: bytes, source: str = "<bytes>") -> MaskArtifact:
    if buf[:4] != MAGIC:
        raise MaskFormatError(f"{source}: bad magic {buf[:4]!r}")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise MaskFormatError(f"{source}: version {version} not supported (expected {VERSION})")
        pos = 12
        layers = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            name = buf[pos + 2:pos + 2 + nlen].decode("utf-8")
            pos += 2 + nlen
            (rank,) = struct.unpack_from("<I", buf, pos)
            dims = struct.unpack_from(f"<{rank}I", buf, pos + 4)
            pos += 4 + 4 * rank
            (active,) = struct.unpack_from("<Q", buf, pos)
            pos += 8
            n = int(np.prod(dims))
            nbytes = (n + 7) // 8
            if pos + nbytes > len(buf):
                raise MaskFormatError(f"{source}: truncated bits for layer {name!r}")
            packed = np.frombuffer(buf, dtype=np.uint8, count=nbytes, offset=pos)
            bits = np.unpackbits(packed, bitorder="little")
            if bits[n:].any():
                raise MaskCorruptionError(f"{source}: non-zero padding bits in layer {name!r}")
            mask = bits[:n].astype(bool).reshape(dims)
            if int(mask.sum()) != active:
                raise MaskCorruptionError(f"{source}: layer {name!r} stores active={active} "
                                          f"but its bits hold {int(mask.sum())}")
            layers.append(LayerMask(name, mask))
            pos += nbytes
        (mlen,) = struct.unpack_from("<H", buf, pos)
        method = buf[pos + 2:pos + 2 + mlen].decode("utf-8")
        pos += 2 + mlen
        (seed,) = struct.unpack_from("<q", buf, pos)
        digest = buf[pos + 8:pos + 40]
        pos += 40
    except (struct.error, UnicodeDecodeError) as exc:
        raise MaskFormatError(f"{source}: malformed file ({exc})") from None
    if len(digest) != 32 or pos != len(buf):
        raise MaskFormatError(f"{source}: bad trailer")
    h = digest.hex() if any(digest) else ""
    return MaskArtifact(layers, method=method, seed=seed, manifest_hash=h)


def write_mask(artifact: MaskArtifact, path) -> None:
    Path(path).write_bytes(encode_mask(artifact))


def read_mask(path) -> MaskArtifact:
    return decode_mask(Path(path).read_bytes(), str(path))


# ---------------------------------------------------------------------------
# reporting


def sparsity_report(artifact: MaskArtifact) -> dict:
    rows = [{"layer": lm.name, "total": lm.total, "active": lm.active,
             "sparsity_pct": 100.0 * lm.sparsity} for lm in artifact.layers]
    return {
        "layers": rows,
        "global": {"total": artifact.total, "active": artifact.active,
                   "sparsity_pct": 100.0 * artifact.sparsity},
        "method": artifact.method,
        "seed": artifact.seed,
        "manifest_hash": artifact.manifest_hash,
    }


def write_report_json(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def write_report_csv(report: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "total", "active", "sparsity_pct"])
        for r in report["layers"]:
            w.writerow([r["layer"], r["total"], r["active"], f"{r['sparsity_pct']:.6f}"])
        g = report["global"]
        w.writerow(["__global__", g["total"], g["active"], f"{g['sparsity_pct']:.6f}"])


# ---------------------------------------------------------------------------
# re-application


class MaskedNetwork:
    """A network evaluated with a fixed binary mask over its frozen weights."""

    def __init__(self, network, artifact: MaskArtifact):
        self.network = network
        self.artifact = artifact

    def forward(self, x):
        return self.network.forward_masked(x, self.artifact.masks)

    __call__ = forward


def apply_mask(network, artifact: MaskArtifact) -> MaskedNetwork:
    if len(artifact.layers) != len(network.layers):
        raise ShapeError(f"artifact has {len(artifact.layers)} layers, "
                         f"network has {len(network.layers)}")
    for layer, lm in zip(network.layers, artifact.layers):
        if lm.shape != layer.shape:
            raise ShapeError(f"layer {layer.name!r}: mask shape {lm.shape} "
                             f"!= weight shape {layer.shape}")
    return MaskedNetwork(network, artifact)
