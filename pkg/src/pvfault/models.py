"""The four supported architectures, model assembly, and checkpoint I/O.

Architecture table (stride 1, same-padding convs; 2x2/stride-2 pools):

  proposed-3conv   3 blocks of conv->BN->ReLU->pool, filters 16/32/64, 3x3
  ablated-2conv    proposed-3conv minus the final 64-filter block
  espinosa-binary  4 blocks of conv->ReLU->pool (no BN), filters 8/16/32/64, 3x3
  espinosa-multi   5 blocks of conv->BN->ReLU->pool, filters 8/16/32/64/64, 5x5

Every architecture ends in flatten -> dense(num_classes) -> softmax.

Checkpoint file format (version 1, all integers little-endian):

  magic          8 bytes  b"PVFAULT\\0"
  version        u32
  total_size     u64      expected file length in bytes, incl. trailing CRC
  arch           u16 length + UTF-8 bytes
  num_classes    u32
  input_shape    3 x u32  (C, H, W)
  tensor_count   u32
  tensor table   per tensor: u16 name length + UTF-8 name, u8 ndim, ndim x u32 dims
  tensor data    raw little-endian float32, table order
  crc32          u32      zlib.crc32 of every preceding byte

Parameters, batch-norm running statistics, and the training-split
normalization constants ("norm.mean"/"norm.std") are all stored, so a loaded
checkpoint reproduces inference bit-for-bit.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import (
    ArchMismatchError,
    CheckpointChecksumError,
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigError,
    ShapeError,
)
from .layers import BatchNorm2d, Conv2d, Dense, Flatten, Layer, MaxPool2d, ReLU, softmax

ARCH_IDS = ("proposed-3conv", "ablated-2conv", "espinosa-binary", "espinosa-multi")

_ARCH_TABLE = {
    "proposed-3conv": dict(filters=(16, 32, 64), kernel=3, batchnorm=True),
    "ablated-2conv": dict(filters=(16, 32), kernel=3, batchnorm=True),
    "espinosa-binary": dict(filters=(8, 16, 32, 64), kernel=3, batchnorm=False),
    "espinosa-multi": dict(filters=(8, 16, 32, 64, 64), kernel=5, batchnorm=True),
}

CHECKPOINT_MAGIC = b"PVFAULT\x00"
CHECKPOINT_VERSION = 1


class Model:
    """An ordered stack of named layers ending in a dense head; forward yields
    class probabilities (softmax applied to the final logits)."""

    def __init__(self, arch, num_classes, input_shape, named_layers, dtype):
        self.arch = arch
        self.num_classes = int(num_classes)
        self.input_shape = tuple(int(v) for v in input_shape)
        self.named_layers: list[tuple[str, Layer]] = named_layers
        self.dtype = np.dtype(dtype)
        self.training = False
        channels = self.input_shape[0]
        # per-channel stats of the training split; identity until train() sets them
        self.norm_mean = np.zeros(channels, dtype=np.float32)
        self.norm_std = np.ones(channels, dtype=np.float32)

    @property
    def layers(self):
        return [layer for _, layer in self.named_layers]

    def forward(self, x: np.ndarray, train: bool | None = None) -> np.ndarray:
        """Run a batch [N,C,H,W] through the stack; returns probabilities [N,K]."""
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise ShapeError(
                f"model {self.arch} expects batches of shape [N,{','.join(map(str, self.input_shape))}], "
                f"got {x.shape}"
            )
        mode = self.training if train is None else train
        for _, layer in self.named_layers:
            x = layer.forward(x, train=mode)
        return softmax(x)

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        """Backpropagate a loss gradient w.r.t. the logits; fills layer grads."""
        g = grad_logits
        for _, layer in reversed(self.named_layers):
            g = layer.backward(g)
        return g

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        return [
            (f"{name}.{pname}", arr)
            for name, layer in self.named_layers
            for pname, arr in layer.params().items()
        ]

    def grad_items(self) -> list[tuple[str, np.ndarray]]:
        return [
            (f"{name}.{pname}", arr)
            for name, layer in self.named_layers
            for pname, arr in layer.grads().items()
        ]

    def buffer_items(self) -> list[tuple[str, np.ndarray]]:
        items = [
            (f"{name}.{bname}", arr)
            for name, layer in self.named_layers
            for bname, arr in layer.buffers().items()
        ]
        items.append(("norm.mean", self.norm_mean))
        items.append(("norm.std", self.norm_std))
        return items

    def param_dict(self) -> dict[str, np.ndarray]:
        return dict(self.param_items())

    def grad_dict(self) -> dict[str, np.ndarray]:
        return dict(self.grad_items())

    def count_parameters(self) -> int:
        return sum(arr.size for _, arr in self.param_items())

    def conv_stack_parameters(self) -> int:
        """Parameter count excluding the dense classifier head."""
        return sum(arr.size for name, arr in self.param_items() if not name.startswith("fc."))


def build_model(arch, num_classes, input_shape=(3, 128, 128), seed=0, dtype=np.float32) -> Model:
    """Materialize one of the four architectures with deterministic init.

    The spatial extents of ``input_shape`` must survive the pooling chain
    (every pool needs at least a 2x2 input); too-small inputs are rejected
    here rather than at forward time.
    """
    if arch not in _ARCH_TABLE:
        raise ConfigError(f"unknown architecture '{arch}'; expected one of {', '.join(ARCH_IDS)}")
    if num_classes not in (2, 4):
        raise ConfigError(f"num_classes must be 2 or 4, got {num_classes!r}")
    input_shape = tuple(int(v) for v in input_shape)
    if len(input_shape) != 3 or min(input_shape) < 1:
        raise ConfigError(f"input_shape must be three positive extents (C,H,W), got {input_shape}")

    spec = _ARCH_TABLE[arch]
    kernel = spec["kernel"]
    rng = np.random.default_rng(seed)

    named: list[tuple[str, Layer]] = []
    shape = input_shape
    in_channels = input_shape[0]
    try:
        for i, filters in enumerate(spec["filters"], start=1):
            conv = Conv2d(in_channels, filters, kernel, rng, padding=kernel // 2, dtype=dtype)
            named.append((f"conv{i}", conv))
            shape = conv.out_shape(shape)
            if spec["batchnorm"]:
                bn = BatchNorm2d(filters, dtype=dtype)
                named.append((f"bn{i}", bn))
                shape = bn.out_shape(shape)
            named.append((f"relu{i}", ReLU()))
            pool = MaxPool2d(2, 2)
            named.append((f"pool{i}", pool))
            shape = pool.out_shape(shape)
            in_channels = filters
        flatten = Flatten()
        named.append(("flatten", flatten))
        shape = flatten.out_shape(shape)
        fc = Dense(shape[0], num_classes, rng, dtype=dtype)
        named.append(("fc", fc))
    except ShapeError as exc:
        raise ConfigError(
            f"input shape {input_shape} is too small for architecture '{arch}': {exc}"
        ) from exc

    return Model(arch, num_classes, input_shape, named, dtype)


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _checkpoint_tensors(model: Model) -> list[tuple[str, np.ndarray]]:
    return model.param_items() + model.buffer_items()


def save_checkpoint(model: Model, path) -> None:
    """Write the model to ``path`` in the version-1 binary format (float32)."""
    body = bytearray()
    body += _pack_str(model.arch)
    body += struct.pack("<I", model.num_classes)
    body += struct.pack("<3I", *model.input_shape)

    tensors = _checkpoint_tensors(model)
    body += struct.pack("<I", len(tensors))
    data = bytearray()
    for name, arr in tensors:
        body += _pack_str(name)
        body += struct.pack("<B", arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        data += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    body += data

    header_size = len(CHECKPOINT_MAGIC) + 4 + 8
    total = header_size + len(body) + 4
    blob = CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION) + struct.pack("<Q", total)
    blob += bytes(body)
    blob += struct.pack("<I", zlib.crc32(blob))
    Path(path).write_bytes(blob)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointTruncatedError(
                f"checkpoint ends at byte {len(self.buf)} but {self.pos + n} bytes are needed"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u16()).decode("utf-8")


def load_checkpoint(path, expect_arch: str | None = None) -> Model:
    """Read a checkpoint back into a freshly built model, bit-for-bit.

    Raises a distinct error per failure mode: bad magic / structure
    (CheckpointFormatError), unsupported version (CheckpointVersionError),
    short file (CheckpointTruncatedError), CRC mismatch
    (CheckpointChecksumError), and, when ``expect_arch`` is given, a
    different stored architecture (ArchMismatchError).
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointFormatError(f"checkpoint not found: {path}")
    buf = path.read_bytes()
    r = _Reader(buf)

    if len(buf) < len(CHECKPOINT_MAGIC):
        raise CheckpointTruncatedError(f"file is only {len(buf)} bytes long")
    if r.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path} is not a model checkpoint (bad magic)")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {version} not supported (expected {CHECKPOINT_VERSION})"
        )
    total = r.u64()
    if len(buf) < total:
        raise CheckpointTruncatedError(f"file is {len(buf)} bytes but header declares {total}")
    if len(buf) > total:
        raise CheckpointFormatError(f"file has {len(buf) - total} trailing bytes beyond {total}")

    (stored_crc,) = struct.unpack("<I", buf[total - 4 : total])
    actual_crc = zlib.crc32(buf[: total - 4])
    if stored_crc != actual_crc:
        raise CheckpointChecksumError(
            f"CRC-32 mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )

    arch = r.string()
    if expect_arch is not None and arch != expect_arch:
        raise ArchMismatchError(f"checkpoint holds '{arch}' but '{expect_arch}' was expected")
    if arch not in _ARCH_TABLE:
        raise CheckpointFormatError(f"checkpoint holds unknown architecture '{arch}'")
    num_classes = r.u32()
    if num_classes not in (2, 4):
        raise CheckpointFormatError(f"checkpoint holds invalid class count {num_classes}")
    input_shape = struct.unpack("<3I", r.take(12))

    count = r.u32()
    table = []
    for _ in range(count):
        name = r.string()
        ndim = r.u8()
        dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        table.append((name, dims))

    model = build_model(arch, num_classes, input_shape, seed=0, dtype=np.float32)
    targets = dict(_checkpoint_tensors(model))
    if set(n for n, _ in table) != set(targets):
        raise CheckpointFormatError(
            f"checkpoint tensor names do not match architecture '{arch}'"
        )
    for name, dims in table:
        arr = targets[name]
        if tuple(dims) != arr.shape:
            raise CheckpointFormatError(
                f"tensor '{name}' has shape {dims} in file but {arr.shape} in model"
            )
        n_bytes = int(np.prod(dims, dtype=np.int64)) * 4
        values = np.frombuffer(r.take(n_bytes), dtype="<f4").reshape(dims)
        if not np.isfinite(values).all():
            raise CheckpointFormatError(f"tensor '{name}' contains non-finite values")
        arr[...] = values  # writes in place, norm stats included

    if r.pos != total - 4:
        raise CheckpointFormatError(
            f"tensor table accounts for {r.pos} bytes but data region ends at {total - 4}"
        )
    return model
