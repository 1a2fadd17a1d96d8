"""Binary ``.ilck`` checkpoint format.

Layout (all integers little-endian)::

    "ILCK"                      4-byte magic
    format_version              u32
    header_length               u64
    header                      UTF-8 ``key=value\\n`` lines, sorted by key
    tensor*                     [name_len u32][name][ndims u32][dims u64...][f64 values, row-major]
    crc32                       u32, IEEE CRC-32 of every preceding byte

Tensors appear in a fixed order: ``weights.<i>``, ``biases.<i>``,
``velocity.weights.<i>``, ``velocity.biases.<i>``, ``rng_state``,
``metric_history``. ``rng_state`` carries raw u64 words in its 8-byte
value slots. See ``docs/FORMAT.md`` for the full field list.
"""

from __future__ import annotations

import enum
import math
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .losses import LossKind
from .mlp import ModelSpec, ModelState, OptimizerConfig, OptimizerState

MAGIC = b"ILCK"
FORMAT_VERSION = 1
FILE_EXTENSION = ".ilck"

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_MAX_NDIMS = 8


class Verdict(enum.Enum):
    VALID = "Valid"
    BAD_MAGIC = "BadMagic"
    BAD_VERSION = "BadVersion"
    CHECKSUM_MISMATCH = "ChecksumMismatch"
    TRUNCATED = "Truncated"

    def __str__(self) -> str:
        return self.value


class CheckpointError(ValueError):
    verdict: Verdict | None = None


class BadMagic(CheckpointError):
    verdict = Verdict.BAD_MAGIC


class BadVersion(CheckpointError):
    verdict = Verdict.BAD_VERSION


class ChecksumMismatch(CheckpointError):
    verdict = Verdict.CHECKSUM_MISMATCH


class Truncated(CheckpointError):
    verdict = Verdict.TRUNCATED


class StructuralError(CheckpointError):
    """Checksum is fine but the content does not describe a snapshot."""


_VERDICT_ERRORS = {
    Verdict.BAD_MAGIC: BadMagic,
    Verdict.BAD_VERSION: BadVersion,
    Verdict.CHECKSUM_MISMATCH: ChecksumMismatch,
    Verdict.TRUNCATED: Truncated,
}


@dataclass
class CheckpointSnapshot:
    """Everything needed to continue a run bit-for-bit."""

    epoch: int
    global_step: int
    model: ModelState
    optimizer: OptimizerState
    optimizer_config: OptimizerConfig
    rng_state: tuple[int, ...]
    epoch_shuffle_seed: int
    step_in_epoch: int
    metric_history: list[tuple[int, float, float]] = field(default_factory=list)
    best_metric: float | None = None
    best_epoch: int | None = None
    monitored: str = "loss"
    shuffle_seed: int = 0
    batch_size: int = 1
    dataset_size: int = 1
    wall_time_unix_seconds: int = 0
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        self.rng_state = tuple(int(w) for w in self.rng_state)
        self.metric_history = [(int(e), float(l), float(a)) for e, l, a in self.metric_history]
        if self.batch_size < 1 or self.dataset_size < 1:
            raise ValueError("batch_size and dataset_size must be positive")
        if not 0 <= self.step_in_epoch < self.steps_per_epoch:
            raise ValueError(
                f"step_in_epoch {self.step_in_epoch} outside [0, {self.steps_per_epoch})"
            )
        epochs = [e for e, _, _ in self.metric_history]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("metric_history epochs must be strictly increasing")
        if self.monitored not in ("loss", "accuracy"):
            raise ValueError(f"monitored must be 'loss' or 'accuracy', got {self.monitored!r}")

    @property
    def steps_per_epoch(self) -> int:
        return -(-self.dataset_size // self.batch_size)


def _f64_bits(x: float | None) -> bytes | None:
    return None if x is None else struct.pack("<d", x)


def snapshots_equal(a: CheckpointSnapshot, b: CheckpointSnapshot) -> bool:
    """Bitwise equality on every field except the wall-clock timestamp."""
    scalars = (
        "format_version", "epoch", "global_step", "rng_state", "epoch_shuffle_seed",
        "step_in_epoch", "best_epoch", "monitored", "shuffle_seed", "batch_size",
        "dataset_size", "optimizer_config",
    )
    if any(getattr(a, k) != getattr(b, k) for k in scalars):
        return False
    if _f64_bits(a.best_metric) != _f64_bits(b.best_metric):
        return False
    if _history_array(a.metric_history).tobytes() != _history_array(b.metric_history).tobytes():
        return False
    return a.model.bitwise_equal(b.model) and a.optimizer.bitwise_equal(b.optimizer)


def _history_array(history) -> np.ndarray:
    arr = np.array([[float(e), l, acc] for e, l, acc in history], dtype="<f8")
    return arr.reshape(len(history), 3)


def _fmt_float(x: float) -> str:
    return repr(float(x))


def _header_fields(s: CheckpointSnapshot) -> dict[str, str]:
    spec = s.model.spec
    cfg = s.optimizer_config
    return {
        "activations": ",".join(spec.activations),
        "batch_size": str(s.batch_size),
        "best_epoch": "none" if s.best_epoch is None else str(s.best_epoch),
        "best_metric": "none" if s.best_metric is None else _fmt_float(s.best_metric),
        "dataset_size": str(s.dataset_size),
        "epoch": str(s.epoch),
        "epoch_shuffle_seed": str(s.epoch_shuffle_seed),
        "global_step": str(s.global_step),
        "huber_delta": _fmt_float(cfg.loss.delta),
        "init_seed": str(spec.init_seed),
        "layer_sizes": ",".join(str(n) for n in spec.layer_sizes),
        "learning_rate": _fmt_float(cfg.learning_rate),
        "loss": cfg.loss.name,
        "momentum": _fmt_float(cfg.momentum),
        "monitored": s.monitored,
        "output_activation": spec.output_activation,
        "shuffle_seed": str(s.shuffle_seed),
        "step_count": str(s.optimizer.step_count),
        "step_in_epoch": str(s.step_in_epoch),
        "wall_time": str(s.wall_time_unix_seconds),
    }


def _tensor(name: str, arr: np.ndarray) -> bytes:
    encoded = name.encode("utf-8")
    parts = [_U32.pack(len(encoded)), encoded, _U32.pack(arr.ndim)]
    parts.extend(_U64.pack(d) for d in arr.shape)
    parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def encode_checkpoint(s: CheckpointSnapshot) -> bytes:
    header = "".join(f"{k}={v}\n" for k, v in sorted(_header_fields(s).items())).encode("utf-8")
    out = [MAGIC, _U32.pack(s.format_version), _U64.pack(len(header)), header]
    n = s.model.spec.n_layers
    for i in range(n):
        out.append(_tensor(f"weights.{i}", s.model.weights[i].astype("<f8")))
    for i in range(n):
        out.append(_tensor(f"biases.{i}", s.model.biases[i].astype("<f8")))
    for i in range(n):
        out.append(_tensor(f"velocity.weights.{i}", s.optimizer.weight_velocity[i].astype("<f8")))
    for i in range(n):
        out.append(_tensor(f"velocity.biases.{i}", s.optimizer.bias_velocity[i].astype("<f8")))
    out.append(_tensor("rng_state", np.array(s.rng_state, dtype="<u8")))
    out.append(_tensor("metric_history", _history_array(s.metric_history)))
    body = b"".join(out)
    return body + _U32.pack(zlib.crc32(body) & 0xFFFFFFFF)


def _walk_tensors(data: bytes, pos: int, end: int):
    """Yield ``(name_bytes, dims, value_offset, value_length)``; raise Truncated on overrun."""
    while pos < end:
        if pos + 4 > end:
            raise Truncated("tensor name length runs past the payload")
        (name_len,) = _U32.unpack_from(data, pos)
        pos += 4
        if pos + name_len + 4 > end:
            raise Truncated("tensor name runs past the payload")
        name = data[pos : pos + name_len]
        pos += name_len
        (ndims,) = _U32.unpack_from(data, pos)
        pos += 4
        if ndims > _MAX_NDIMS or pos + 8 * ndims > end:
            raise Truncated("tensor dims run past the payload")
        dims = tuple(_U64.unpack_from(data, pos + 8 * k)[0] for k in range(ndims))
        pos += 8 * ndims
        size = 8 * math.prod(dims)
        if pos + size > end:
            raise Truncated("tensor values run past the payload")
        yield name, dims, pos, size
        pos += size


def _classify(data: bytes) -> tuple[Verdict, str]:
    if len(data) < 4:
        return Verdict.TRUNCATED, f"only {len(data)} bytes"
    if data[:4] != MAGIC:
        return Verdict.BAD_MAGIC, f"magic is {data[:4].hex()}"
    if len(data) < 8:
        return Verdict.TRUNCATED, "stream ends inside the version field"
    (version,) = _U32.unpack_from(data, 4)
    if version != FORMAT_VERSION:
        return Verdict.BAD_VERSION, f"format version {version}, expected {FORMAT_VERSION}"
    end = len(data) - 4
    if end < 16:
        return Verdict.TRUNCATED, "stream ends inside the header length"
    (header_len,) = _U64.unpack_from(data, 8)
    if 16 + header_len > end:
        return Verdict.TRUNCATED, "header runs past the stream"
    try:
        for _ in _walk_tensors(data, 16 + header_len, end):
            pass
    except Truncated as exc:
        return Verdict.TRUNCATED, str(exc)
    (stored,) = _U32.unpack_from(data, end)
    actual = zlib.crc32(data[:end]) & 0xFFFFFFFF
    if stored != actual:
        return Verdict.CHECKSUM_MISMATCH, f"crc32 {stored:08x} stored, {actual:08x} computed"
    return Verdict.VALID, "ok"


def verify_checksum(data: bytes) -> Verdict:
    """Classify a byte stream; never raises."""
    return _classify(bytes(data))[0]


def _parse_header(raw: bytes) -> dict[str, str]:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise StructuralError(f"header is not UTF-8: {exc}") from None
    fields: dict[str, str] = {}
    for line in text.splitlines():
        key, sep, value = line.partition("=")
        if not sep or key in fields:
            raise StructuralError(f"bad header line {line!r}")
        fields[key] = value
    return fields


def read_header(data: bytes) -> dict[str, str]:
    """Verified header fields of a checkpoint, as text."""
    data = bytes(data)
    verdict, why = _classify(data)
    if verdict is not Verdict.VALID:
        raise _VERDICT_ERRORS[verdict](why)
    (header_len,) = _U64.unpack_from(data, 8)
    return _parse_header(data[16 : 16 + header_len])


def _optional(value: str, conv):
    return None if value == "none" else conv(value)


def _int_list(value: str) -> tuple[int, ...]:
    return tuple(int(v) for v in value.split(",")) if value else ()


def decode_checkpoint(data: bytes) -> CheckpointSnapshot:
    data = bytes(data)
    verdict, why = _classify(data)
    if verdict is not Verdict.VALID:
        raise _VERDICT_ERRORS[verdict](why)
    (header_len,) = _U64.unpack_from(data, 8)
    h = _parse_header(data[16 : 16 + header_len])
    tensors: dict[str, np.ndarray] = {}
    for name, dims, offset, size in _walk_tensors(data, 16 + header_len, len(data) - 4):
        key = name.decode("utf-8", errors="replace")
        dtype = "<u8" if key == "rng_state" else "<f8"
        tensors[key] = np.frombuffer(data, dtype=dtype, count=size // 8, offset=offset).reshape(dims)

    try:
        spec = ModelSpec(
            layer_sizes=_int_list(h["layer_sizes"]),
            activations=tuple(a for a in h["activations"].split(",") if a),
            output_activation=h["output_activation"],
            init_seed=int(h["init_seed"]),
        )
        n = spec.n_layers

        def take(name: str, shape: tuple[int, ...]) -> np.ndarray:
            arr = tensors[name]
            if arr.shape != shape:
                raise StructuralError(f"tensor {name} has shape {arr.shape}, expected {shape}")
            return arr.astype(np.float64)

        shapes = [(o, i) for i, o in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:])]
        weights = [take(f"weights.{i}", shapes[i]) for i in range(n)]
        biases = [take(f"biases.{i}", (shapes[i][0],)) for i in range(n)]
        vw = [take(f"velocity.weights.{i}", shapes[i]) for i in range(n)]
        vb = [take(f"velocity.biases.{i}", (shapes[i][0],)) for i in range(n)]
        rng = tensors["rng_state"]
        history = tensors["metric_history"]
        if rng.ndim != 1 or history.ndim != 2 or history.shape[1] != 3:
            raise StructuralError("rng_state or metric_history has the wrong rank")
        cfg = OptimizerConfig(
            learning_rate=float(h["learning_rate"]),
            momentum=float(h["momentum"]),
            loss=LossKind(h["loss"], float(h["huber_delta"])),
        )
        return CheckpointSnapshot(
            epoch=int(h["epoch"]),
            global_step=int(h["global_step"]),
            model=ModelState(weights, biases, spec),
            optimizer=OptimizerState(vw, vb, int(h["step_count"])),
            optimizer_config=cfg,
            rng_state=tuple(int(w) for w in rng),
            epoch_shuffle_seed=int(h["epoch_shuffle_seed"]),
            step_in_epoch=int(h["step_in_epoch"]),
            metric_history=[(int(e), float(l), float(a)) for e, l, a in history.astype(np.float64)],
            best_metric=_optional(h["best_metric"], float),
            best_epoch=_optional(h["best_epoch"], int),
            monitored=h["monitored"],
            shuffle_seed=int(h["shuffle_seed"]),
            batch_size=int(h["batch_size"]),
            dataset_size=int(h["dataset_size"]),
            wall_time_unix_seconds=int(h["wall_time"]),
        )
    except StructuralError:
        raise
    except (KeyError, ValueError) as exc:
        raise StructuralError(f"malformed checkpoint content: {exc!r}") from None
