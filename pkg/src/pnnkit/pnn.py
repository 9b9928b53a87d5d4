"""Progressive neural network.

Hidden layer ``n`` reads the input spectrum concatenated with the outputs of
every earlier hidden layer, so its input width is ``K + (n-1)*H_d`` and the
feature set grows by ``H_d`` per layer. Each hidden block is
Linear -> ReLU -> BatchNorm; the classifier reads ``X`` plus all ``D`` block
outputs and ends in a softmax.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from pnnkit.errors import ConfigError, FormatError
from pnnkit.network import DenseNet, init_batchnorm, init_linear

MODEL_MAGIC = b"PNNMDL1\x00"
FORMAT_VERSION = 1

# Feed-forward wiring variants used by the ablation study.
WIRINGS = ("full", "no_zh", "no_x", "neither")
_DTYPES = {"float64": 8, "float32": 4}


@dataclass(frozen=True)
class PNNConfig:
    k: int
    hidden: int = 100
    depth: int = 6
    classes: int = 2
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.1
    wiring: str = "full"
    dtype: str = "float64"

    def __post_init__(self):
        if self.k < 1 or self.hidden < 1 or self.depth < 1:
            raise ConfigError(f"K, H_d and depth must be >= 1, got {self.k}, {self.hidden}, {self.depth}")
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if not self.bn_epsilon > 0:
            raise ConfigError("bn_epsilon must be positive")
        if not 0 < self.bn_momentum < 1:
            raise ConfigError("bn_momentum must lie in (0, 1)")
        if self.wiring not in WIRINGS:
            raise ConfigError(f"unknown wiring {self.wiring!r}; expected one of {WIRINGS}")
        if self.dtype not in _DTYPES:
            raise ConfigError(f"dtype must be one of {tuple(_DTYPES)}")


def layer_sources(wiring: str, depth: int) -> list[list[int]]:
    """Source indices read by layers 1..depth+1 (0 is X, j is hidden layer j)."""
    table = []
    for n in range(1, depth + 2):
        if n == 1:
            table.append([0])
        elif wiring == "full":
            table.append(list(range(n)))
        elif wiring == "no_zh":
            table.append([0, n - 1])
        elif wiring == "no_x":
            table.append(list(range(1, n)))
        elif wiring == "neither":
            table.append([n - 1])
        else:
            raise ConfigError(f"unknown wiring {wiring!r}")
    return table


class PNNModel(DenseNet):
    def __init__(self, config: PNNConfig, hidden, classifier):
        self.config = config
        super().__init__(config.k, hidden, classifier, layer_sources(config.wiring, config.depth))


def layer_widths(config: PNNConfig) -> list[int]:
    """Input width of hidden layers 1..D followed by the classifier's."""
    widths = [config.k] + [config.hidden] * config.depth
    return [sum(widths[j] for j in src) for src in layer_sources(config.wiring, config.depth)]


def init(config: PNNConfig, seed: int = 0) -> PNNModel:
    """Uniform ``+-sqrt(6/fan_in)`` weights, zero biases, identity batch norm."""
    rng = np.random.default_rng(seed)
    dtype = np.dtype(config.dtype)
    widths = layer_widths(config)
    hidden = []
    for n in range(config.depth):
        lin = init_linear(rng, widths[n], config.hidden, dtype)
        bn = init_batchnorm(config.hidden, config.bn_epsilon, config.bn_momentum, dtype)
        hidden.append((lin, bn))
    classifier = init_linear(rng, widths[-1], config.classes, dtype)
    return PNNModel(config, hidden, classifier)


def layer_input(model: PNNModel, n: int, x, prior_outputs):
    return model.layer_input(n, np.asarray(x), [np.asarray(p) for p in prior_outputs])


def forward(model: PNNModel, x, mode: str = "infer"):
    return model.forward(x, mode)


def backward(model: PNNModel, cache, labels):
    return model.backward(cache, labels)


def param_count(config: PNNConfig) -> dict[str, int]:
    """Exact parameter breakdown.

    For the full wiring ``hidden_weights = D*K*H_d + D(D-1)/2 * H_d**2``,
    i.e. ``6*K*H_d + 15*H_d**2`` at depth 6 (9,980,400 for K=16384, H_d=100).
    Batch-norm running statistics are buffers and are reported separately.
    """
    widths = layer_widths(config)
    h, d = config.hidden, config.depth
    counts = {
        "hidden_weights": sum(widths[:d]) * h,
        "hidden_biases": d * h,
        "bn_params": 2 * d * h,
        "classifier_params": widths[-1] * config.classes + config.classes,
    }
    counts["total"] = sum(counts.values())
    counts["bn_buffers"] = 2 * d * h
    return counts


# -- container ----------------------------------------------------------------

_PREFIX = struct.Struct("<8sBB")
_PNN_BLOCK = struct.Struct("<QQQQddB")
_LEN = struct.Struct("<Q")


def write_tensors(fh, tensors, dtype: np.dtype):
    le = dtype.newbyteorder("<")
    for t in tensors:
        flat = np.ascontiguousarray(t, dtype=le).reshape(-1)
        fh.write(_LEN.pack(flat.size))
        fh.write(flat.tobytes())


def read_tensors(raw: bytes, offset: int, shapes, dtype: np.dtype, path):
    """Parse length-prefixed tensors, checking the total size before decoding any of them."""
    itemsize = dtype.itemsize
    need = offset + sum(_LEN.size + int(np.prod(s)) * itemsize for s in shapes)
    if len(raw) != need:
        raise FormatError(
            f"{path}: config header implies {need} bytes but file has {len(raw)}",
            min(len(raw), need),
        )
    out = []
    le = dtype.newbyteorder("<")
    for shape in shapes:
        (count,) = _LEN.unpack_from(raw, offset)
        expected = int(np.prod(shape))
        if count != expected:
            raise FormatError(f"{path}: tensor length {count} != expected {expected}", offset)
        offset += _LEN.size
        arr = np.frombuffer(raw, dtype=le, count=count, offset=offset).astype(dtype).reshape(shape)
        out.append(arr)
        offset += count * itemsize
    return out


def read_prefix(raw: bytes, magic: bytes, path):
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{path}: truncated header", len(raw))
    got, version, width = _PREFIX.unpack_from(raw, 0)
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}", 8)
    dtypes = {v: k for k, v in _DTYPES.items()}
    if width not in dtypes:
        raise FormatError(f"{path}: unknown value width {width}", 9)
    return np.dtype(dtypes[width]), _PREFIX.size


def tensor_shapes(model: DenseNet):
    return [t.shape for t in model.tensors()]


def assign_tensors(model: DenseNet, tensors):
    for dst, src in zip(model.tensors(), tensors):
        dst[...] = src
    model.mark_updated()


def to_bytes(model: PNNModel) -> bytes:
    cfg = model.config
    dtype = np.dtype(cfg.dtype)
    fh = io.BytesIO()
    fh.write(_PREFIX.pack(MODEL_MAGIC, FORMAT_VERSION, dtype.itemsize))
    fh.write(_PNN_BLOCK.pack(cfg.k, cfg.hidden, cfg.depth, cfg.classes,
                             cfg.bn_epsilon, cfg.bn_momentum, WIRINGS.index(cfg.wiring)))
    write_tensors(fh, model.tensors(), dtype)
    return fh.getvalue()


def save_model(model: PNNModel, path) -> None:
    Path(path).write_bytes(to_bytes(model))


def load_model(path) -> PNNModel:
    raw = Path(path).read_bytes()
    dtype, offset = read_prefix(raw, MODEL_MAGIC, path)
    if len(raw) < offset + _PNN_BLOCK.size:
        raise FormatError(f"{path}: truncated config block", len(raw))
    k, h, d, c, eps, mom, wiring = _PNN_BLOCK.unpack_from(raw, offset)
    if wiring >= len(WIRINGS):
        raise FormatError(f"{path}: unknown wiring code {wiring}", offset + _PNN_BLOCK.size - 1)
    try:
        config = PNNConfig(k, h, d, c, eps, mom, WIRINGS[wiring], dtype.name)
    except ConfigError as exc:
        raise FormatError(f"{path}: invalid config block: {exc}", offset) from exc
    offset += _PNN_BLOCK.size
    model = init(config, 0)
    tensors = read_tensors(raw, offset, tensor_shapes(model), dtype, path)
    assign_tensors(model, tensors)
    return model
