"""Vanilla DNN baseline whose hidden widths shrink geometrically.

Same block stack as the progressive net (Linear -> ReLU -> BatchNorm, then a
softmax classifier) and the same initialisation, but a plain chain: each
layer sees only the previous layer's output.
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from pnnkit.errors import ConfigError, FormatError
from pnnkit.network import DenseNet, init_batchnorm, init_linear
from pnnkit.pnn import (
    FORMAT_VERSION,
    _DTYPES,
    _PREFIX,
    assign_tensors,
    read_prefix,
    read_tensors,
    tensor_shapes,
    write_tensors,
)

MODEL_MAGIC = b"VDNMDL1\x00"


@dataclass(frozen=True)
class VDNNConfig:
    k: int
    depth: int = 6
    classes: int = 2
    shrink: float = 0.5
    min_width: int = 1
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.1
    dtype: str = "float64"

    def __post_init__(self):
        if self.k < 1 or self.depth < 1:
            raise ConfigError(f"K and depth must be >= 1, got {self.k}, {self.depth}")
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if not 0 < self.shrink <= 1:
            raise ConfigError(f"shrink must lie in (0, 1], got {self.shrink}")
        if self.min_width < 1:
            raise ConfigError("min_width must be >= 1")
        if not 0 < self.bn_momentum < 1 or not self.bn_epsilon > 0:
            raise ConfigError("invalid batch-norm settings")
        if self.dtype not in _DTYPES:
            raise ConfigError(f"dtype must be one of {tuple(_DTYPES)}")
        if self.hidden_widths()[0] < 1:
            raise ConfigError(f"first hidden width floor(K*shrink) is zero for K={self.k}")

    def hidden_widths(self) -> list[int]:
        widths = [math.floor(self.k * self.shrink)]
        for _ in range(1, self.depth):
            widths.append(max(math.floor(widths[-1] * self.shrink), self.min_width))
        return widths


class VDNNModel(DenseNet):
    def __init__(self, config: VDNNConfig, hidden, classifier):
        self.config = config
        sources = [[0]] + [[n - 1] for n in range(2, config.depth + 2)]
        super().__init__(config.k, hidden, classifier, sources)


def vdnn_init(config: VDNNConfig, seed: int = 0) -> VDNNModel:
    rng = np.random.default_rng(seed)
    dtype = np.dtype(config.dtype)
    widths = [config.k] + config.hidden_widths()
    hidden = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        hidden.append((init_linear(rng, fan_in, fan_out, dtype),
                       init_batchnorm(fan_out, config.bn_epsilon, config.bn_momentum, dtype)))
    classifier = init_linear(rng, widths[-1], config.classes, dtype)
    return VDNNModel(config, hidden, classifier)


def vdnn_forward(model: VDNNModel, x, mode: str = "infer"):
    return model.forward(x, mode)


def vdnn_backward(model: VDNNModel, cache, labels):
    return model.backward(cache, labels)


def vdnn_param_count(config: VDNNConfig) -> dict[str, int]:
    """Exact parameter breakdown; hidden weights approach ``0.666*K**2`` at depth 6, shrink 0.5."""
    hw = config.hidden_widths()
    ins = [config.k] + hw[:-1]
    counts = {
        "hidden_weights": sum(i * o for i, o in zip(ins, hw)),
        "hidden_biases": sum(hw),
        "bn_params": 2 * sum(hw),
        "classifier_params": hw[-1] * config.classes + config.classes,
    }
    counts["total"] = sum(counts.values())
    counts["bn_buffers"] = 2 * sum(hw)
    return counts


_VDNN_BLOCK = struct.Struct("<QQQdQdd")


def to_bytes(model: VDNNModel) -> bytes:
    cfg = model.config
    dtype = np.dtype(cfg.dtype)
    fh = io.BytesIO()
    fh.write(_PREFIX.pack(MODEL_MAGIC, FORMAT_VERSION, dtype.itemsize))
    fh.write(_VDNN_BLOCK.pack(cfg.k, cfg.depth, cfg.classes, cfg.shrink, cfg.min_width,
                              cfg.bn_epsilon, cfg.bn_momentum))
    write_tensors(fh, model.tensors(), dtype)
    return fh.getvalue()


def save_model(model: VDNNModel, path) -> None:
    Path(path).write_bytes(to_bytes(model))


def load_model(path) -> VDNNModel:
    raw = Path(path).read_bytes()
    dtype, offset = read_prefix(raw, MODEL_MAGIC, path)
    if len(raw) < offset + _VDNN_BLOCK.size:
        raise FormatError(f"{path}: truncated config block", len(raw))
    k, d, c, shrink, min_width, eps, mom = _VDNN_BLOCK.unpack_from(raw, offset)
    try:
        config = VDNNConfig(k, d, c, shrink, min_width, eps, mom, dtype.name)
    except ConfigError as exc:
        raise FormatError(f"{path}: invalid config block: {exc}", offset) from exc
    offset += _VDNN_BLOCK.size
    model = vdnn_init(config, 0)
    assign_tensors(model, read_tensors(raw, offset, tensor_shapes(model), dtype, path))
    return model
