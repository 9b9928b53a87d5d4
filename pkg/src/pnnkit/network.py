"""Shared dense-network engine for the progressive and vanilla architectures.

A network is ``D`` hidden blocks (Linear -> ReLU -> BatchNorm) followed by a
Linear -> Softmax classifier. Every layer ``n`` (the classifier is layer
``D+1``) reads the concatenation of a fixed list of *sources*: source 0 is
the input spectrum ``X`` and source ``j >= 1`` is the output of hidden
layer ``j``. The progressive net and its ablation variants differ only in
that source table; the vanilla net is the plain chain ``[0], [1], [2], ...``.
"""
from __future__ import annotations

import copy
import itertools
from dataclasses import dataclass, field

import numpy as np

from pnnkit.errors import InvalidInputError, ShapeError

_TOKENS = itertools.count(1)


@dataclass
class LinearLayer:
    weights: np.ndarray  # [out x in]
    bias: np.ndarray  # [out]

    @property
    def shape(self):
        return self.weights.shape


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.1


@dataclass
class LayerCache:
    inputs: np.ndarray  # concatenated layer input a^n
    pre: np.ndarray  # z = a W^T + b
    xhat: np.ndarray  # normalized ReLU output
    inv_std: np.ndarray
    batch_mean: np.ndarray | None
    batch_var: np.ndarray | None
    output: np.ndarray  # post-BN block output


@dataclass
class ForwardCache:
    mode: str
    token: tuple
    x: np.ndarray
    layers: list[LayerCache]
    classifier_input: np.ndarray
    logits: np.ndarray
    probabilities: np.ndarray

    @property
    def features(self) -> np.ndarray:
        """Final feature set fed to the classifier (exportable for embeddings)."""
        return self.classifier_input


@dataclass
class Gradients:
    params: dict[str, np.ndarray]
    input: np.ndarray
    block_sums: dict[str, float] = field(default_factory=dict)

    def total_sum(self) -> float:
        return float(sum(self.block_sums.values()))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> LinearLayer:
    s = np.sqrt(6.0 / fan_in)
    w = rng.uniform(-s, s, size=(fan_out, fan_in)).astype(dtype)
    return LinearLayer(w, np.zeros(fan_out, dtype=dtype))


def init_batchnorm(width: int, epsilon: float, momentum: float, dtype) -> BatchNormState:
    return BatchNormState(
        gamma=np.ones(width, dtype=dtype),
        beta=np.zeros(width, dtype=dtype),
        running_mean=np.zeros(width, dtype=dtype),
        running_var=np.ones(width, dtype=dtype),
        epsilon=epsilon,
        momentum=momentum,
    )


class DenseNet:
    """Hidden blocks plus classifier, wired by a per-layer source table."""

    def __init__(self, input_width, hidden, classifier, sources):
        self.input_width = int(input_width)
        self.hidden: list[tuple[LinearLayer, BatchNormState]] = list(hidden)
        self.classifier: LinearLayer = classifier
        self.sources: list[list[int]] = [list(s) for s in sources]
        self._token = next(_TOKENS)
        self._revision = 0
        self._check_shapes()

    # -- structure -----------------------------------------------------------

    @property
    def depth(self) -> int:
        return len(self.hidden)

    @property
    def num_classes(self) -> int:
        return self.classifier.weights.shape[0]

    @property
    def dtype(self):
        return self.classifier.weights.dtype

    def source_widths(self) -> list[int]:
        return [self.input_width] + [lin.weights.shape[0] for lin, _ in self.hidden]

    def layer_in_widths(self) -> list[int]:
        widths = self.source_widths()
        return [sum(widths[j] for j in src) for src in self.sources]

    def _check_shapes(self):
        if len(self.sources) != self.depth + 1:
            raise ShapeError(f"need {self.depth + 1} source lists, got {len(self.sources)}")
        for n, src in enumerate(self.sources, start=1):
            if not src or any(j < 0 or j >= n for j in src):
                raise ShapeError(f"layer {n} may only read sources 0..{n - 1}, got {src}")
        expected = self.layer_in_widths()
        layers = [lin for lin, _ in self.hidden] + [self.classifier]
        for n, (lin, width) in enumerate(zip(layers, expected), start=1):
            out = lin.weights.shape[0]
            if lin.weights.shape[1] != width or lin.bias.shape != (out,):
                raise ShapeError(f"layer {n}: weights {lin.weights.shape} do not read {width} inputs")
        for n, (lin, bn) in enumerate(self.hidden, start=1):
            out = lin.weights.shape[0]
            for name in ("gamma", "beta", "running_mean", "running_var"):
                if getattr(bn, name).shape != (out,):
                    raise ShapeError(f"layer {n}: batch-norm {name} must have shape ({out},)")

    # -- parameters ----------------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable arrays by name, in declaration order (live references)."""
        params = {}
        for i, (lin, bn) in enumerate(self.hidden):
            params[f"hidden.{i}.weight"] = lin.weights
            params[f"hidden.{i}.bias"] = lin.bias
            params[f"hidden.{i}.gamma"] = bn.gamma
            params[f"hidden.{i}.beta"] = bn.beta
        params["classifier.weight"] = self.classifier.weights
        params["classifier.bias"] = self.classifier.bias
        return params

    def tensors(self) -> list[np.ndarray]:
        """All stored arrays, trainable and running statistics, in container order."""
        out = []
        for lin, bn in self.hidden:
            out += [lin.weights, lin.bias, bn.gamma, bn.beta, bn.running_mean, bn.running_var]
        out += [self.classifier.weights, self.classifier.bias]
        return out

    def mark_updated(self):
        """Invalidate caches produced before an in-place parameter update."""
        self._revision += 1

    def copy(self):
        return copy.deepcopy(self)

    def __deepcopy__(self, memo):
        new = copy.copy(self)
        new.hidden = [(copy.deepcopy(lin), copy.deepcopy(bn)) for lin, bn in self.hidden]
        new.classifier = copy.deepcopy(self.classifier)
        new.sources = [list(s) for s in self.sources]
        new._token = next(_TOKENS)
        new._revision = 0
        return new

    def _cache_token(self):
        return (self._token, self._revision)

    # -- forward / backward ---------------------------------------------------

    def layer_input(self, n: int, x: np.ndarray, prior_outputs) -> np.ndarray:
        """Concatenate the sources layer ``n`` reads (X first, then ascending layer index)."""
        blocks = [x] + list(prior_outputs)
        src = self.sources[n - 1]
        if max(src) >= len(blocks):
            raise ShapeError(f"layer {n} needs outputs of layers up to {max(src)}, got {len(blocks) - 1}")
        widths = self.source_widths()
        for j in src:
            if blocks[j].ndim != 2 or blocks[j].shape[1] != widths[j]:
                raise ShapeError(f"source {j} for layer {n} has width {blocks[j].shape[-1]}, expected {widths[j]}")
        if len(src) == 1:
            return blocks[src[0]]
        return np.concatenate([blocks[j] for j in src], axis=1)

    def forward(self, x, mode: str = "infer"):
        if mode not in ("train", "infer"):
            raise InvalidInputError(f"mode must be 'train' or 'infer', got {mode!r}")
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_width:
            raise ShapeError(f"expected a batch of width {self.input_width}, got shape {x.shape}")
        batch = x.shape[0]
        if batch < 1:
            raise InvalidInputError("empty batch")
        if mode == "train" and batch < 2:
            raise InvalidInputError("train-mode forward needs a batch of at least 2 (batch variance undefined)")

        outputs: list[np.ndarray] = []
        caches: list[LayerCache] = []
        for n, (lin, bn) in enumerate(self.hidden, start=1):
            a = self.layer_input(n, x, outputs)
            z = a @ lin.weights.T + lin.bias
            r = np.maximum(z, 0.0)
            if mode == "train":
                mean = r.mean(axis=0)
                var = r.var(axis=0)
            else:
                mean, var = bn.running_mean, bn.running_var
            inv_std = 1.0 / np.sqrt(var + bn.epsilon)
            xhat = (r - mean) * inv_std
            y = bn.gamma * xhat + bn.beta
            caches.append(LayerCache(a, z, xhat, inv_std,
                                     mean if mode == "train" else None,
                                     var if mode == "train" else None, y))
            outputs.append(y)

        a = self.layer_input(self.depth + 1, x, outputs)
        logits = a @ self.classifier.weights.T + self.classifier.bias
        probs = softmax(logits)
        cache = ForwardCache(mode, self._cache_token(), x, caches, a, logits, probs)
        return probs, cache

    def predict_proba(self, x) -> np.ndarray:
        return self.forward(x, "infer")[0]

    def update_running_stats(self, cache: ForwardCache):
        """Fold a train-mode batch's statistics into the running estimates."""
        if cache.mode != "train":
            return
        batch = cache.x.shape[0]
        for (_, bn), lc in zip(self.hidden, cache.layers):
            m = bn.momentum
            # unbiased batch variance for the running estimate
            unbiased = lc.batch_var * (batch / (batch - 1))
            bn.running_mean *= 1.0 - m
            bn.running_mean += m * lc.batch_mean
            bn.running_var *= 1.0 - m
            bn.running_var += m * unbiased

    def backward(self, cache: ForwardCache, labels, dlogits: np.ndarray | None = None) -> Gradients:
        """Gradients of the mean cross-entropy of ``cache`` w.r.t. every parameter.

        ``dlogits`` overrides the loss gradient at the logits when given.
        """
        if cache.token != self._cache_token():
            raise InvalidInputError("forward cache is stale or belongs to a different model")
        labels = np.asarray(labels)
        batch = cache.x.shape[0]
        if labels.shape != (batch,):
            raise ShapeError(f"labels shape {labels.shape} does not match batch of {batch}")
        if dlogits is None:
            if labels.min() < 0 or labels.max() >= self.num_classes:
                raise InvalidInputError(f"labels must lie in [0, {self.num_classes})")
            dlogits = cache.probabilities.copy()
            dlogits[np.arange(batch), labels] -= 1.0
            dlogits /= batch

        widths = self.source_widths()
        offsets = [np.cumsum([0] + [widths[j] for j in src]) for src in self.sources]
        # upstream gradient per source block: index 0 is X, j is hidden layer j's output
        dsrc = [np.zeros((batch, w), dtype=self.dtype) for w in widths]
        grads: dict[str, np.ndarray] = {}

        def scatter(n, da):
            for pos, j in enumerate(self.sources[n - 1]):
                dsrc[j] += da[:, offsets[n - 1][pos]:offsets[n - 1][pos + 1]]

        grads["classifier.weight"] = dlogits.T @ cache.classifier_input
        grads["classifier.bias"] = dlogits.sum(axis=0)
        scatter(self.depth + 1, dlogits @ self.classifier.weights)

        hidden_grads = {}
        for n in range(self.depth, 0, -1):
            lin, bn = self.hidden[n - 1]
            lc = cache.layers[n - 1]
            dy = dsrc[n]
            dgamma = (dy * lc.xhat).sum(axis=0)
            dbeta = dy.sum(axis=0)
            dxhat = dy * bn.gamma
            if cache.mode == "train":
                dr = lc.inv_std / batch * (
                    batch * dxhat - dxhat.sum(axis=0) - lc.xhat * (dxhat * lc.xhat).sum(axis=0)
                )
            else:
                dr = dxhat * lc.inv_std
            dz = dr * (lc.pre > 0)
            hidden_grads[n - 1] = (dz.T @ lc.inputs, dz.sum(axis=0), dgamma, dbeta)
            scatter(n, dz @ lin.weights)

        for i in range(self.depth):
            w, b, g, be = hidden_grads[i]
            grads[f"hidden.{i}.weight"] = w
            grads[f"hidden.{i}.bias"] = b
            grads[f"hidden.{i}.gamma"] = g
            grads[f"hidden.{i}.beta"] = be
        ordered = {name: grads[name] for name in self.parameters()}
        sums = {name: float(g.sum()) for name, g in ordered.items()}
        return Gradients(ordered, dsrc[0], sums)
