"""Cross-entropy loss, Adam with L2 weight decay, and the mini-batch training loop."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from pnnkit import _fallback, kernels
from pnnkit.errors import ConfigError, InvalidInputError, NumericError
from pnnkit.network import DenseNet

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 8
    epochs: int = 30
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    shuffle: bool = True
    decoupled_weight_decay: bool = False
    stop_at_perfect_train_accuracy: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (batch norm needs a batch variance)")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)
    epoch_of_iteration: list[int] = field(default_factory=list)
    epoch_grad_sum: list[float] = field(default_factory=list)
    epoch_boundaries: list[int] = field(default_factory=list)

    @property
    def epochs(self) -> int:
        return len(self.epoch_grad_sum)

    def normalized_grad_sum(self) -> list[float]:
        """Per-epoch gradient sums min-max scaled to [0, 1] over the run."""
        g = np.asarray(self.epoch_grad_sum, dtype=np.float64)
        if g.size == 0:
            return []
        span = g.max() - g.min()
        if span == 0:
            return [0.0] * g.size
        return list((g - g.min()) / span)

    def epoch_mean_loss(self) -> list[float]:
        loss = np.asarray(self.loss)
        ep = np.asarray(self.epoch_of_iteration)
        return [float(loss[ep == e].mean()) for e in range(1, self.epochs + 1)]

    def to_text(self) -> str:
        lines = ["iteration\tepoch\tloss\ttrain_accuracy"]
        for i, (e, l, a) in enumerate(zip(self.epoch_of_iteration, self.loss, self.accuracy), start=1):
            lines.append(f"{i}\t{e}\t{l!r}\t{a!r}")
        lines.append("")
        lines.append("epoch\tgrad_sum\tgrad_sum_normalized")
        for e, (g, gn) in enumerate(zip(self.epoch_grad_sum, self.normalized_grad_sum()), start=1):
            lines.append(f"{e}\t{g!r}\t{gn!r}")
        return "\n".join(lines) + "\n"


def cross_entropy(probabilities, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits, ``(p - onehot) / B``."""
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels)
    if p.ndim != 2 or y.shape != (p.shape[0],):
        raise InvalidInputError(f"probabilities {p.shape} and labels {y.shape} do not line up")
    if y.size and (y.min() < 0 or y.max() >= p.shape[1]):
        raise InvalidInputError(f"labels must lie in [0, {p.shape[1]})")
    batch = p.shape[0]
    rows = np.arange(batch)
    loss = -np.mean(np.log(np.maximum(p[rows, y], LOG_FLOOR)))
    grad = p.copy()
    grad[rows, y] -= 1.0
    return float(loss), grad / batch


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def _decays(name: str) -> bool:
    return not (name.endswith(".gamma") or name.endswith(".beta"))


def adam_step(params: dict, grads: dict, state: AdamState, config: TrainConfig, step_index: int) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place.

    Weight decay is added to the gradient (coupled L2) unless
    ``config.decoupled_weight_decay`` is set; batch-norm gamma/beta never decay.
    """
    if step_index < 1:
        raise InvalidInputError("step_index starts at 1")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter block {name!r} at step {step_index}")
    b1, b2 = config.adam_beta1, config.adam_beta2
    lr, wd = config.learning_rate, config.weight_decay
    c1 = 1.0 - b1 ** step_index
    c2 = 1.0 - b2 ** step_index
    for name, p in params.items():
        g = grads[name]
        if p.shape != g.shape:
            raise InvalidInputError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        decay = wd if _decays(name) else 0.0
        update = kernels.adam_update
        if p.dtype != np.float64 or not (p.flags.c_contiguous and g.flags.c_contiguous):
            update = _fallback.adam_update
            g = np.ascontiguousarray(g, dtype=p.dtype)
        update(p.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
               lr, b1, b2, c1, c2, config.adam_epsilon, decay, config.decoupled_weight_decay)
    state.step = step_index
    return state


def batches(n: int, batch_size: int, rng: np.random.Generator | None) -> list[np.ndarray]:
    """Index batches for one epoch; a trailing batch of one is merged into its predecessor."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    chunks = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def iterations_per_epoch(n: int, batch_size: int) -> int:
    count = math.ceil(n / batch_size)
    if count > 1 and n % batch_size == 1:
        count -= 1
    return count


def train(model: DenseNet, x, y, config: TrainConfig | None = None):
    """Train ``model`` in place with mini-batch Adam; returns ``(model, history)``."""
    config = config or TrainConfig()
    x = np.asarray(x, dtype=model.dtype)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise InvalidInputError("training set is empty")
    if y.shape != (x.shape[0],):
        raise InvalidInputError("labels do not match samples")
    if config.batch_size > x.shape[0]:
        raise InvalidInputError(f"batch_size {config.batch_size} exceeds training set size {x.shape[0]}")
    if y.min() < 0 or y.max() >= model.num_classes:
        raise InvalidInputError(f"labels must lie in [0, {model.num_classes})")
    missing = sorted(set(range(model.num_classes)) - set(np.unique(y).tolist()))
    if missing:
        raise InvalidInputError(f"classes without training samples: {missing}")

    rng = np.random.default_rng(config.seed) if config.shuffle else None
    params = model.parameters()
    state = AdamState()
    history = TrainHistory()
    step = 0
    for epoch in range(1, config.epochs + 1):
        grads = None
        for idx in batches(x.shape[0], config.batch_size, rng):
            probs, cache = model.forward(x[idx], "train")
            loss, dlogits = cross_entropy(probs, y[idx])
            grads = model.backward(cache, y[idx], dlogits=dlogits.astype(model.dtype))
            model.update_running_stats(cache)
            step += 1
            adam_step(params, grads.params, state, config, step)
            model.mark_updated()
            history.loss.append(loss)
            history.accuracy.append(float(np.mean(probs.argmax(axis=1) == y[idx])))
            history.epoch_of_iteration.append(epoch)
        history.epoch_grad_sum.append(grads.total_sum())
        history.epoch_boundaries.append(step)
        if config.stop_at_perfect_train_accuracy:
            if np.all(model.predict_proba(x).argmax(axis=1) == y):
                break
    return model, history


def loss_of(model: DenseNet, x, y, mode: str = "train") -> float:
    probs, _ = model.forward(x, mode)
    return cross_entropy(probs, y)[0]


def finite_difference_audit(model: DenseNet, x, y, h: float = 1e-6, mode: str = "train",
                            floor: float = 1e-4) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Every trainable entry is perturbed by ``+-h``; the relative error is
    ``|a - n| / max(|a|, |n|, floor)``. The floor keeps central-difference
    round-off (about ``eps * loss / h``, ~1e-10 at ``h=1e-6``) on near-zero
    gradients from reading as a large relative error. Batch statistics are
    not folded into the running estimates, so the model is left unchanged.
    """
    x = np.asarray(x, dtype=model.dtype)
    y = np.asarray(y)
    _, cache = model.forward(x, mode)
    analytic = model.backward(cache, y).params
    worst = 0.0
    for name, p in model.parameters().items():
        flat = p.reshape(-1)
        ga = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_of(model, x, y, mode)
            flat[i] = orig - h
            down = loss_of(model, x, y, mode)
            flat[i] = orig
            num = (up - down) / (2.0 * h)
            err = abs(ga[i] - num) / max(abs(ga[i]), abs(num), floor)
            worst = max(worst, err)
    model.mark_updated()
    return worst
