"""Desk-scale training: plain SGD with weight decay and a multistep schedule on a synthetic task."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .graph import ModelConfig, check_geometry
from .network import Network, instantiate, softmax_cross_entropy
from .tensor import as_dtype, seeded_random


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    lr_decay_factor: float = 0.1
    decay_every: int = 50
    weight_decay: float = 5e-4
    epochs: int = 30
    batch: int = 32
    seed: int = 0
    precision: int = 32
    # "layer" freezes every block of a layer, "layer.block" a single block
    frozen: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if not 0 < self.lr_decay_factor <= 1:
            raise ConfigError("lr_decay_factor must lie in (0, 1]")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.decay_every < 1 or self.epochs < 0 or self.batch < 1:
            raise ConfigError("decay_every and batch must be >= 1, epochs >= 0")


@dataclass(frozen=True)
class SyntheticTask:
    """Class prototypes in [-1, 1] plus Gaussian noise; the generator is linearly separable."""
    classes: int = 2
    channels: int = 4
    size: int = 8
    train_size: int = 256
    test_size: int = 256
    noise: float = 1.0
    seed: int = 0

    def generate(self, precision=32):
        rng = np.random.default_rng(self.seed)
        shape = (self.channels, self.size, self.size)
        protos = rng.uniform(-1.0, 1.0, size=(self.classes, *shape))
        dtype = as_dtype(precision)

        def draw(n):
            labels = rng.integers(0, self.classes, size=n)
            x = protos[labels] + self.noise * rng.standard_normal((n, *shape))
            return x.astype(dtype), labels

        x_tr, y_tr = draw(self.train_size)
        x_te, y_te = draw(self.test_size)
        return x_tr, y_tr, x_te, y_te


def sgd_step(weights: np.ndarray, gradients: np.ndarray, lr: float, weight_decay: float = 0.0) -> np.ndarray:
    """``w - lr * (g + weight_decay * w)``; returns a new array."""
    if weights.shape != gradients.shape:
        raise ShapeError(f"weight shape {weights.shape} != gradient shape {gradients.shape}")
    w = np.asarray(weights)
    return (w - lr * (gradients + weight_decay * w)).astype(w.dtype, copy=False)


def multistep_lr(initial: float, factor: float, every: int, epoch: int) -> float:
    """``initial * factor ** floor(epoch / every)``."""
    if every < 1 or epoch < 0:
        raise ValueError("every must be >= 1 and epoch >= 0")
    return initial * factor ** (epoch // every)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    test_accuracy: float


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)
    network: Network | None = None

    @property
    def final_accuracy(self) -> float:
        return self.history[-1].test_accuracy if self.history else float("nan")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "lr", "train_loss", "test_accuracy"])
            for r in self.history:
                w.writerow([r.epoch, repr(r.lr), repr(r.train_loss), repr(r.test_accuracy)])


def _logits(net: Network, x: np.ndarray) -> np.ndarray:
    out = net.forward(x)
    return out.reshape(out.shape[0], -1)


def evaluate(net: Network, x: np.ndarray, y: np.ndarray, batch: int = 256) -> tuple[float, float]:
    """(mean cross-entropy, accuracy) over a data set."""
    total, correct = 0.0, 0
    for i in range(0, len(x), batch):
        logits = _logits(net, x[i:i + batch])
        loss, _ = softmax_cross_entropy(logits, y[i:i + batch])
        total += loss * len(logits)
        correct += int((logits.argmax(axis=1) == y[i:i + batch]).sum())
    return total / len(x), correct / len(x)


def _is_frozen(layer: str, block: str, frozen: tuple[str, ...]) -> bool:
    return layer in frozen or f"{layer}.{block}" in frozen


def train(config: ModelConfig, task: SyntheticTask, cfg: TrainConfig, network: Network | None = None,
          trajectory_path=None) -> TrainResult:
    """Mini-batch SGD; after each epoch records the full train-set loss and test accuracy."""
    out_c, out_h, out_w = check_geometry(config)
    if out_c * out_h * out_w != task.classes:
        raise ConfigError(f"model produces {out_c * out_h * out_w} outputs for {task.classes} classes")
    if tuple(config.input_shape[1:]) != (task.channels, task.size, task.size):
        raise ConfigError(f"model input {tuple(config.input_shape[1:])} does not match task samples")
    net = network.copy() if network is not None else instantiate(config, cfg.seed, cfg.precision)
    x_tr, y_tr, x_te, y_te = task.generate(cfg.precision)
    result = TrainResult(network=net)
    n = len(x_tr)
    for epoch in range(cfg.epochs):
        lr = multistep_lr(cfg.learning_rate, cfg.lr_decay_factor, cfg.decay_every, epoch)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        for i in range(0, n, cfg.batch):
            idx = order[i:i + cfg.batch]
            out = net.forward(x_tr[idx], keep=True)
            _, d_logits = softmax_cross_entropy(out.reshape(len(idx), -1), y_tr[idx])
            grads, _ = net.backward(d_logits.reshape(out.shape))
            for layer, blocks in net.weights.items():
                for blk, w in blocks.items():
                    if not _is_frozen(layer, blk, cfg.frozen):
                        blocks[blk] = sgd_step(w, grads[layer][blk], lr, cfg.weight_decay)
        loss, _ = evaluate(net, x_tr, y_tr)
        _, acc = evaluate(net, x_te, y_te)
        result.history.append(EpochRecord(epoch, lr, loss, acc))
    if trajectory_path is not None:
        result.write_csv(trajectory_path)
    return result


# -- gradient verification -----------------------------------------------------

@dataclass(frozen=True)
class GradcheckResult:
    max_rel_error: float
    per_block: dict[str, float]
    entries: int


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, 1e-3 * max|a| over the block, 1e-8)``.

    The block-relative floor keeps entries whose true gradient is (near) zero
    from turning finite-difference rounding noise into huge relative errors.
    """
    a, n = np.abs(analytic), np.abs(numeric)
    floor = max(1e-3 * float(a.max(initial=0.0)), 1e-8)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), floor)


HE_GAIN = 6 ** 0.5


def end_to_end_gradcheck(config: ModelConfig, seed: int = 0, batch: int = 2, step: float = 1e-5,
                         x: np.ndarray | None = None, weight_gain: float = HE_GAIN) -> GradcheckResult:
    """Backprop gradients of the mean cross-entropy vs central differences, in float64.

    Weights are the seeded initialisation scaled by ``weight_gain``. The default
    (sqrt 6, i.e. He-uniform bounds) keeps activations O(1) through the depth so
    gradients sit well above the ~1e-11 rounding noise of the difference quotient.
    """
    net = instantiate(config, seed, 64)
    for blocks in net.weights.values():
        for blk in blocks:
            blocks[blk] *= weight_gain
    b = batch if x is None else x.shape[0]
    if x is None:
        x = seeded_random((b, *config.input_shape[1:]), seed + 1, 64)
    out = net.forward(x)
    classes = out[0].size
    labels = np.random.default_rng([seed, 2]).integers(0, classes, size=b)

    def loss_of() -> float:
        return softmax_cross_entropy(net.forward(x).reshape(b, -1), labels)[0]

    out = net.forward(x, keep=True)
    _, d = softmax_cross_entropy(out.reshape(b, -1), labels)
    grads, _ = net.backward(d.reshape(out.shape))
    per_block: dict[str, float] = {}
    entries = 0
    for layer, blocks in net.weights.items():
        for blk, w in blocks.items():
            numeric = np.empty_like(w)
            flat, nflat = w.reshape(-1), numeric.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                up = loss_of()
                flat[i] = orig - step
                down = loss_of()
                flat[i] = orig
                nflat[i] = (up - down) / (2 * step)
            entries += flat.size
            per_block[f"{layer}.{blk}"] = float(relative_errors(grads[layer][blk], numeric).max(initial=0.0))
    return GradcheckResult(max(per_block.values(), default=0.0), per_block, entries)


def layer_gradcheck(spec, seed: int = 0, shape=(2, None, 6, 6), step: float = 1e-5) -> GradcheckResult:
    """Finite-difference check of ``kernels.backward`` for one layer, loss = sum(forward * R)."""
    from . import kernels
    b, _, h, w = shape
    x = seeded_random((b, spec.in_channels, h, w), seed, 64)
    bank = kernels.init_filters(spec, seed + 1, 64)
    ho, wo = spec.output_hw(h, w)
    r = seeded_random((b, spec.out_channels, ho, wo), seed + 2, 64)
    g = kernels.backward(x, bank, spec, r)

    def loss(xx, bb):
        return float(np.sum(kernels.forward(xx, bb, spec) * r))

    blocks = {"input": (x, g.d_input), "spatial": (bank.spatial, g.d_spatial)}
    if bank.pointwise is not None:
        blocks["pointwise"] = (bank.pointwise, g.d_pointwise)
    per_block, entries = {}, 0
    for name, (arr, analytic) in blocks.items():
        numeric = np.empty_like(arr)
        flat, nflat = arr.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss(x, bank)
            flat[i] = orig - step
            down = loss(x, bank)
            flat[i] = orig
            nflat[i] = (up - down) / (2 * step)
        entries += flat.size
        per_block[name] = float(relative_errors(analytic, numeric).max(initial=0.0))
    return GradcheckResult(max(per_block.values()), per_block, entries)
