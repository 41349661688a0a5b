"""Loss, metrics, the ADAM optimizer, layer freezing, and the epoch loop.

Ships three named training presets: frozen-backbone 10-epoch runs
(iterations 1 and 2) and a 20-epoch fine-tuning run with augmentation
(iteration 3).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, TrainingError, ValidationError
from .nn import Model, model_backward, model_forward
from .tensor import Tensor

ADAM_ALPHA = 1e-3
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    loss: str = "categorical_cross_entropy"
    metrics: tuple = ("accuracy",)
    learning_rate: float = ADAM_ALPHA
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPS
    freeze_policy: tuple = ()
    augmentation_enabled: bool = False
    seed: int = 0
    note: str = ""

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.loss != "categorical_cross_entropy":
            raise ConfigError(f"unsupported loss {self.loss!r}")
        self.freeze_policy = tuple(self.freeze_policy)
        self.metrics = tuple(self.metrics)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    seconds: float

    @property
    def accuracy_gap(self) -> float:
        """Train minus validation accuracy; the overfitting signal."""
        return self.train_accuracy - self.val_accuracy


class TrainHistory:
    """One record per completed epoch plus the run's seed."""

    def __init__(self, seed: int):
        self.seed = seed
        self.records: list[EpochRecord] = []

    @property
    def final(self) -> EpochRecord:
        if not self.records:
            raise ValueError("history is empty")
        return self.records[-1]

    def to_lines(self):
        yield "epoch\ttrain_loss\ttrain_acc\tval_loss\tval_acc"
        for r in self.records:
            yield (
                f"{r.epoch}\t{r.train_loss:.6f}\t{r.train_accuracy:.6f}"
                f"\t{r.val_loss:.6f}\t{r.val_accuracy:.6f}"
            )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for line in self.to_lines():
                f.write(line + "\n")

    def result_line(self) -> str:
        """Summary in the iteration-report style: 'Result= X% trained data set, Y% validation'."""
        r = self.final
        return (
            f"Result= {_pct(r.train_accuracy)} trained data set, "
            f"{_pct(r.val_accuracy)} validation"
        )


def _pct(fraction: float) -> str:
    text = f"{fraction * 100:.1f}".rstrip("0").rstrip(".")
    return f"{text}%"


# ── loss and metrics ───────────────────────────────────────────────────

def categorical_cross_entropy(probs: Tensor, targets: Tensor):
    """Mean negative log-likelihood of the true class.

    Returns (loss, gradient w.r.t. logits) — the gradient is the combined
    softmax+cross-entropy form (probs - targets) / batch, to be fed to
    model_backward with from_logits=True.
    """
    if probs.shape != targets.shape:
        raise ValidationError(
            f"probabilities {list(probs.shape)} and targets {list(targets.shape)} differ"
        )
    t = targets.array
    ones = np.isclose(t, 1.0)
    zeros = np.isclose(t, 0.0)
    if not np.all(ones | zeros) or not np.all(ones.sum(axis=1) == 1):
        raise ValidationError("each target row must be one-hot")
    batch = probs.shape[0]
    p_true = (probs.array * t).sum(axis=1)
    loss = float(-np.log(np.maximum(p_true, 1e-12)).mean())
    grad = (probs.array - t) / probs.dtype.type(batch)
    return loss, Tensor.wrap(grad)


def accuracy(probs: Tensor, targets: Tensor) -> float:
    """Fraction of rows whose argmax (first maximum on ties) hits the target class."""
    if probs.shape != targets.shape:
        raise ValidationError(
            f"probabilities {list(probs.shape)} and targets {list(targets.shape)} differ"
        )
    pred = probs.array.argmax(axis=1)
    true = targets.array.argmax(axis=1)
    return float((pred == true).mean())


# ── ADAM ───────────────────────────────────────────────────────────────

class AdamState:
    """First/second moment estimates and step counter for one parameter."""

    def __init__(self, shape, dtype, alpha=ADAM_ALPHA, beta1=ADAM_BETA1,
                 beta2=ADAM_BETA2, eps=ADAM_EPS):
        self.m = np.zeros(shape, dtype=dtype)
        self.v = np.zeros(shape, dtype=dtype)
        self.t = 0
        self.alpha = alpha
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps


def adam_step(param: Tensor, grad: Tensor, state: AdamState):
    """One bias-corrected ADAM update; returns (new param, same state advanced)."""
    if param.shape != grad.shape:
        raise ConfigError(f"param {list(param.shape)} and grad {list(grad.shape)} differ")
    g = grad.array
    if not np.all(np.isfinite(g)):
        raise TrainingError(f"non-finite gradient for parameter of shape {list(param.shape)}")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    new = param.array - state.alpha * m_hat / (np.sqrt(v_hat) + state.eps)
    return Tensor.wrap(new.astype(param.dtype, copy=False)), state


class Adam:
    """Optimizer over a model's unfrozen parameters, keyed by (layer, param)."""

    def __init__(self, model: Model, alpha=ADAM_ALPHA, beta1=ADAM_BETA1,
                 beta2=ADAM_BETA2, eps=ADAM_EPS):
        self.hyper = (alpha, beta1, beta2, eps)
        self.states = {}
        for layer, pname, t in model.trainable_parameters():
            self.states[(layer.name, pname)] = AdamState(
                t.shape, t.dtype, alpha, beta1, beta2, eps
            )

    def apply(self, model: Model, grads: dict):
        """Update every parameter that received a gradient (single writer)."""
        for key, g in grads.items():
            lname, pname = key
            if key not in self.states:
                raise ConfigError(f"gradient for unknown or frozen parameter {lname}.{pname}")
            layer = model.layer(lname)
            try:
                new, _ = adam_step(layer.params[pname], g, self.states[key])
            except TrainingError as e:
                raise TrainingError(f"{e} ({lname}.{pname})") from None
            layer.params[pname] = new


# ── freezing ───────────────────────────────────────────────────────────

def apply_freeze(model: Model, freeze_policy) -> Model:
    """Freeze every layer whose name starts with one of the given prefixes.

    A prefix matching no layer is a configuration error (fail fast).
    """
    prefixes = tuple(freeze_policy)
    for p in prefixes:
        if not any(l.name.startswith(p) for l in model.layers):
            raise ConfigError(f"freeze prefix {p!r} matches no layer")
    layers = [
        l.clone(frozen=True) if any(l.name.startswith(p) for p in prefixes) else l.clone()
        for l in model.layers
    ]
    return Model(layers, model.input_shape, model.class_labels, dict(model.metadata))


# ── training loop ──────────────────────────────────────────────────────

def evaluate(model: Model, dataset, batch_size=32):
    """Loss and accuracy over a dataset, sequential batch order."""
    total_loss = 0.0
    correct = 0.0
    n = 0
    for xb, yb in dataset.sequential_batches(batch_size):
        probs, _ = model_forward(model, xb)
        loss, _ = categorical_cross_entropy(probs, yb)
        b = xb.shape[0]
        total_loss += loss * b
        correct += accuracy(probs, yb) * b
        n += b
    if n == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    return total_loss / n, correct / n


def train(model: Model, train_set, val_set, config: TrainConfig):
    """Run the epoch loop; returns (trained model, history).

    The input model is not mutated. Deterministic for a fixed config seed:
    shuffling, augmentation draws, and updates all derive from it.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigError("train and validation sets must be non-empty")
    if model.output_shape != (len(model.class_labels),):
        raise ConfigError("model output width must equal the class count")

    model = model.clone()
    if config.freeze_policy:
        model = apply_freeze(model, config.freeze_policy)
    optimizer = Adam(model, config.learning_rate, config.beta1, config.beta2, config.epsilon)
    rng = np.random.default_rng(config.seed)
    history = TrainHistory(seed=config.seed)

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        loss_sum = 0.0
        acc_sum = 0.0
        seen = 0
        for batch_idx, (xb, yb) in enumerate(
            train_set.epoch_batches(config.batch_size, rng, augment=config.augmentation_enabled)
        ):
            probs, cache = model_forward(model, xb)
            loss, grad = categorical_cross_entropy(probs, yb)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {batch_idx}")
            grads = model_backward(model, cache, grad)
            optimizer.apply(model, grads)
            b = xb.shape[0]
            loss_sum += loss * b
            acc_sum += accuracy(probs, yb) * b
            seen += b
        val_loss, val_acc = evaluate(model, val_set, config.batch_size)
        history.records.append(
            EpochRecord(
                epoch=epoch,
                train_loss=loss_sum / seen,
                train_accuracy=acc_sum / seen,
                val_loss=val_loss,
                val_accuracy=val_acc,
                seconds=time.perf_counter() - t0,
            )
        )
    return model, history


# ── presets ────────────────────────────────────────────────────────────

_PRESETS = {
    "paper-iter1": TrainConfig(
        epochs=10,
        freeze_policy=("base.",),
        augmentation_enabled=False,
        note="reconstructed: no published epochs or results for this iteration; mirrors iteration 2",
    ),
    "paper-iter2": TrainConfig(
        epochs=10,
        freeze_policy=("base.",),
        augmentation_enabled=False,
        note="frozen backbone, 10 epochs, no augmentation",
    ),
    "paper-iter3": TrainConfig(
        epochs=20,
        freeze_policy=(),
        augmentation_enabled=True,
        note="full fine-tune, 20 epochs, augmentation on",
    ),
}


def iteration_preset(name: str) -> TrainConfig:
    """One of the three named iteration configs (paper-iter1/2/3)."""
    try:
        preset = _PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; expected one of {', '.join(sorted(_PRESETS))}"
        ) from None
    return replace(preset)
