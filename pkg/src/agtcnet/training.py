"""Losses, Adam, plateau LR schedule, early stopping and the epoch loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import LayerParam, RngStream, Tensor, apply_constraints, softmax
from .autodiff.tensor import make_node
from .checkpoint import load_weights, save_weights
from .dataset import TrialSet, window_overlaps
from .evaluation import max_sma
from .model import ModelState, forward

log = logging.getLogger(__name__)

FINE_TUNE_TAG = "SL-DS-FT"
FINE_TUNE_LR = 5e-4
PROB_CLAMP = 1e-7


class LeakageError(RuntimeError):
    def __init__(self, overlaps):
        self.overlaps = overlaps
        sample = ", ".join(f"{a.trial_id}~{b.trial_id} ({n} samples)" for a, b, n in overlaps[:5])
        super().__init__(f"train/val leakage: {len(overlaps)} overlapping pairs, e.g. {sample}")


class NumericError(RuntimeError):
    pass


# losses -----------------------------------------------------------------------


def _labels(labels, k: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    if y.ndim != 1:
        raise ValueError("labels must be a vector of class indices")
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ValueError(f"label outside [0, {k})")
    return y


def cce_loss(logits: Tensor, labels) -> Tensor:
    """Mean categorical cross-entropy of softmax(logits), fused for stability.

    d loss / d logits = (softmax - onehot) / B.
    """
    z = logits.data
    b, k = z.shape
    y = _labels(labels, k)
    if y.size != b:
        raise ValueError(f"{b} logit rows but {y.size} labels")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(lse - shifted[np.arange(b), y]))
    p = np.exp(shifted - lse[:, None])

    def backward(g):
        d = p.copy()
        d[np.arange(b), y] -= 1.0
        return (d * (g / b),)

    return make_node(np.array(loss), (logits,), backward)


def bce_loss(probs: Tensor, targets) -> Tensor:
    """Elementwise binary cross-entropy averaged over every entry.

    Probabilities are clamped to [1e-7, 1 - 1e-7]; the clamp passes no gradient.
    """
    p = probs.data
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != p.shape:
        raise ValueError(f"targets {t.shape} do not match probabilities {p.shape}")
    if not np.isin(t, (0.0, 1.0)).all():
        raise ValueError("binary cross-entropy needs 0/1 targets")
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = float(np.mean(-(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc))))
    inside = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)

    def backward(g):
        d = (-t / pc + (1.0 - t) / (1.0 - pc)) * inside / p.size
        return (d * g,)

    return make_node(np.array(loss), (probs,), backward)


def one_hot(labels, k: int) -> np.ndarray:
    y = _labels(labels, k)
    out = np.zeros((y.size, k))
    out[np.arange(y.size), y] = 1.0
    return out


def batch_loss(logits: Tensor, labels, kind: str) -> Tensor:
    if kind == "cce":
        return cce_loss(logits, labels)
    if kind == "bce":
        return bce_loss(softmax(logits, axis=-1), one_hot(labels, logits.shape[1]))
    raise ValueError(f"unknown loss {kind!r}; expected 'cce' or 'bce'")


# optimizer & schedule ------------------------------------------------------------


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(opt: OptimizerState, params: Sequence[LayerParam], grads: Optional[dict] = None) -> None:
    """One Adam update, bias correction folded into the step size, then constraint projection.

    ``grads`` maps parameter name to gradient; by default each tensor's ``.grad``
    is used (missing gradients count as zero).
    """
    opt.step += 1
    t = opt.step
    step_size = opt.lr * math.sqrt(1.0 - opt.beta2 ** t) / (1.0 - opt.beta1 ** t)
    for p in params:
        w = p.tensor
        g = grads.get(p.name) if grads is not None else w.grad
        if g is None:
            g = np.zeros_like(w.data)
        m = opt.m.get(p.name)
        if m is None:
            m = opt.m[p.name] = np.zeros_like(w.data)
            opt.v[p.name] = np.zeros_like(w.data)
        v = opt.v[p.name]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        w.data -= step_size * m / (np.sqrt(v) + opt.eps)
    apply_constraints(params)


@dataclass
class SchedulerState:
    lr: float
    factor: float = 0.9
    patience: int = 10
    min_lr: float = 1e-4
    min_delta: float = 1e-4
    cooldown: int = 0
    best: float = math.inf
    counter: int = 0
    cooldown_counter: int = 0


def scheduler_step(s: SchedulerState, val_loss: float) -> float:
    """Reduce-on-plateau: cut the LR once the stagnation count exceeds ``patience``."""
    if s.cooldown_counter > 0:
        s.cooldown_counter -= 1
    if val_loss < s.best - s.min_delta:
        s.best = val_loss
        s.counter = 0
        return s.lr
    if s.cooldown_counter > 0:
        return s.lr
    s.counter += 1
    if s.counter > s.patience:
        if s.lr > s.min_lr:
            new = max(s.lr * s.factor, s.min_lr)
            log.info("reducing learning rate %.3g -> %.3g", s.lr, new)
            s.lr = new
        s.counter = 0
        s.cooldown_counter = s.cooldown
    return s.lr


def early_stop_check(val_acc: Sequence[float], patience: int) -> bool:
    """True once more than ``patience`` epochs have passed since the best accuracy."""
    if len(val_acc) == 0:
        return False
    best_epoch = int(np.argmax(val_acc)) + 1
    return len(val_acc) - best_epoch > patience


# bookkeeping ------------------------------------------------------------------------


@dataclass
class MetricTrace:
    epoch: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    lr: list = field(default_factory=list)

    COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr")

    def append(self, **row):
        for k in self.COLUMNS:
            getattr(self, k).append(row[k])

    def __len__(self) -> int:
        return len(self.epoch)


@dataclass
class TrainConfig:
    max_epochs: int = 1000
    batch_size: int = 32
    lr: float = 1e-3
    loss: str = "cce"
    early_stop_patience: int = 300
    lr_decay: bool = True
    lr_factor: float = 0.9
    lr_patience: int = 10
    min_lr: float = 1e-4
    min_delta: float = 1e-4
    seed: int = 0
    eval_batch_size: int = 64


@dataclass
class TrainReport:
    tag: str
    trace: MetricTrace
    initial_lr: float
    best_epoch: int = 0
    best_val_acc: float = -math.inf
    best_sma_epoch: int = 0
    best_sma: float = math.nan
    initial_val_loss: float = math.nan
    initial_val_acc: float = math.nan
    stopped_early: bool = False
    checkpoints: list = field(default_factory=list)  # epochs at which the best state was saved
    wall_clock: float = 0.0
    best_state: Optional[ModelState] = None


def evaluate(model: ModelState, data: TrialSet, loss: str = "cce", batch_size: int = 64):
    """Infer-mode (loss, accuracy, predicted labels) over a whole set."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty set")
    total, preds = 0.0, []
    for i in range(0, len(data), batch_size):
        xb, yb = data.x[i:i + batch_size], data.y[i:i + batch_size]
        res = forward(model, xb, "infer")
        total += float(batch_loss(res.logits, yb, loss).data) * len(yb)
        preds.append(res.logits.data.argmax(axis=1))
    preds = np.concatenate(preds)
    return total / len(data), float(np.mean(preds == data.y)), preds


def train_step(model: ModelState, opt: OptimizerState, x, y, loss: str, rng: RngStream) -> tuple[float, int]:
    """Forward/backward/Adam on one minibatch; returns (loss, correct count)."""
    params = model.param_list()
    for p in params:
        p.tensor.grad = None
    res = forward(model, x, "train", rng)
    l = batch_loss(res.logits, y, loss)
    value = float(l.data)
    if not math.isfinite(value):
        bad = [p.name for p in params if not np.isfinite(p.tensor.data).all()]
        where = f"non-finite parameters: {', '.join(bad)}" if bad else "parameters finite"
        raise NumericError(
            f"non-finite loss {value} at optimizer step {opt.step + 1} (lr {opt.lr:.3g}); {where}"
        )
    l.backward()
    adam_step(opt, params)
    return value, int(np.count_nonzero(res.logits.data.argmax(axis=1) == y))


def train(
    model: ModelState,
    train_set: TrialSet,
    val_set: TrialSet,
    hyper: TrainConfig = TrainConfig(),
    rng: Optional[RngStream] = None,
    checkpoint_path=None,
    tag: str = "SN",
    on_epoch: Optional[Callable] = None,
) -> TrainReport:
    """Run the epoch loop, keeping the weights with the best validation accuracy.

    ``model`` is updated in place and ends holding the final-epoch weights;
    the best weights are in ``report.best_state`` (and at ``checkpoint_path``).
    """
    overlaps = window_overlaps(train_set.meta, val_set.meta)
    if overlaps:
        raise LeakageError(overlaps)
    if len(train_set) == 0:
        raise ValueError("empty training set")
    started = time.perf_counter()
    root = rng if rng is not None else RngStream(hyper.seed)
    opt = OptimizerState(lr=hyper.lr)
    sched = SchedulerState(hyper.lr, hyper.lr_factor, hyper.lr_patience, hyper.min_lr, hyper.min_delta)
    report = TrainReport(tag=tag, trace=MetricTrace(), initial_lr=hyper.lr)
    report.best_state = model.copy()
    n = len(train_set)

    for epoch in range(1, hyper.max_epochs + 1):
        lr_used = opt.lr
        order = root.substream("shuffle", epoch).permutation(n)
        drop = root.substream("dropout", epoch)
        loss_sum, correct = 0.0, 0
        for i in range(0, n, hyper.batch_size):
            idx = order[i:i + hyper.batch_size]
            l, c = train_step(model, opt, train_set.x[idx], train_set.y[idx], hyper.loss, drop)
            loss_sum += l * len(idx)
            correct += c
        val_loss, val_acc, _ = evaluate(model, val_set, hyper.loss, hyper.eval_batch_size)
        if not math.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        report.trace.append(epoch=epoch, train_loss=loss_sum / n, train_acc=correct / n,
                            val_loss=val_loss, val_acc=val_acc, lr=lr_used)
        if val_acc > report.best_val_acc:
            report.best_val_acc = val_acc
            report.best_epoch = epoch
            report.best_state = model.copy()
            report.checkpoints.append(epoch)
            if checkpoint_path is not None:
                save_weights(model, checkpoint_path)
        if hyper.lr_decay:
            opt.lr = scheduler_step(sched, val_loss)
        if on_epoch is not None:
            on_epoch(report)
        log.debug("epoch %d loss %.4f acc %.4f val_loss %.4f val_acc %.4f lr %.3g", epoch,
                  loss_sum / n, correct / n, val_loss, val_acc, lr_used)
        if early_stop_check(report.trace.val_acc, hyper.early_stop_patience):
            report.stopped_early = True
            break

    if len(report.trace):
        report.best_sma_epoch, report.best_sma = max_sma(report.trace.val_acc)
    report.wall_clock = time.perf_counter() - started
    return report


def fine_tune(
    base_checkpoint,
    subject_train: TrialSet,
    subject_val: TrialSet,
    hyper: Optional[TrainConfig] = None,
    rng: Optional[RngStream] = None,
    checkpoint_path=None,
) -> TrainReport:
    """Continue training a saved model on one subject's sessions at the fine-tuning rate."""
    hyper = hyper or TrainConfig(lr=FINE_TUNE_LR)
    model = load_weights(base_checkpoint)
    expected = (model.config.num_channels, model.config.num_samples)
    for name, data in (("train", subject_train), ("validation", subject_val)):
        if data.x.shape[1:3] != expected:
            raise ValueError(
                f"{name} trials are {data.x.shape[1:3]} (channels, samples); checkpoint expects {expected}"
            )
    init_loss, init_acc, _ = evaluate(model, subject_val, hyper.loss, hyper.eval_batch_size)
    report = train(model, subject_train, subject_val, hyper, rng, checkpoint_path, tag=FINE_TUNE_TAG)
    report.initial_val_loss, report.initial_val_acc = init_loss, init_acc
    if not len(report.trace):
        report.best_val_acc = init_acc
    return report
