"""Mini-batch training loop, confusion-matrix metrics and metric files."""
from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .ingest import label_names
from .model import SpliceModel, backward, example_losses, forward, predict
from .numerics import NumericalError, child_rng, dropout_mask
from .optim import Optimizer, clip_global_norm, make_optimizer

log = logging.getLogger(__name__)

DEFAULT_LR = {"adam": 1e-3, "rmsprop": 1e-3, "sgd": 1e-2}


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    optimizer: str = "adam"
    learning_rate: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    rho: float = 0.9
    clip_norm: float = 0.0
    seed: int = 0
    shuffle: bool = True
    workers: int = 1
    shard_size: int = 0
    record_seconds: bool = True

    def __post_init__(self):
        errors = self.problems()
        if errors:
            raise ValueError("; ".join(errors))

    def problems(self) -> list[str]:
        errors = []
        if self.epochs < 1:
            errors.append(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            errors.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in DEFAULT_LR:
            errors.append(f"optimizer must be one of {sorted(DEFAULT_LR)}, got {self.optimizer!r}")
        if self.learning_rate is not None and not self.learning_rate >= 0:
            errors.append(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.clip_norm < 0:
            errors.append(f"clip_norm must be >= 0 (0 disables), got {self.clip_norm}")
        if self.workers < 1:
            errors.append(f"workers must be >= 1, got {self.workers}")
        if self.shard_size < 0:
            errors.append(f"shard_size must be >= 0 (0 means one shard per batch), got {self.shard_size}")
        return errors

    @property
    def lr(self) -> float:
        return DEFAULT_LR.get(self.optimizer, 1e-3) if self.learning_rate is None else self.learning_rate

    def make_optimizer(self) -> Optimizer:
        if self.optimizer == "adam":
            return make_optimizer("adam", lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.epsilon)
        if self.optimizer == "rmsprop":
            return make_optimizer("rmsprop", lr=self.lr, rho=self.rho, eps=self.epsilon)
        return make_optimizer("sgd", lr=self.lr)


class ConfusionMatrix:
    """K x K counts; rows are true classes, columns predictions."""

    def __init__(self, counts):
        self.counts = np.asarray(counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {self.counts.shape}")

    @classmethod
    def from_predictions(cls, y_true, y_pred, num_classes: int) -> "ConfusionMatrix":
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(y_true), np.asarray(y_pred)), 1)
        return cls(counts)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0

    def f1_per_class(self) -> tuple[np.ndarray, list[int]]:
        """One-vs-rest ``2TP/(2TP+FP+FN)`` per class and the classes where it is undefined."""
        tp = np.diag(self.counts).astype(float)
        fp = self.counts.sum(axis=0) - tp
        fn = self.counts.sum(axis=1) - tp
        denom = 2 * tp + fp + fn
        undefined = [int(k) for k in np.flatnonzero(denom == 0)]
        f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
        return f1, undefined

    def macro_f1(self) -> float:
        return float(self.f1_per_class()[0].mean())

    def micro_f1(self) -> float:
        tp = np.trace(self.counts)
        off = self.total - tp
        return float(2 * tp / (2 * tp + 2 * off)) if self.total else 0.0

    def collapse_binary(self) -> "ConfusionMatrix":
        """Merge acceptor and donor into one ``site`` class (index 0)."""
        if self.num_classes != 3:
            raise ValueError("only a 3-class matrix can be collapsed")
        groups = [[0, 2], [1]]
        return ConfusionMatrix([[self.counts[np.ix_(r, c)].sum() for c in groups] for r in groups])


@dataclass
class Evaluation:
    confusion: ConfusionMatrix
    accuracy: float
    per_class_f1: np.ndarray
    macro_f1: float
    micro_f1: float
    undefined_f1: list[int] = field(default_factory=list)

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix) -> "Evaluation":
        f1, undefined = cm.f1_per_class()
        return cls(cm, cm.accuracy(), f1, cm.macro_f1(), cm.micro_f1(), undefined)

    def to_text(self) -> str:
        names = label_names(self.confusion.num_classes)
        lines = [
            f"windows: {self.confusion.total}",
            f"accuracy: {self.accuracy!r}",
            f"macro_f1: {self.macro_f1!r}",
            f"micro_f1: {self.micro_f1!r}",
        ]
        for name, f1 in zip(names, self.per_class_f1):
            lines.append(f"f1.{name}: {float(f1)!r}")
        lines.append("f1_undefined: " + ",".join(names[k] for k in self.undefined_f1))
        lines.append("confusion.columns: " + ",".join(names))
        for name, row in zip(names, self.confusion.counts):
            lines.append(f"confusion.{name}: " + ",".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"


def evaluate(model: SpliceModel, codes: np.ndarray, labels: np.ndarray) -> Evaluation:
    if len(codes) == 0:
        raise ValueError("cannot evaluate on an empty set")
    pred, _ = predict(model, codes)
    return Evaluation.from_confusion(ConfusionMatrix.from_predictions(labels, pred, model.config.num_classes))


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    accuracy: float
    macro_f1: float
    seconds: float


def _shard_pass(model, codes, labels, masks, scale):
    trace = forward(model, codes, "train", masks=masks if masks else None)
    losses = example_losses(trace, labels)
    grads = backward(model, trace, labels, scale=scale)
    return losses, trace.probs.argmax(axis=1), grads


def train(model: SpliceModel, codes: np.ndarray, labels: np.ndarray, config: TrainConfig,
          optimizer: Optimizer | None = None, on_epoch=None) -> tuple[SpliceModel, list[EpochMetrics], Optimizer]:
    """Train ``model`` in place.

    Each batch is cut into fixed-size shards (``shard_size``; 0 means the
    whole batch). Shard gradients are summed in shard order, so the result
    does not depend on ``workers``. Dropout masks for a batch are drawn
    before sharding for the same reason.
    """
    codes = np.asarray(codes)
    labels = np.asarray(labels)
    n = len(codes)
    if n == 0:
        raise ValueError("empty training set")
    if labels.shape != (n,):
        raise ValueError(f"{n} windows but labels of shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= model.config.num_classes:
        raise ValueError(f"labels must lie in [0, {model.config.num_classes})")
    optimizer = optimizer or config.make_optimizer()
    shuffle_rng = child_rng(config.seed, "shuffle")
    dropout_rng = child_rng(config.seed, "dropout")
    params = model.trainable()
    cfg = model.config
    T = codes.shape[1]
    shard = config.shard_size or config.batch_size
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    history = []
    try:
        for epoch in range(1, config.epochs + 1):
            started = time.perf_counter()
            order = shuffle_rng.permutation(n) if config.shuffle else np.arange(n)
            loss_sum = 0.0
            preds = np.empty(n, dtype=np.int64)
            for b, lo in enumerate(range(0, n, config.batch_size)):
                idx = order[lo:lo + config.batch_size]
                B = len(idx)
                masks = []
                if cfg.dropout_rate > 0:
                    masks = [dropout_mask((B, T, h), cfg.dropout_rate, dropout_rng, cfg.dtype)
                             for h in cfg.layer_sizes]
                jobs = []
                for s in range(0, B, shard):
                    sl = slice(s, s + shard)
                    jobs.append((model, codes[idx[sl]], labels[idx[sl]], [m[sl] for m in masks], 1.0 / B))
                if pool is None:
                    results = [_shard_pass(*job) for job in jobs]
                else:
                    results = list(pool.map(lambda job: _shard_pass(*job), jobs))
                grads = dict(results[0][2])
                for _, _, g in results[1:]:
                    for k in grads:
                        grads[k] = grads[k] + g[k]
                batch_losses = np.concatenate([r[0] for r in results])
                batch_loss = float(batch_losses.sum())
                if not np.isfinite(batch_loss):
                    raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}")
                loss_sum += batch_loss
                preds[lo:lo + B] = np.concatenate([r[1] for r in results])
                grads = {k: grads[k] for k in params}
                if config.clip_norm > 0:
                    grads = clip_global_norm(grads, config.clip_norm)
                try:
                    optimizer.step(params, grads)
                except NumericalError as exc:
                    raise NumericalError(f"{exc} at epoch {epoch}, batch {b}") from None
            cm = ConfusionMatrix.from_predictions(labels[order], preds, cfg.num_classes)
            seconds = time.perf_counter() - started if config.record_seconds else 0.0
            metrics = EpochMetrics(epoch, loss_sum / n, cm.accuracy(), cm.macro_f1(), seconds)
            history.append(metrics)
            log.info("epoch %d loss %.4f acc %.4f macro_f1 %.4f", epoch, metrics.loss,
                     metrics.accuracy, metrics.macro_f1)
            if on_epoch is not None:
                on_epoch(metrics)
    finally:
        if pool is not None:
            pool.shutdown()
    return model, history, optimizer


METRIC_FIELDS = ("epoch", "loss", "accuracy", "macro_f1", "seconds")


def emit_metrics(metrics: list[EpochMetrics], path):
    if not metrics:
        raise ValueError("no metrics to write")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_FIELDS)
        for m in sorted(metrics, key=lambda m: m.epoch):
            row = asdict(m)
            writer.writerow([m.epoch] + [repr(float(row[k])) for k in METRIC_FIELDS[1:]])


def read_metrics(path) -> list[EpochMetrics]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [EpochMetrics(int(r["epoch"]), *(float(r[k]) for k in METRIC_FIELDS[1:])) for r in reader]
