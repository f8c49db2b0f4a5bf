"""SGD training, leave-one-subject-out evaluation and run reports."""

from __future__ import annotations

import logging
import math
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .errors import ParameterError, ProtocolError, TrainingError
from .metrics import Metrics, compute_metrics
from .signal_io import Fold, check_fold, losocv_folds
from .tensor import backward, cross_entropy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.005
    batch_size: int = 16
    epochs: int = 20
    seed: int = 0
    shuffle: bool = True
    patience: int | None = 5
    clip_grad_norm: float | None = 1.0
    averaging: str = "macro"

    def __post_init__(self):
        if self.learning_rate < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ParameterError("learning_rate, momentum and weight_decay must be non-negative")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ParameterError("epochs must be >= 0")
        if self.patience is not None and self.patience < 1:
            raise ParameterError("patience must be >= 1 or None")
        if self.clip_grad_norm is not None and self.clip_grad_norm <= 0:
            raise ParameterError("clip_grad_norm must be positive or None")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def clip_grads(grads: dict, max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``; returns the original norm."""
    total = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values() if g is not None))
    if total > max_norm:
        scale = max_norm / total
        for k, g in grads.items():
            if g is not None:
                grads[k] = g * np.asarray(scale, dtype=g.dtype)
    return total


def sgd_step(params, grads, state: dict, cfg: TrainConfig) -> None:
    """In-place SGD with classical momentum and L2 weight decay added to the gradient.

    ``v <- momentum * v + g + weight_decay * w``; ``w <- w - lr * v``.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise TrainingError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name}")
        step = g + cfg.weight_decay * p.data if cfg.weight_decay else g
        v = state.get(name)
        v = np.array(step, copy=True) if v is None else cfg.momentum * v + step
        state[name] = v
        p.data -= (cfg.learning_rate * v).astype(p.dtype, copy=False)


@dataclass
class LabeledData:
    """Model inputs aligned with segment ids, subjects and class labels."""

    ids: list[str]
    subjects: list[str]
    inputs: np.ndarray
    labels: np.ndarray
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self._index = {sid: i for i, sid in enumerate(self.ids)}
        if len(self._index) != len(self.ids):
            raise ProtocolError("duplicate segment ids")

    def rows(self, ids: Sequence[str]) -> np.ndarray:
        return np.array([self._index[i] for i in ids], dtype=np.int64)

    @property
    def subject_of(self) -> dict[str, str]:
        return dict(zip(self.ids, self.subjects))


def predict(model, inputs: np.ndarray, batch_size: int = 64) -> np.ndarray:
    preds = []
    for start in range(0, len(inputs), batch_size):
        logits = model.forward(inputs[start : start + batch_size])
        preds.append(np.argmax(logits.data, axis=-1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def train_model(model, inputs: np.ndarray, labels: np.ndarray, cfg: TrainConfig, seed: int | None = None,
                on_epoch: Callable[[int, float], None] | None = None) -> list[float]:
    """Minibatch SGD on cross-entropy; returns mean loss per epoch.

    Epoch ``e`` shuffles with a generator seeded by ``(seed, e)``. Training
    stops early once the epoch loss has not improved for ``cfg.patience`` epochs.
    """
    n = len(inputs)
    if n == 0:
        raise ProtocolError("training set is empty")
    seed = cfg.seed if seed is None else seed
    state: dict[str, np.ndarray] = {}
    curve: list[float] = []
    best, stale = np.inf, 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([seed, epoch]).permutation(n) if cfg.shuffle else np.arange(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            for p in model.params.values():
                p.grad = None
            loss = cross_entropy(model.forward(inputs[idx], training=True), labels[idx])
            backward(loss)
            grads = {k: p.grad for k, p in model.params.items()}
            if cfg.clip_grad_norm is not None:
                clip_grads(grads, cfg.clip_grad_norm)
            sgd_step(model.params, grads, state, cfg)
            total += float(loss.data) * len(idx)
        curve.append(total / n)
        if on_epoch:
            on_epoch(epoch, curve[-1])
        if cfg.patience is not None:
            if curve[-1] < best:
                best, stale = curve[-1], 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    log.info("early stop after epoch %d (loss %.4f)", epoch + 1, curve[-1])
                    break
    return curve


def train_fold(model, fold: Fold, data: LabeledData, cfg: TrainConfig, seed: int | None = None):
    """Train ``model`` on the fold's training segments; returns ``(model, curve)``."""
    if not fold.train_segment_ids:
        raise ProtocolError(f"fold {fold.held_out_subject} has an empty training set")
    rows = data.rows(fold.train_segment_ids)
    curve = train_model(model, data.inputs[rows], data.labels[rows], cfg, seed)
    return model, curve


@dataclass
class FoldReport:
    held_out_subject: str
    metrics: Metrics
    curve: list[float]
    n_train: int = 0
    n_test: int = 0

    def to_dict(self) -> dict:
        return {
            "held_out_subject": self.held_out_subject,
            "metrics": self.metrics.to_dict(),
            "curve": list(self.curve),
            "n_train": self.n_train,
            "n_test": self.n_test,
        }


@dataclass
class RunReport:
    folds: list[FoldReport]
    config: dict
    seed: int
    version: str = __version__
    created: str = ""

    @property
    def average(self) -> dict[str, float]:
        keys = ("accuracy", "precision", "recall", "f1")
        return {k: float(np.mean([getattr(f.metrics, k) for f in self.folds])) for k in keys}

    def to_dict(self) -> dict:
        return {
            "folds": [f.to_dict() for f in self.folds],
            "average": self.average,
            "average_weighted": {
                k: float(np.mean([f.metrics.aggregate("weighted")[k] for f in self.folds]))
                for k in ("precision", "recall", "f1")
            },
            "config": self.config,
            "seed": self.seed,
            "version": self.version,
            "created": self.created,
        }


def fold_seed(seed: int, subject: str) -> int:
    """Per-fold seed: ``seed`` XOR a stable CRC32 of the subject id."""
    return (int(seed) ^ zlib.crc32(subject.encode("utf-8"))) & 0x7FFFFFFF


def run_losocv(
    data: LabeledData,
    make_model: Callable[[int], object],
    cfg: TrainConfig,
    num_classes: int,
    checkpoint_dir: str | Path | None = None,
    config_snapshot: dict | None = None,
    folds: list[Fold] | None = None,
) -> RunReport:
    """Leave-one-subject-out: fresh model per fold, metrics on the held-out subject only.

    ``make_model(seed)`` must return a newly initialized model.
    """
    if folds is None:
        stub = [_IdSubject(i, s) for i, s in zip(data.ids, data.subjects)]
        folds = losocv_folds(stub)
    subject_of = data.subject_of
    reports = []
    for fold in folds:
        check_fold(fold, subject_of)
        if not fold.test_segment_ids:
            raise ProtocolError(f"fold {fold.held_out_subject} has no test segments")
        s = fold_seed(cfg.seed, fold.held_out_subject)
        model = make_model(s)
        model, curve = train_fold(model, fold, data, cfg, seed=s)
        rows = data.rows(fold.test_segment_ids)
        preds = predict(model, data.inputs[rows])
        metrics = compute_metrics(preds, data.labels[rows], num_classes, cfg.averaging)
        log.info("fold %s: accuracy %.4f", fold.held_out_subject, metrics.accuracy)
        reports.append(FoldReport(fold.held_out_subject, metrics, curve, len(fold.train_segment_ids), len(rows)))
        if checkpoint_dir is not None:
            from .models import save_params

            save_params(Path(checkpoint_dir) / f"fold_{fold.held_out_subject}.esvt", model)
    snapshot = dict(config_snapshot or {})
    snapshot.setdefault("train", asdict(cfg))
    return RunReport(reports, snapshot, cfg.seed)


@dataclass
class _IdSubject:
    _id: str
    subject_id: str

    @property
    def segment_id(self) -> str:
        return self._id
