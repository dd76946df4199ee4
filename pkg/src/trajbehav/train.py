"""Deterministic training loop and evaluation orchestration.

The schedule follows the reference setup: 60 epochs, batch 256, Adam at
lr 0.005 switching to 0.001 after epoch 40, cross-entropy loss (optionally
class-weighted). Every epoch reshuffles with a stream derived from
(seed, epoch) so resampling and shuffling never interact; given the same
(config, split) the final parameters are bit-identical across runs. The
last partial batch is kept. Epoch loss is the batch-size-weighted mean of
batch losses.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import samples_to_arrays
from .errors import ConfigError, NumericalError
from .hmm import HMMClassifier, fit_classifier, hmm_predict_batch
from .metrics import report
from .models import build_model, predict
from .optim import Adam
from .rng import SHUFFLE, seeded_rng


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 256
    lr_initial: float = 0.005
    lr_after: float = 0.001
    lr_switch_epoch: int = 40
    seed: int = 0
    precision: str = "fast"
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    hmm_states: int = 7
    hmm_max_iters: int = 100
    hmm_tol: float = 1e-4

    def validate(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.epochs > 0 and self.lr_switch_epoch >= self.epochs:
            raise ConfigError(
                f"lr_switch_epoch ({self.lr_switch_epoch}) must be below "
                f"epochs ({self.epochs})"
            )
        if self.precision not in ("verify", "fast"):
            raise ConfigError(f"unknown precision {self.precision!r}")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    lr: float
    seconds: float


@dataclass
class TrainLog:
    entries: list = field(default_factory=list)

    def format(self):
        lines = ["epoch\tloss\tlr\tseconds"]
        for e in self.entries:
            lines.append(f"{e.epoch}\t{e.loss:.8f}\t{e.lr:g}\t{e.seconds:.3f}")
        return "\n".join(lines) + "\n"


def lr_at(config, epoch):
    """Learning rate for a 1-indexed epoch."""
    return config.lr_initial if epoch <= config.lr_switch_epoch else config.lr_after


def train(model_kind, config, split, loss_weights=None, use_mscnn=True):
    """Train a model of `model_kind` on the split's training samples.

    Returns (model, TrainLog). For the HMM baseline the log carries one row
    per class (its final mean log-likelihood as the loss column) since the
    fit is per-class EM, not epoch-based.
    """
    config.validate()
    if not split.train:
        raise ConfigError("training split is empty")
    num_classes = len(split.class_names)
    states, labels = samples_to_arrays(split.train)

    if model_kind == "hmm":
        log = TrainLog()
        t0 = time.perf_counter()
        clf = fit_classifier(
            states, labels, split.class_names,
            n_states=config.hmm_states, max_iters=config.hmm_max_iters,
            tol=config.hmm_tol, seed=config.seed,
        )
        elapsed = time.perf_counter() - t0
        for i, m in enumerate(clf.models):
            mean_ll = m.fit_loglik[-1] / max(int((labels == i).sum()), 1)
            log.entries.append(
                EpochStats(epoch=i, loss=-mean_ll, lr=0.0, seconds=elapsed)
            )
        return clf, log

    model = build_model(
        model_kind, num_classes, seed=config.seed,
        precision=config.precision, use_mscnn=use_mscnn,
    )
    states = states.astype(model.dtype)
    weights = None
    if loss_weights is not None:
        weights = np.asarray(loss_weights, dtype=model.dtype)
        if weights.shape != (num_classes,):
            raise ConfigError(
                f"loss weights shape {weights.shape} != ({num_classes},)"
            )

    opt = Adam(
        model.param_list(), lr=config.lr_initial,
        beta1=config.beta1, beta2=config.beta2, epsilon=config.epsilon,
    )
    n = states.shape[0]
    log = TrainLog()
    for epoch in range(1, config.epochs + 1):
        opt.set_lr(lr_at(config, epoch))
        order = seeded_rng(config.seed, SHUFFLE, epoch).permutation(n)
        t0 = time.perf_counter()
        total = 0.0
        for bi, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            model.zero_grad()
            loss = ad.softmax_cross_entropy(
                model.forward(states[idx]), labels[idx], weights
            )
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {bi}"
                )
            loss.backward()
            opt.step()
            total += value * len(idx)
        log.entries.append(
            EpochStats(
                epoch=epoch, loss=total / n, lr=opt.lr,
                seconds=time.perf_counter() - t0,
            )
        )
    return model, log


def predict_batch(model, states, batch_size=1024):
    """Class predictions for stacked window states, any model kind."""
    if isinstance(model, HMMClassifier):
        return hmm_predict_batch(model, states)
    states = np.asarray(states).astype(model.dtype)
    chunks = [
        predict(model, states[i:i + batch_size])
        for i in range(0, states.shape[0], batch_size)
    ]
    return np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)


def evaluate(model, samples, class_names):
    """Metrics report of a trained model over evaluation samples.

    No resampling is ever applied here; resampling belongs to the training
    phase only.
    """
    if not samples:
        raise ConfigError("evaluation set is empty")
    states, labels = samples_to_arrays(samples)
    preds = predict_batch(model, states)
    return report(preds, labels, class_names)
