"""Epoch loop with validation-loss early stopping and best-checkpoint restore."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np

from intec.errors import DivergedError


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 50
    patience: int = 10
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    seed: int = 0
    # evaluate on windows of this size instead of the training size; the
    # fixed-input classifier rejects a mismatch with ShapeMismatch
    test_window: Optional[int] = None

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not 0 <= self.patience <= self.max_epochs:
            raise ValueError("patience must lie in 0..max_epochs")
        if self.test_window is not None and self.test_window < 1:
            raise ValueError("test_window must be >= 1")


class Trainable(Protocol):
    """What the trainer needs from a model; the reference MLP implements it."""

    def init_weights(self, input_shape, rng) -> None: ...

    def train_epoch(self, X, y, rng) -> float: ...

    def loss(self, X, y) -> float: ...

    def get_weights(self) -> dict: ...

    def set_weights(self, weights: dict) -> None: ...


class EarlyStopping:
    """Stop once the monitored loss has not improved for ``patience`` epochs.

    An epoch improves only if its loss is strictly below the best so far.
    """

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch: int, loss: float) -> bool:
        """Record ``loss`` for ``epoch`` (1-based); return True to stop."""
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = epoch
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0

    @property
    def epochs(self) -> int:
        return len(self.val_loss)


def fit_with_early_stopping(model: Trainable, X, y, X_val, y_val,
                            cfg: TrainConfig) -> TrainHistory:
    rng = np.random.default_rng(cfg.seed)
    model.init_weights(X.shape[1:], rng)
    stopper = EarlyStopping(cfg.patience)
    history = TrainHistory()
    best = copy.deepcopy(model.get_weights())
    for epoch in range(1, cfg.max_epochs + 1):
        train_loss = model.train_epoch(X, y, rng)
        val_loss = model.loss(X_val, y_val)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise DivergedError(f"non-finite loss at epoch {epoch}")
        history.train_loss.append(float(train_loss))
        history.val_loss.append(float(val_loss))
        stop = stopper.update(epoch, val_loss)
        if stopper.best_epoch == epoch:
            best = copy.deepcopy(model.get_weights())
        if stop:
            break
    history.best_epoch = stopper.best_epoch
    history.stopped_epoch = len(history.val_loss)
    model.set_weights(best)
    return history
