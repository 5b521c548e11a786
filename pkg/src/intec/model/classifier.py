import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from intec.core import N_CLASSES
from intec.errors import EmptyInput, ShapeMismatch
from intec.model.training import TrainConfig, fit_with_early_stopping


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(proba, y):
    picked = proba[np.arange(y.shape[0]), y]
    return float(-np.mean(np.log(np.clip(picked, 1e-300, None))))


def _as_windows(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ShapeMismatch(f"expected (n, window, features), got shape {X.shape}")
    return X


class WindowClassifier(ClassifierMixin, BaseEstimator):
    """Reference window classifier: flatten -> dense(hidden, ReLU) -> dense(13, softmax).

    Trained with momentum SGD on categorical cross-entropy; ``fit`` keeps the
    weights of the epoch with the lowest validation loss.  Any model that
    implements :class:`~intec.model.training.Trainable` can be trained the
    same way.
    """

    def __init__(self, hidden=128, n_classes=N_CLASSES, learning_rate=0.05,
                 momentum=0.9, batch_size=32, max_epochs=50, patience=10, seed=0):
        self.hidden = hidden
        self.n_classes = n_classes
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed

    # -- Trainable ------------------------------------------------------------

    def init_weights(self, input_shape, rng):
        self.input_shape_ = tuple(int(d) for d in input_shape)
        d = int(np.prod(self.input_shape_))
        self.weights_ = {
            "W1": rng.normal(0.0, np.sqrt(2.0 / d), size=(d, self.hidden)),
            "b1": np.zeros(self.hidden),
            "W2": rng.normal(0.0, np.sqrt(1.0 / self.hidden), size=(self.hidden, self.n_classes)),
            "b2": np.zeros(self.n_classes),
        }
        self._velocity = {k: np.zeros_like(v) for k, v in self.weights_.items()}

    def get_weights(self):
        return self.weights_

    def set_weights(self, weights):
        self.weights_ = {k: np.array(v, dtype=np.float64) for k, v in weights.items()}

    def _forward(self, X):
        w = self.weights_
        flat = X.reshape(X.shape[0], -1)
        z1 = flat @ w["W1"] + w["b1"]
        a1 = np.maximum(z1, 0.0)
        return flat, z1, a1, softmax(a1 @ w["W2"] + w["b2"])

    def gradients(self, X, y):
        """Mean cross-entropy and its gradient for every weight tensor."""
        flat, z1, a1, proba = self._forward(X)
        n = X.shape[0]
        loss = cross_entropy(proba, y)
        g2 = proba.copy()
        g2[np.arange(n), y] -= 1.0
        g2 /= n
        g1 = (g2 @ self.weights_["W2"].T) * (z1 > 0)
        grads = {"W2": a1.T @ g2, "b2": g2.sum(axis=0),
                 "W1": flat.T @ g1, "b1": g1.sum(axis=0)}
        return loss, grads

    def train_epoch(self, X, y, rng):
        order = rng.permutation(X.shape[0])
        total = 0.0
        for start in range(0, X.shape[0], self.batch_size):
            idx = order[start:start + self.batch_size]
            loss, grads = self.gradients(X[idx], y[idx])
            total += loss * idx.shape[0]
            for key, g in grads.items():
                v = self._velocity[key]
                v *= self.momentum
                v -= self.learning_rate * g
                self.weights_[key] += v
        return total / X.shape[0]

    def loss(self, X, y):
        return cross_entropy(self._forward(_as_windows(X))[3], np.asarray(y, dtype=np.int64))

    # -- estimator API --------------------------------------------------------

    def fit(self, X, y, X_val=None, y_val=None):
        X = _as_windows(X)
        y = np.asarray(y, dtype=np.int64)
        if X.shape[0] == 0:
            raise EmptyInput("no training windows")
        if y.shape[0] != X.shape[0]:
            raise ShapeMismatch("one label per window is required")
        if X_val is None:
            X_val, y_val = X, y
        X_val = _as_windows(X_val)
        y_val = np.asarray(y_val, dtype=np.int64)
        if X_val.shape[1:] != X.shape[1:]:
            raise ShapeMismatch(
                f"validation windows {X_val.shape[1:]} differ from training {X.shape[1:]}")
        if y.min() < 0 or y.max() >= self.n_classes:
            raise ValueError("labels outside 0..n_classes-1")
        cfg = TrainConfig(max_epochs=self.max_epochs, patience=self.patience,
                          learning_rate=self.learning_rate, momentum=self.momentum,
                          batch_size=self.batch_size, seed=self.seed)
        self.history_ = fit_with_early_stopping(self, X, y, X_val, y_val, cfg)
        self.classes_ = np.arange(self.n_classes)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "weights_")
        X = _as_windows(X)
        if X.shape[1:] != self.input_shape_:
            raise ShapeMismatch(f"window shape {X.shape[1:]} != {self.input_shape_}")
        return self._forward(X)[3]

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)


def train_classifier(X_train, y_train, X_val, y_val, cfg: TrainConfig, hidden=128):
    """Train the reference classifier; returns ``(model, history)``."""
    model = WindowClassifier(hidden=hidden, learning_rate=cfg.learning_rate,
                             momentum=cfg.momentum, batch_size=cfg.batch_size,
                             max_epochs=cfg.max_epochs, patience=cfg.patience,
                             seed=cfg.seed)
    model.fit(X_train, y_train, X_val, y_val)
    return model, model.history_
