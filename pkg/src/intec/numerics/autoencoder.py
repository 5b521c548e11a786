import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from intec.errors import DivergedError, RankError


class Autoencoder(TransformerMixin, BaseEstimator):
    """Single-bottleneck autoencoder: ``tanh`` encoder F->k, linear decoder k->F.

    Trained with plain mini-batch SGD on the mean squared reconstruction
    error.  Biases start at zero and weights are drawn from ``seed``, so two
    fits with the same arguments produce bitwise-identical weights.
    """

    name = "AE"

    def __init__(self, n_components=7, epochs=50, learning_rate=0.05,
                 batch_size=32, seed=0):
        self.n_components = n_components
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed

    def _encode(self, X):
        return np.tanh(X @ self.encoder_weights_ + self.encoder_bias_)

    def _decode(self, H):
        return H @ self.decoder_weights_ + self.decoder_bias_

    def reconstruction_error(self, X):
        X = np.asarray(X, dtype=np.float64)
        return float(np.mean((self._decode(self._encode(X)) - X) ** 2))

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        n, f = X.shape
        k = self.n_components
        if not 1 <= k < f:
            raise RankError(f"n_components={k} must be in 1..{f - 1}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        rng = np.random.default_rng(self.seed)
        self.encoder_weights_ = rng.normal(0.0, 1.0 / np.sqrt(f), size=(f, k))
        self.encoder_bias_ = np.zeros(k)
        self.decoder_weights_ = rng.normal(0.0, 1.0 / np.sqrt(k), size=(k, f))
        self.decoder_bias_ = np.zeros(f)
        self.n_features_in_ = f

        lr = self.learning_rate
        history = [self.reconstruction_error(X)]
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                xb = X[order[start:start + self.batch_size]]
                h = self._encode(xb)
                err = self._decode(h) - xb
                # d(mean sq err)/d(output)
                g_out = 2.0 * err / err.size
                g_wd = h.T @ g_out
                g_bd = g_out.sum(axis=0)
                g_h = (g_out @ self.decoder_weights_.T) * (1.0 - h * h)
                g_we = xb.T @ g_h
                g_be = g_h.sum(axis=0)
                self.decoder_weights_ -= lr * g_wd
                self.decoder_bias_ -= lr * g_bd
                self.encoder_weights_ -= lr * g_we
                self.encoder_bias_ -= lr * g_be
            loss = self.reconstruction_error(X)
            if not np.isfinite(loss):
                raise DivergedError("autoencoder loss became non-finite")
            history.append(loss)
        self.loss_history_ = history
        return self

    def transform(self, X):
        check_is_fitted(self, "encoder_weights_")
        return self._encode(np.asarray(X, dtype=np.float64))

    def inverse_transform(self, Z):
        check_is_fitted(self, "decoder_weights_")
        return self._decode(np.asarray(Z, dtype=np.float64))


def fit_autoencoder(rows, k, epochs, learning_rate, seed) -> Autoencoder:
    return Autoencoder(n_components=k, epochs=epochs, learning_rate=learning_rate,
                       seed=seed).fit(rows)


def ae_encode(model: Autoencoder, row):
    return model.transform(row)
