import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from intec.errors import EmptyInput


class ZScoreScaler(TransformerMixin, BaseEstimator):
    """Column-wise z-score standardisation with population (1/N) variance.

    Columns whose standard deviation is zero (relative to their magnitude)
    get a unit scale, so they map to exactly zero instead of NaN.
    """

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=1)
        if X.shape[0] < 2:
            raise EmptyInput("scaler needs at least two rows")
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        degenerate = std <= 1e-12 * (1.0 + np.abs(self.mean_))
        self.std_ = np.where(degenerate, 1.0, std)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = np.asarray(X, dtype=np.float64)
        return (X - self.mean_) / self.std_

    def inverse_transform(self, X):
        check_is_fitted(self, "mean_")
        return np.asarray(X, dtype=np.float64) * self.std_ + self.mean_


def fit_scaler(rows) -> ZScoreScaler:
    return ZScoreScaler().fit(rows)


def scale(model: ZScoreScaler, row):
    return model.transform(row)
