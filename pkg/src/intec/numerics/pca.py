import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from intec.errors import RankError
from intec.numerics.linalg import jacobi_eigh


class PCA(TransformerMixin, BaseEstimator):
    """Principal component projection from the population covariance matrix.

    Parameters
    ----------
    n_components : int
        Number of retained components ``k``; must satisfy
        ``1 <= k <= min(n_samples - 1, n_features)``.
    """

    name = "PCA"

    def __init__(self, n_components=7):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        n, f = X.shape
        k = self.n_components
        if not 1 <= k <= min(n - 1, f):
            raise RankError(f"n_components={k} outside 1..{min(n - 1, f)}")
        self.mean_ = X.mean(axis=0)
        centered = X - self.mean_
        cov = centered.T @ centered / n
        eigvals, eigvecs = jacobi_eigh(cov)
        self.components_ = eigvecs[:, :k].T.copy()
        self.explained_variance_ = np.clip(eigvals[:k], 0.0, None)
        self.n_features_in_ = f
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = np.asarray(X, dtype=np.float64)
        return (X - self.mean_) @ self.components_.T

    def inverse_transform(self, Z):
        check_is_fitted(self, "components_")
        return np.asarray(Z, dtype=np.float64) @ self.components_ + self.mean_


def reduced_dimension(n_features, reduction_rate):
    """Features kept after removing ``reduction_rate`` of them (21 @ 0.66 -> 7)."""
    if not 0.0 <= reduction_rate < 1.0:
        raise ValueError("reduction_rate must lie in [0, 1)")
    return max(1, int(round(n_features * (1.0 - reduction_rate))))


def fit_pca(rows, k) -> PCA:
    return PCA(n_components=k).fit(rows)


def pca_transform(model: PCA, row):
    return model.transform(row)
