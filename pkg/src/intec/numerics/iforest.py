import math
from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from intec.errors import EmptyInput


@lru_cache(maxsize=None)
def harmonic(i: int) -> float:
    return math.fsum(1.0 / j for j in range(1, i + 1))


def average_path_length(n: int) -> float:
    """Mean unsuccessful-search depth in a random BST of ``n`` keys."""
    if n <= 1:
        return 0.0
    return 2.0 * harmonic(n - 1) - 2.0 * (n - 1) / n


class IsolationForest(OutlierMixin, BaseEstimator):
    """Isolation forest over random axis-parallel splits.

    All trees share one flat node table (``feature_``, ``threshold_``,
    ``left_``, ``right_``, ``leaf_value_``) so scoring walks every tree in
    lock-step with vectorised gathers.  ``feature_ == -1`` marks a leaf,
    whose ``leaf_value_`` is its depth plus the average path length of the
    training points it still holds.

    A row is *valid* when its anomaly score is below ``threshold``.
    """

    def __init__(self, n_estimators=100, max_samples=256, threshold=0.5, seed=0):
        self.n_estimators = n_estimators
        self.max_samples = max_samples
        self.threshold = threshold
        self.seed = seed

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=1)
        n_rows = X.shape[0]
        n = self.max_samples
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if n < 2:
            raise EmptyInput("subsample size must be at least 2")
        if n > n_rows:
            raise EmptyInput(f"subsample size {n} exceeds {n_rows} rows")
        rng = np.random.default_rng(self.seed)
        self.height_limit_ = int(math.ceil(math.log2(n)))

        feature, threshold, left, right, leaf_value, depth_of = [], [], [], [], [], []
        roots = []
        for _ in range(self.n_estimators):
            sample = X[rng.choice(n_rows, size=n, replace=False)]
            roots.append(len(feature))
            stack = [(len(feature), sample, 0)]
            feature.append(-1); threshold.append(0.0); left.append(-1)
            right.append(-1); leaf_value.append(0.0); depth_of.append(0)
            while stack:
                node, data, depth = stack.pop()
                depth_of[node] = depth
                split = None
                if depth < self.height_limit_ and data.shape[0] > 1:
                    lo = data.min(axis=0)
                    hi = data.max(axis=0)
                    for q in rng.permutation(data.shape[1]):
                        if hi[q] > lo[q]:
                            p = rng.uniform(lo[q], hi[q])
                            if p <= lo[q]:
                                p = np.nextafter(lo[q], hi[q])
                            split = (q, p)
                            break
                if split is None:
                    leaf_value[node] = depth + average_path_length(data.shape[0])
                    continue
                q, p = split
                mask = data[:, q] < p
                feature[node] = int(q)
                threshold[node] = float(p)
                for side, part in ((left, data[mask]), (right, data[~mask])):
                    child = len(feature)
                    side[node] = child
                    feature.append(-1); threshold.append(0.0); left.append(-1)
                    right.append(-1); leaf_value.append(0.0); depth_of.append(0)
                    stack.append((child, part, depth + 1))

        self.feature_ = np.asarray(feature, dtype=np.intp)
        self.threshold_ = np.asarray(threshold)
        self.left_ = np.asarray(left, dtype=np.intp)
        self.right_ = np.asarray(right, dtype=np.intp)
        self.leaf_value_ = np.asarray(leaf_value)
        self.depth_ = np.asarray(depth_of, dtype=np.intp)
        self.roots_ = np.asarray(roots, dtype=np.intp)
        self.subsample_size_ = n
        self.n_features_in_ = X.shape[1]
        return self

    def path_lengths(self, X):
        """``(n_estimators, n_rows)`` matrix of per-tree path lengths h(x)."""
        check_is_fitted(self, "feature_")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        m = X.shape[0]
        cols = np.arange(m)
        node = np.repeat(self.roots_[:, None], m, axis=1)
        for _ in range(self.height_limit_):
            feat = self.feature_[node]
            inner = feat >= 0
            if not inner.any():
                break
            vals = X[cols[None, :].repeat(node.shape[0], 0), np.where(inner, feat, 0)]
            go_left = vals < self.threshold_[node]
            nxt = np.where(go_left, self.left_[node], self.right_[node])
            node = np.where(inner, nxt, node)
        return self.leaf_value_[node]

    def score_samples(self, X):
        """Anomaly score ``2 ** (-E[h(x)] / c(n))`` in (0, 1); higher is more anomalous."""
        mean_path = self.path_lengths(X).mean(axis=0)
        return np.power(2.0, -mean_path / average_path_length(self.subsample_size_))

    def is_valid(self, X):
        return self.score_samples(X) < self.threshold

    def predict(self, X):
        """+1 for valid rows, -1 for outliers (scikit-learn convention)."""
        return np.where(self.is_valid(X), 1, -1)


def fit_isolation_forest(rows, T, n, seed) -> IsolationForest:
    return IsolationForest(n_estimators=T, max_samples=n, seed=seed).fit(rows)


def if_score(model: IsolationForest, row) -> float:
    return float(model.score_samples(np.atleast_2d(row))[0])


def if_valid(model: IsolationForest, row, threshold=0.5) -> bool:
    return if_score(model, row) < threshold
