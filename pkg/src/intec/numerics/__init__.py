"""Numeric kernels written with the scikit-learn estimator interface."""
from intec.numerics.autoencoder import Autoencoder, ae_encode, fit_autoencoder
from intec.numerics.iforest import (IsolationForest, average_path_length,
                                    fit_isolation_forest, if_score, if_valid)
from intec.numerics.linalg import jacobi_eigh
from intec.numerics.pca import PCA, fit_pca, pca_transform, reduced_dimension
from intec.numerics.scaler import ZScoreScaler, fit_scaler, scale
from intec.numerics.windows import majority_label, split_sequences, window_arrays

__all__ = [
    "Autoencoder", "IsolationForest", "PCA", "ZScoreScaler", "ae_encode",
    "average_path_length", "fit_autoencoder", "fit_isolation_forest", "fit_pca",
    "fit_scaler", "if_score", "if_valid", "jacobi_eigh", "majority_label",
    "pca_transform", "reduced_dimension", "scale", "split_sequences",
    "window_arrays",
]
