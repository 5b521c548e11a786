import numpy as np

from intec.core import NO_LABEL, WindowBatch


def majority_label(labels) -> int:
    """Most frequent label; ties go to the smallest class id."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        return NO_LABEL
    values, counts = np.unique(labels, return_counts=True)
    return int(values[np.argmax(counts)])  # np.unique sorts, argmax takes first max


def window_arrays(rows, labels, window):
    """Non-overlapping ``(n_windows, window, F)`` stack and majority labels."""
    if window < 1:
        raise ValueError("window must be >= 1")
    rows = np.asarray(rows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = rows.shape[0] // window
    X = rows[: n * window].reshape(n, window, rows.shape[1])
    y = np.array([majority_label(labels[i * window:(i + 1) * window])
                  for i in range(n)], dtype=np.int64)
    return X, y


def split_sequences(rows, window, labels=None, device_id="", created_at=0):
    """Cut ``rows`` into ``floor(N / window)`` consecutive windows, dropping the tail."""
    rows = np.asarray(rows, dtype=np.float64)
    if labels is None:
        labels = np.full(rows.shape[0], NO_LABEL)
    X, y = window_arrays(rows, labels, window)
    return [WindowBatch(device_id, seq, created_at, X[seq], int(y[seq]))
            for seq in range(X.shape[0])]
