"""Symmetric eigensolver used by PCA."""
import numpy as np


def jacobi_eigh(a, tol=1e-15, max_sweeps=100):
    """Eigen-decompose a real symmetric matrix with cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` sorted by descending eigenvalue;
    ``eigenvectors[:, i]`` pairs with ``eigenvalues[i]``.  Each vector's
    largest-magnitude entry is made positive so the output is unique.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise ValueError("expected a square matrix")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max(initial=0))):
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    scale = max(np.abs(a).max(initial=0.0), np.finfo(float).tiny)

    for sweep in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                g = 100.0 * abs(apq)
                # element already below the diagonal entries' resolution
                if sweep > 3 and abs(a[p, p]) + g == abs(a[p, p]) \
                        and abs(a[q, q]) + g == abs(a[q, q]):
                    a[p, q] = a[q, p] = 0.0
                    continue
                if apq == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(diff) + g == abs(diff):
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J on rows/cols p and q; V <- V J
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise ArithmeticError("Jacobi iteration did not converge")

    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    w = w[order]
    v = v[:, order]
    pivots = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[pivots, np.arange(n)])
    signs[signs == 0] = 1.0
    return w, v * signs
