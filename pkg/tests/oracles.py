"""Independent reference computations used by several test modules."""
import numpy as np


def power_deflation_singular_values(X, k=None, tol=1e-13, max_iter=1_000_000, seed=0):
    """Singular values of X from power iteration with deflation on X X^T."""
    B = X @ X.T
    k = min(X.shape) if k is None else k
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(k):
        v = rng.standard_normal(B.shape[0])
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(max_iter):
            w = B @ v
            nw = np.linalg.norm(w)
            if nw == 0.0:
                break
            w /= nw
            new_lam = w @ B @ w
            done = abs(new_lam - lam) <= tol * abs(new_lam) and np.linalg.norm(w - v) < 1e-9
            v, lam = w, new_lam
            if done:
                break
        out.append(np.sqrt(max(lam, 0.0)))
        B = B - lam * np.outer(v, v)
    return np.array(out)
