"""Method-of-snapshots POD with a cyclic Jacobi eigensolver."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .snapshots import SnapshotMatrix

RANK_CUTOFF = 1e-12


class DegenerateInputError(ValueError):
    pass


class ConvergenceError(ArithmeticError):
    pass


class ThresholdUnreachable(ValueError):
    def __init__(self, eps: float, best: float, n_modes: int):
        super().__init__(
            f"threshold {eps:g} unreachable: best relative residual {best:.3e} with {n_modes} modes"
        )
        self.eps = eps
        self.best = best
        self.n_modes = n_modes


def _round_robin(n: int):
    """Disjoint index pairs per round; every pair appears once per sweep."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        rounds.append([(min(p, q), max(p, q)) for p, q in pairs if p < n and q < n])
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_eigen(K, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Rotations are applied in parallel (round-robin) order.  Returns
    eigenvalues in descending order and the matching orthonormal eigenvectors
    as columns.
    """
    A = np.array(K, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    n = A.shape[0]
    fro = np.linalg.norm(A)
    if np.linalg.norm(A - A.T) > 1e-12 * max(fro, np.finfo(float).tiny):
        raise ValueError("matrix is not symmetric")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    if n == 1 or fro == 0.0:
        return np.diag(A).copy(), V

    rounds = [np.array(r, dtype=np.int64).reshape(-1, 2) for r in _round_robin(n)]
    target = tol * fro
    off = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        if np.max(np.abs(A[off])) < target:
            break
        for pq in rounds:
            p, q = pq[:, 0], pq[:, 1]
            apq = A[p, q]
            active = apq != 0.0
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            app, aqq = A[p, p], A[q, q]
            with np.errstate(over="ignore"):
                theta = (aqq - app) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.hypot(1.0, theta))
            t[theta == 0.0] = 1.0
            c = 1.0 / np.sqrt(1.0 + t**2)
            s = t * c
            # A <- A J, then A <- J^T A, V <- V J
            Ap, Aq = A[:, p].copy(), A[:, q].copy()
            A[:, p] = c * Ap - s * Aq
            A[:, q] = s * Ap + c * Aq
            Ap, Aq = A[p, :].copy(), A[q, :].copy()
            A[p, :] = c[:, None] * Ap - s[:, None] * Aq
            A[q, :] = s[:, None] * Ap + c[:, None] * Aq
            A[p, p] = app - t * apq
            A[q, q] = aqq + t * apq
            A[p, q] = 0.0
            A[q, p] = 0.0
            Vp, Vq = V[:, p].copy(), V[:, q].copy()
            V[:, p] = c * Vp - s * Vq
            V[:, q] = s * Vp + c * Vq
    else:
        if np.max(np.abs(A[off])) >= target:
            raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")
    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


@dataclass(frozen=True)
class PodResult:
    singular_values: np.ndarray
    modes: np.ndarray
    right_vectors: np.ndarray

    @property
    def energy(self) -> np.ndarray:
        """Cumulative normalised squared singular values."""
        s2 = self.singular_values**2
        return np.cumsum(s2) / np.sum(s2)

    @property
    def n_modes(self) -> int:
        return self.modes.shape[1]

    def residuals(self) -> np.ndarray:
        """Relative residual after ``R = 1, ..., n_modes`` modes (spectral formula)."""
        s2 = self.singular_values**2
        tail = np.cumsum(s2[::-1])[::-1]  # tail[i] = sum_{l >= i} s_l^2
        tail = np.append(tail[1:], 0.0)
        return np.sqrt(np.maximum(tail, 0.0) / np.sum(s2))[: self.n_modes]


def _fix_signs(modes: np.ndarray, right: np.ndarray):
    idx = np.argmax(np.abs(modes), axis=0)
    sgn = np.sign(modes[idx, np.arange(modes.shape[1])])
    sgn[sgn == 0] = 1.0
    return modes * sgn, right * sgn


def pod(m: SnapshotMatrix | np.ndarray) -> PodResult:
    """POD of a snapshot matrix through the eigenpairs of its Gram matrix."""
    X = m.data if isinstance(m, SnapshotMatrix) else np.asarray(m, dtype=float)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ValueError("need a 2-D matrix with at least one column")
    if not np.all(np.isfinite(X)):
        raise ValueError("snapshot matrix has non-finite entries")
    if not np.any(X):
        raise DegenerateInputError("snapshot matrix is identically zero")
    # scale by a power of two (exact) so the Gram matrix cannot overflow
    scale = float(np.ldexp(1.0, np.frexp(np.max(np.abs(X)))[1]))
    X = X / scale
    K = X.T @ X
    K = 0.5 * (K + K.T)
    lam, V = jacobi_eigen(K)
    # ||X v_i|| equals sqrt(lambda_i) but keeps small singular values accurate
    # to eps * sigma_1 instead of sqrt(eps) * sigma_1
    XV = X @ V
    sigma = np.linalg.norm(XV, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma, V, XV = sigma[order], V[:, order], XV[:, order]
    keep = sigma > sigma[0] * RANK_CUTOFF
    Vk = V[:, keep]
    modes = XV[:, keep] / sigma[keep]
    # Gram-based modes of small singular values lose orthogonality; restore it
    q, r = np.linalg.qr(modes)
    q *= np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))
    modes, Vk = _fix_signs(q, Vk)
    V = V.copy()
    V[:, keep] = Vk
    return PodResult(sigma * scale, modes, V)


def projection_error(m: SnapshotMatrix | np.ndarray, result: PodResult, R: int) -> float:
    """Relative Frobenius residual of projecting every snapshot onto the first R modes.

    Cross-checked against the singular-value tail; the squared residuals must
    agree within 1e-10.
    """
    X = m.data if isinstance(m, SnapshotMatrix) else np.asarray(m, dtype=float)
    if not 1 <= R <= result.n_modes:
        raise ValueError(f"R must lie in [1, {result.n_modes}], got {R}")
    Phi = result.modes[:, :R]
    E = X - Phi @ (Phi.T @ X)
    direct2 = np.sum(E**2) / np.sum(X**2)
    spectral2 = result.residuals()[R - 1] ** 2
    if abs(direct2 - spectral2) > 1e-10:
        raise ArithmeticError(
            f"projection residual {np.sqrt(direct2):.3e} disagrees with singular-value tail "
            f"{np.sqrt(spectral2):.3e}"
        )
    return float(np.sqrt(direct2))


def modes_for_threshold(result: PodResult, eps: float) -> int:
    """Smallest mode count whose relative residual is at most ``eps``."""
    if not 0 < eps < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {eps}")
    res = result.residuals()
    hit = np.flatnonzero(res <= eps)
    if hit.size == 0:
        raise ThresholdUnreachable(eps, float(res[-1]), result.n_modes)
    return int(hit[0]) + 1


def modes_at(result: PodResult, thresholds) -> dict[str, int | None]:
    """``{"1e-3": R, ...}``; ``None`` where a threshold cannot be met."""
    out = {}
    for eps in thresholds:
        key = format_threshold(eps)
        try:
            out[key] = modes_for_threshold(result, eps)
        except ThresholdUnreachable:
            out[key] = None
    return out


def format_threshold(eps: float) -> str:
    mant, exp = f"{eps:e}".split("e")
    mant = mant.rstrip("0").rstrip(".")
    return f"{mant}e{int(exp)}"
