"""Small dense linear-algebra helpers shared by the GP and inference code."""

from __future__ import annotations

import numpy as np
from scipy import linalg as sla

# Relative jitter levels (times mean diagonal) tried in order before giving up.
JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)


class NumericalError(RuntimeError):
    """A numerical step failed (e.g. a factorization even after jitter escalation)."""

    def __init__(self, message: str, jitters: tuple[float, ...] = ()):
        super().__init__(message)
        self.jitters = tuple(jitters)


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def cholesky(a: np.ndarray, ladder: tuple[float, ...] = JITTER_LADDER):
    """Lower Cholesky factor of ``a`` with relative-jitter escalation.

    Returns ``(L, jitter)`` where ``jitter`` is the absolute amount added to
    the diagonal. Raises :class:`NumericalError` listing every attempted level.
    """
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return np.zeros_like(a), 0.0
    scale = float(np.mean(np.diag(a)))
    tried = []
    for rel in ladder:
        jit = rel * scale
        tried.append(jit)
        try:
            if jit:
                lower = np.linalg.cholesky(a + jit * np.eye(a.shape[0]))
            else:
                lower = np.linalg.cholesky(a)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(lower)):
            return lower, jit
    raise NumericalError(
        f"Cholesky factorization failed for a {a.shape[0]}x{a.shape[0]} matrix; "
        f"attempted jitters {tried}",
        tuple(tried),
    )


def chol_solve(lower: np.ndarray, b: np.ndarray) -> np.ndarray:
    return sla.cho_solve((lower, True), b, check_finite=False)


def chol_inverse(lower: np.ndarray) -> np.ndarray:
    return chol_solve(lower, np.eye(lower.shape[0]))


def chol_logdet(lower: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(lower))))


def solve_lower(lower: np.ndarray, b: np.ndarray) -> np.ndarray:
    return sla.solve_triangular(lower, b, lower=True, check_finite=False)


def cholesky_tangent(lower: np.ndarray, da: np.ndarray) -> np.ndarray:
    """Directional derivative of ``chol(A)`` along ``dA``.

    Uses dL = L * Phi(L^-1 dA L^-T), with Phi keeping the lower triangle and
    halving the diagonal.
    """
    tmp = solve_lower(lower, da)
    tmp = solve_lower(lower, tmp.T).T
    phi = np.tril(tmp)
    phi[np.diag_indices_from(phi)] *= 0.5
    return lower @ phi


def psd_factor(cov: np.ndarray) -> np.ndarray:
    """A square-root factor F with F F' = cov, robust to semidefinite input.

    Tries a plain Cholesky first; falls back to an eigendecomposition with
    eigenvalues clamped at zero.
    """
    cov = symmetrize(np.asarray(cov, dtype=float))
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        vals = np.clip(vals, 0.0, None)
        return vecs * np.sqrt(vals)
