"""Least squares over the probability simplex.

Solves ``min_w ||A w - b||^2  s.t.  w >= 0, sum(w) = 1`` with a primal
active-set method.  Each iteration solves the equality-constrained problem on
the current support exactly through its KKT system, so converged weights are
accurate to machine precision rather than to an iteration tolerance.  One and
two column problems are solved in closed form.
"""

from __future__ import annotations

import numpy as np

__all__ = ["simplex_lstsq", "simplex_objective"]


def simplex_objective(A: np.ndarray, b: np.ndarray, w: np.ndarray) -> float:
    r = A @ w - b
    return float(r @ r)


def _clean(w: np.ndarray) -> np.ndarray:
    w = np.maximum(w, 0.0)
    s = w.sum()
    if s <= 0.0:
        w = np.zeros_like(w)
        w[0] = 1.0
        return w
    return w / s


def _two_columns(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = A[:, 0] - A[:, 1]
    dd = float(d @ d)
    if dd == 0.0:
        # identical columns: every split is optimal, keep the first donor
        return np.array([1.0, 0.0])
    t = float(d @ (b - A[:, 1])) / dd
    t = min(max(t, 0.0), 1.0)
    return np.array([t, 1.0 - t])


def _solve_on_support(G: np.ndarray, c: np.ndarray, support: list[int]) -> np.ndarray:
    """Minimise the quadratic on the affine hull of ``support`` (sum = 1)."""
    n = len(support)
    K = np.empty((n + 1, n + 1))
    K[:n, :n] = G[support][:, support]
    K[:n, n] = 1.0
    K[n, :n] = 1.0
    K[n, n] = 0.0
    rhs = np.empty(n + 1)
    rhs[:n] = c[support]
    rhs[n] = 1.0
    try:
        sol = np.linalg.solve(K, rhs)
        if not np.isfinite(sol).all():
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:n]


def simplex_lstsq(
    A: np.ndarray,
    b: np.ndarray,
    *,
    max_iter: int = 1000,
    tol: float = 1e-10,
) -> np.ndarray:
    """Weights on the simplex minimising ``||A w - b||^2``.

    ``tol`` is the relative KKT tolerance used to decide whether an inactive
    column can still lower the objective.  Ties are broken by column order.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.ndim != 2 or b.shape != (A.shape[0],):
        raise ValueError(f"incompatible shapes {A.shape} and {b.shape}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite entries in the weight problem")
    if A.shape[1] == 0:
        raise ValueError("no columns to weight")
    return _active_set(A, b, max_iter, tol)


def _active_set(A: np.ndarray, b: np.ndarray, max_iter: int, tol: float) -> np.ndarray:
    J = A.shape[1]
    if J == 1:
        return np.ones(1)
    if J == 2:
        return _two_columns(A, b)

    G = A.T @ A
    c = A.T @ b
    scale = max(1.0, float(np.max(np.abs(G))), float(np.max(np.abs(c))))
    kkt_tol = tol * scale

    resid = np.sum((A - b[:, None]) ** 2, axis=0)
    j0 = int(np.argmin(resid))
    w = np.zeros(J)
    w[j0] = 1.0
    support = [j0]

    for _ in range(max_iter):
        grad = G @ w - c
        lam = float(np.min(grad[support]))
        inactive = np.ones(J, dtype=bool)
        inactive[support] = False
        slack = np.where(inactive, grad - lam, np.inf)
        j = int(np.argmin(slack))
        if not slack[j] < -kkt_tol:
            break
        support = sorted(support + [j])

        # inner loop: move toward the face minimiser, dropping blocking columns
        for _ in range(J + 1):
            z = _solve_on_support(G, c, support)
            if (z > 0.0).all():
                w = np.zeros(J)
                w[support] = z
                break
            ws = w[support]
            blocking = z <= 0.0
            steps = ws[blocking] / (ws[blocking] - z[blocking])
            alpha = float(np.min(steps))
            ws = ws + alpha * (z - ws)
            w = np.zeros(J)
            w[support] = ws
            support = [s for s, val in zip(support, ws) if val > 1e-15]
            if not support:
                support = [j0]
                w[j0] = 1.0
                break
        else:
            break
    return _clean(w)
