"""Non-negative least squares by block principal pivoting.

Solves, independently for every column ``y`` of ``rhs``::

    min_{x >= 0}  0.5 * x' G x - x' y

where ``G = W'W`` (``gram``) and ``y = W'b`` are supplied in normal-equation
form, which is how the ALS sweeps produce them. The exchange strategy follows
Kim & Park (2011): swap every infeasible variable between the passive and
active sets at once; when the number of infeasible variables stops shrinking
the exchange set is halved, and once it reaches one variable the method falls
back to Murty's single-variable rule (largest infeasible index), which
terminates finitely.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

__all__ = ["NnlsSolution", "solve", "kkt_violation", "objective"]

log = logging.getLogger(__name__)

DEFAULT_EPS = 1e-10


@dataclass
class NnlsSolution:
    x: NDArray[np.float64]
    converged: NDArray[np.bool_]
    iterations: NDArray[np.int64]
    ridged: bool = False

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))


def objective(gram: ArrayLike, rhs: ArrayLike, x: ArrayLike) -> NDArray[np.float64]:
    """Per-column value of ``0.5 x'Gx - x'y``."""
    gram = np.asarray(gram, dtype=np.float64)
    rhs = np.atleast_2d(np.asarray(rhs, dtype=np.float64).T).T
    x = np.atleast_2d(np.asarray(x, dtype=np.float64).T).T
    return 0.5 * np.einsum("in,in->n", x, gram @ x) - np.einsum("in,in->n", x, rhs)


def kkt_violation(gram: ArrayLike, rhs: ArrayLike, x: ArrayLike) -> dict[str, NDArray]:
    """KKT diagnostics per column: worst negativity of x and of the gradient,
    and the complementarity product ``x'g``."""
    gram = np.asarray(gram, dtype=np.float64)
    rhs = np.atleast_2d(np.asarray(rhs, dtype=np.float64).T).T
    x = np.atleast_2d(np.asarray(x, dtype=np.float64).T).T
    g = gram @ x - rhs
    return {
        "min_x": x.min(axis=0),
        "min_grad": g.min(axis=0),
        "complementarity": np.einsum("in,in->n", x, g),
        "x_norm": np.linalg.norm(x, axis=0),
        "grad_norm": np.linalg.norm(g, axis=0),
    }


def _solve_passive(gram: NDArray, rhs: NDArray, passive: NDArray) -> NDArray:
    """Unconstrained solve restricted to each column's passive set.

    Columns sharing a passive set are solved together with one Cholesky
    factorization of the corresponding principal submatrix.
    """
    q, n = rhs.shape
    x = np.zeros((q, n))
    if n == 0:
        return x
    if q <= 62:
        keys = (passive.astype(np.int64) << np.arange(q, dtype=np.int64)[:, None]).sum(axis=0)
        _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
        patterns = passive[:, first].T
    else:
        patterns, inverse = np.unique(passive.T, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    for p_idx, pattern in enumerate(patterns):
        idx = np.flatnonzero(pattern)
        if idx.size == 0:
            continue
        cols = np.flatnonzero(inverse == p_idx)
        sub = gram[np.ix_(idx, idx)]
        b = rhs[np.ix_(idx, cols)]
        try:
            factor = scipy.linalg.cho_factor(sub, check_finite=False)
            x[np.ix_(idx, cols)] = scipy.linalg.cho_solve(factor, b, check_finite=False)
        except np.linalg.LinAlgError:
            x[np.ix_(idx, cols)] = np.linalg.lstsq(sub, b, rcond=None)[0]
    return x


def _needs_ridge(gram: NDArray) -> bool:
    if gram.shape[0] == 0:
        return False
    evals = np.linalg.eigvalsh(gram)
    top = max(evals[-1], 0.0)
    return bool(top == 0.0 or evals[0] <= 1e-13 * top * gram.shape[0])


def solve(
    gram: ArrayLike,
    rhs: ArrayLike,
    *,
    eps: float = DEFAULT_EPS,
    max_iter: int | None = None,
    init: ArrayLike | None = None,
) -> NnlsSolution:
    """Solve a multiple right-hand-side NNLS problem given ``G'G`` and ``G'Y``.

    Parameters
    ----------
    gram : (q, q) array
        Symmetric positive semi-definite matrix.
    rhs : (q,) or (q, n) array
        Right-hand sides, one problem per column.
    eps : float
        KKT tolerance. Gradient entries are accepted down to
        ``-eps * max(max(diag(gram)), max|rhs column|)`` and passive variables
        down to ``-eps * max|x column|``.
    max_iter : int, optional
        Exchange cap per column, default ``5 * q``. Columns hitting the cap
        are returned clamped and flagged as not converged.
    init : array like ``rhs``, optional
        Warm start; entries ``> 0`` seed the passive set.

    Returns
    -------
    NnlsSolution
        ``x`` has the same shape as ``rhs`` (2-D), every entry ``>= 0``.
    """
    gram = np.asarray(gram, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.ndim == 1:
        rhs = rhs[:, None]
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
        raise ValueError(f"gram must be square, got shape {gram.shape}")
    q, n = rhs.shape
    if gram.shape[0] != q:
        raise ValueError(f"gram is {gram.shape} but rhs has {q} rows")
    if not (np.all(np.isfinite(gram)) and np.all(np.isfinite(rhs))):
        raise ValueError("non-finite input to NNLS")
    asym = np.max(np.abs(gram - gram.T)) if q else 0.0
    if asym > 1e-10 * max(1.0, float(np.max(np.abs(gram))) if q else 1.0):
        raise ValueError(f"gram is not symmetric (max asymmetry {asym:.3g})")
    if max_iter is None:
        max_iter = 5 * q

    iterations = np.zeros(n, dtype=np.int64)
    if q == 0 or n == 0:
        return NnlsSolution(np.zeros((q, n)), np.ones(n, dtype=bool), iterations)

    ridged = False
    if _needs_ridge(gram):
        trace = float(np.trace(gram))
        if trace <= 0.0:
            # Every factor column upstream is zero; x = 0 is the only sane answer.
            return NnlsSolution(np.zeros((q, n)), np.ones(n, dtype=bool), iterations, True)
        gram = gram + np.eye(q) * (1e-12 * trace / q)
        ridged = True

    diag_scale = float(np.max(np.diag(gram)))
    tol_grad = eps * np.maximum(diag_scale, np.max(np.abs(rhs), axis=0))

    if init is None:
        passive = np.zeros((q, n), dtype=bool)
    else:
        init = np.asarray(init, dtype=np.float64).reshape(q, n)
        passive = init > 0

    x = _solve_passive(gram, rhs, passive)
    y = gram @ x - rhs
    y[passive] = 0.0

    best = np.full(n, q + 1)
    limit = np.full(n, q)
    open_cols = np.ones(n, dtype=bool)

    while True:
        tol_x = eps * np.max(np.abs(x), axis=0)
        infeasible = (passive & (x < -tol_x)) | (~passive & (y < -tol_grad))
        n_inf = infeasible.sum(axis=0)
        open_cols &= n_inf > 0
        open_cols &= iterations < max_iter
        if not open_cols.any():
            break
        cols = np.flatnonzero(open_cols)

        improved = n_inf[cols] < best[cols]
        best[cols[improved]] = n_inf[cols[improved]]
        limit[cols[improved]] = n_inf[cols[improved]]
        stalled = cols[~improved]
        limit[stalled] = np.maximum(1, limit[stalled] // 2)

        # Rank infeasible variables from the largest index down; flip the top `limit`.
        sub = infeasible[:, cols]
        rank_from_end = np.cumsum(sub[::-1], axis=0)[::-1]
        flip = sub & (rank_from_end <= limit[cols][None, :])
        passive[:, cols] ^= flip
        iterations[cols] += 1

        xs = _solve_passive(gram, rhs[:, cols], passive[:, cols])
        ys = gram @ xs - rhs[:, cols]
        ys[passive[:, cols]] = 0.0
        x[:, cols] = xs
        y[:, cols] = ys

    tol_x = eps * np.max(np.abs(x), axis=0)
    infeasible = (passive & (x < -tol_x)) | (~passive & (y < -tol_grad))
    converged = ~infeasible.any(axis=0)
    if not converged.all():
        log.debug("BPP hit the exchange cap on %d of %d columns", (~converged).sum(), n)

    x[~passive] = 0.0
    np.maximum(x, 0.0, out=x)
    return NnlsSolution(x, converged, iterations, ridged)
