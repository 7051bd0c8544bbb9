"""Non-negative PARAFAC by alternating non-negative least squares (ANLS).

Each sweep updates ``A``, then ``B``, then ``C``; every update is an exact
NNLS solve (block principal pivoting) of the normal equations

    (B'B * C'C) a_i = X_(1)[i] (C kr B)

and the analogous forms for the other two modes, so the squared residual
never increases from one sweep to the next.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import linear_sum_assignment

from . import nnls
from .tensor import FactorModel, as_tensor3, khatri_rao, unfold

__all__ = [
    "FitConfig",
    "FitResult",
    "MultiFitResult",
    "fit",
    "fit_multi",
    "normalize",
    "align",
    "congruence_matrix",
]

log = logging.getLogger(__name__)

INIT_SCHEMES = ("uniform",)

# Below this relative error the fit is exact to working precision; the
# relative-decrease test alone never fires on noise-free data.
RESIDUAL_FLOOR = 1e-10


@dataclass
class FitConfig:
    """ANLS settings. ``tol`` bounds the relative decrease of the squared
    residual between sweeps; ``max_iterations`` caps the number of sweeps."""

    rank: int = 3
    max_iterations: int = 500
    tol: float = 1e-8
    init: str = "uniform"
    seed: int = 0

    def __post_init__(self) -> None:
        if int(self.rank) < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if int(self.max_iterations) < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.init not in INIT_SCHEMES:
            raise ValueError(f"unknown init scheme {self.init!r}; expected one of {INIT_SCHEMES}")
        self.rank = int(self.rank)
        self.max_iterations = int(self.max_iterations)
        self.seed = int(self.seed)


@dataclass
class FitResult:
    model: FactorModel
    objective_trace: list[float]
    relative_error: float
    iterations: int
    converged: bool
    seed: int
    warnings: list[str] = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


@dataclass
class MultiFitResult:
    best: FitResult
    objectives: list[float]
    seeds: list[int]
    runs: list[FitResult]


def _initial_model(shape: tuple[int, int, int], rank: int, rng: np.random.Generator) -> FactorModel:
    # 1 - U[0, 1) lies in (0, 1].
    A, B, C = (1.0 - rng.random((n, rank)) for n in shape)
    return FactorModel(A, B, C)


def _update_factor(
    unfolded: NDArray, first: NDArray, second: NDArray, current: NDArray
) -> tuple[NDArray, nnls.NnlsSolution]:
    """Best non-negative factor for one mode given the other two.

    ``first`` is the lower-numbered remaining mode (varies fastest in the
    unfolding), so the design matrix is ``khatri_rao(second, first)``.
    """
    gram = (first.T @ first) * (second.T @ second)
    rhs = unfolded @ khatri_rao(second, first)
    sol = nnls.solve(gram, rhs.T, init=current.T)
    new = sol.x.T
    # Safeguard: never accept a row that is worse than the one it replaces.
    f_new = nnls.objective(gram, rhs.T, new.T)
    f_old = nnls.objective(gram, rhs.T, current.T)
    worse = f_new > f_old
    if worse.any():
        new[worse] = current[worse]
    return new, sol


def _squared_residual(x1: NDArray, factors: list[NDArray]) -> float:
    """Squared residual computed on the mode-1 unfolding ``x1``."""
    A, B, C = factors
    resid = x1 - A @ khatri_rao(C, B).T
    return float(np.einsum("ij,ij->", resid, resid))


def fit(t, cfg: FitConfig, init: FactorModel | None = None) -> FitResult:
    """Fit a rank-``cfg.rank`` non-negative PARAFAC model to ``t``.

    Parameters
    ----------
    t : (I, J, K) array_like
        Non-negative tensor.
    cfg : FitConfig
    init : FactorModel, optional
        Starting factors; overrides the seeded random initialization.

    Returns
    -------
    FitResult
        ``objective_trace`` holds the squared residual after every sweep.
    """
    t = as_tensor3(t)
    R = cfg.rank
    warnings: list[str] = []
    norm_sq = float(np.einsum("ijk,ijk->", t, t))

    if norm_sq == 0.0:
        zero = FactorModel(*(np.zeros((n, R)) for n in t.shape))
        return FitResult(zero, [0.0], 0.0, 0, True, cfg.seed, warnings)

    unfoldings = [unfold(t, mode) for mode in (1, 2, 3)]
    max_rank = min(int(np.linalg.matrix_rank(u)) for u in unfoldings)
    if R > max_rank:
        msg = f"rank {R} exceeds the smallest unfolding rank {max_rank}"
        warnings.append(msg)
        log.warning(msg)

    rng = np.random.default_rng(cfg.seed)
    if init is not None:
        if init.shape != t.shape or init.rank != R:
            raise ValueError("init model does not match tensor shape / rank")
        start = init.absorb_weights()
    else:
        start = _initial_model(t.shape, R, rng)
    factors = [np.maximum(f, 0.0) for f in start.factors]
    reseeded = np.zeros(R, dtype=bool)
    dead = np.zeros(R, dtype=bool)

    trace: list[float] = []
    converged = False
    previous = _squared_residual(unfoldings[0], factors)
    n_sweeps = 0
    ridged = False
    stalled_nnls = 0

    for n_sweeps in range(1, cfg.max_iterations + 1):
        for mode in range(3):
            others = [factors[m] for m in range(3) if m != mode]
            factors[mode], sol = _update_factor(unfoldings[mode], others[0], others[1], factors[mode])
            ridged |= sol.ridged
            stalled_nnls += int((~sol.converged).sum())

        current = _squared_residual(unfoldings[0], factors)
        trace.append(current)

        # A component with any all-zero factor column contributes nothing.
        # Zeroing its A column and reseeding B, C leaves the residual as is,
        # and the next A update can only lower it.
        collapsed = ~np.all(np.stack([np.any(f > 0, axis=0) for f in factors]), axis=0)
        for r in np.flatnonzero(collapsed & ~dead):
            if reseeded[r]:
                dead[r] = True
                msg = f"component {r} collapsed to zero twice; left at zero"
                warnings.append(msg)
                log.warning(msg)
                continue
            reseeded[r] = True
            factors[0][:, r] = 0.0
            factors[1][:, r] = 1.0 - rng.random(factors[1].shape[0])
            factors[2][:, r] = 1.0 - rng.random(factors[2].shape[0])
            log.info("component %d collapsed at sweep %d; reseeded", r, n_sweeps)
        for r in np.flatnonzero(dead):
            for f in factors:
                f[:, r] = 0.0

        at_floor = current <= (RESIDUAL_FLOOR**2) * norm_sq
        if at_floor or (previous - current) < cfg.tol * previous:
            converged = True
            break
        previous = current

    if ridged:
        warnings.append("rank-deficient normal equations were ridge-regularized")
    if stalled_nnls:
        warnings.append(f"{stalled_nnls} NNLS columns hit the exchange cap")

    model = FactorModel(*factors)
    rel = float(np.sqrt(max(trace[-1], 0.0) / norm_sq))
    return FitResult(model, trace, rel, n_sweeps, converged, cfg.seed, warnings)


def fit_multi(t, cfg: FitConfig, n_runs: int, threads: int = 1) -> MultiFitResult:
    """Run :func:`fit` with seeds ``cfg.seed, cfg.seed + 1, ...`` and keep the
    run with the lowest final objective (ties go to the lowest seed)."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    t = as_tensor3(t)
    seeds = [cfg.seed + i for i in range(n_runs)]
    cfgs = [FitConfig(cfg.rank, cfg.max_iterations, cfg.tol, cfg.init, s) for s in seeds]
    if threads > 1 and n_runs > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(lambda c: fit(t, c), cfgs))
    else:
        runs = [fit(t, c) for c in cfgs]
    objectives = [r.objective for r in runs]
    best = min(range(n_runs), key=lambda i: (objectives[i], seeds[i]))
    return MultiFitResult(runs[best], objectives, seeds, runs)


def normalize(m: FactorModel) -> FactorModel:
    """Scale columns of ``B`` and ``C`` to unit norm; the scale goes to ``weights``.

    ``A`` is left untouched, so ``m.weighted_A()`` of the result gives
    memberships that are comparable across components. Components with a zero
    ``B`` or ``C`` column get zero columns and weight 0.
    """
    w = np.ones(m.rank) if m.weights is None else m.weights.copy()
    B = m.B.copy()
    C = m.C.copy()
    nb = np.linalg.norm(B, axis=0)
    nc = np.linalg.norm(C, axis=0)
    live = (nb > 0) & (nc > 0)
    B[:, live] /= nb[live]
    C[:, live] /= nc[live]
    B[:, ~live] = 0.0
    C[:, ~live] = 0.0
    w = np.where(live, w * nb * nc, 0.0)
    return FactorModel(m.A.copy(), B, C, w)


def _unit_columns(f: NDArray) -> NDArray:
    norms = np.linalg.norm(f, axis=0)
    out = np.zeros_like(f)
    nz = norms > 0
    out[:, nz] = f[:, nz] / norms[nz]
    return out


def congruence_matrix(reference: FactorModel, other: FactorModel) -> NDArray[np.float64]:
    """``S[r, s]`` = product over modes of the cosine between reference
    component ``r`` and other component ``s``. Zero columns score 0."""
    if reference.rank != other.rank:
        raise ValueError(f"rank mismatch: {reference.rank} vs {other.rank}")
    if reference.shape != other.shape:
        raise ValueError(f"shape mismatch: {reference.shape} vs {other.shape}")
    S = np.ones((reference.rank, other.rank))
    for f_ref, f_oth in zip(reference.factors, other.factors):
        S *= _unit_columns(f_ref).T @ _unit_columns(f_oth)
    return S


def align(reference: FactorModel, other: FactorModel) -> tuple[NDArray[np.int64], NDArray[np.float64]]:
    """Match components of ``other`` to those of ``reference``.

    Returns ``(perm, scores)`` where ``other.permute(perm)`` lines up with
    ``reference`` and ``scores[r]`` is the congruence of the matched pair.
    The permutation maximizes the summed congruence; among optimal
    permutations the lexicographically smallest one is returned.
    """
    S = congruence_matrix(reference, other)
    R = S.shape[0]
    rows, cols = linear_sum_assignment(S, maximize=True)
    optimum = float(S[rows, cols].sum())
    slack = 1e-12 * max(1.0, abs(optimum))

    perm = np.empty(R, dtype=np.int64)
    free = list(range(R))
    prefix = 0.0
    for r in range(R):
        for c in free:
            rest_rows = list(range(r + 1, R))
            rest_cols = [x for x in free if x != c]
            rest = 0.0
            if rest_rows:
                sub = S[np.ix_(rest_rows, rest_cols)]
                rr, cc = linear_sum_assignment(sub, maximize=True)
                rest = float(sub[rr, cc].sum())
            if prefix + S[r, c] + rest >= optimum - slack:
                perm[r] = c
                prefix += S[r, c]
                free.remove(c)
                break
    return perm, S[np.arange(R), perm]
