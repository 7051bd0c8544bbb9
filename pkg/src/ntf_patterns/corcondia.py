"""Core-consistency diagnostic (CORCONDIA) and the multi-run rank scan.

With the PARAFAC factors held fixed, the least-squares Tucker3 core is
``G = X x1 pinv(A) x2 pinv(B) x3 pinv(C)``. A good PARAFAC model leaves ``G``
close to the superdiagonal tensor of ones; the score is

    CC = 100 * (1 - ||G - superdiag||_F^2 / R)
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy import stats

from .parafac import FitConfig, fit, normalize
from .tensor import FactorModel, as_tensor3

__all__ = [
    "CoreTensor",
    "RankSummary",
    "CcReport",
    "superdiagonal",
    "compute_core",
    "core_consistency",
    "cc_scan",
]

log = logging.getLogger(__name__)

PINV_RCOND = 1e-12
DEFAULT_THRESHOLD = 85.0


def superdiagonal(R: int) -> NDArray[np.float64]:
    lam = np.zeros((R, R, R))
    idx = np.arange(R)
    lam[idx, idx, idx] = 1.0
    return lam


@dataclass
class CoreTensor:
    g: NDArray[np.float64]
    rank_deficient: bool = False

    @property
    def rank(self) -> int:
        return self.g.shape[0]

    @property
    def lam(self) -> NDArray[np.float64]:
        return superdiagonal(self.rank)


def compute_core(t, m: FactorModel) -> CoreTensor:
    """Least-squares Tucker3 core for the fixed factors of ``m``.

    Weights, if any, are folded into ``A`` first. The core is flagged as rank
    deficient when a factor has a zero column or loses rank in the
    pseudoinverse.
    """
    t = as_tensor3(t)
    if t.shape != m.shape:
        raise ValueError(f"shape mismatch: tensor {t.shape} vs model {m.shape}")
    factors = (m.weighted_A(), m.B, m.C)
    R = m.rank
    deficient = False
    pinvs = []
    for f in factors:
        if np.any(~np.any(f != 0, axis=0)):
            deficient = True
        if np.linalg.matrix_rank(f, tol=PINV_RCOND * max(np.linalg.norm(f, 2), 1e-300)) < R:
            deficient = True
        pinvs.append(np.linalg.pinv(f, rcond=PINV_RCOND))
    if deficient:
        log.debug("core solve on rank-deficient factors")
    g = np.tensordot(pinvs[0], t, axes=(1, 0))
    g = np.tensordot(pinvs[1], g, axes=(1, 1)).transpose(1, 0, 2)
    g = np.tensordot(g, pinvs[2], axes=(2, 1))
    return CoreTensor(g, deficient)


def consistency_from_core(g: NDArray) -> float:
    R = g.shape[0]
    return float(100.0 * (1.0 - np.sum((g - superdiagonal(R)) ** 2) / R))


def core_consistency(t, m: FactorModel, return_core: bool = False):
    """Core consistency of ``m`` on ``t`` (at most 100, may be negative).

    The model is first brought to the canonical scaling of
    :func:`~ntf_patterns.parafac.normalize` (unit ``B`` and ``C`` columns,
    magnitude in ``A``), which makes the score independent of how each
    component's scale is split across its three factor vectors.
    """
    canon = normalize(m).absorb_weights()
    core = compute_core(t, canon)
    cc = consistency_from_core(core.g)
    return (cc, core) if return_core else cc


@dataclass
class RankSummary:
    rank: int
    values: list[float]
    seeds: list[int]
    n_failed: int = 0
    mean: float | None = None
    ci_half_width: float | None = None
    selected: bool = False

    @property
    def ci_low(self) -> float | None:
        if self.mean is None or self.ci_half_width is None:
            return None
        return self.mean - self.ci_half_width

    @property
    def ci_high(self) -> float | None:
        if self.mean is None or self.ci_half_width is None:
            return None
        return self.mean + self.ci_half_width


@dataclass
class CcReport:
    ranks: list[RankSummary]
    threshold: float
    warnings: list[str] = field(default_factory=list)

    @property
    def selected_rank(self) -> int | None:
        for s in self.ranks:
            if s.selected:
                return s.rank
        return None

    def table(self) -> list[dict]:
        """Plot-ready rows: rank, mean, ci_low, ci_high."""
        return [
            {"rank": s.rank, "mean": s.mean, "ci_low": s.ci_low, "ci_high": s.ci_high,
             "n_runs": len(s.values), "n_failed": s.n_failed, "selected": s.selected}
            for s in self.ranks
        ]


def _score_run(t: NDArray, cfg: FitConfig) -> float | None:
    result = fit(t, cfg)
    cc, core = core_consistency(t, result.model, return_core=True)
    if core.rank_deficient:
        return None
    return cc


def cc_scan(
    t,
    ranks,
    n_runs: int,
    base_cfg: FitConfig | None = None,
    threshold: float = DEFAULT_THRESHOLD,
    threads: int = 1,
) -> CcReport:
    """Score ``n_runs`` independently seeded fits for each rank.

    Run ``i`` of every rank uses seed ``base_cfg.seed + i``. Runs whose fitted
    model is rank deficient (a component collapsed to zero) are counted as
    failed and excluded from the mean. The selected rank is the largest one
    whose mean score reaches ``threshold``.
    """
    t = as_tensor3(t)
    ranks = [int(r) for r in ranks]
    if not ranks:
        raise ValueError("ranks must be non-empty")
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    base_cfg = base_cfg or FitConfig()
    warnings: list[str] = []
    if n_runs < 2:
        warnings.append("n_runs < 2: confidence intervals omitted")
        log.warning(warnings[-1])

    jobs = [
        (R, i, FitConfig(R, base_cfg.max_iterations, base_cfg.tol, base_cfg.init, base_cfg.seed + i))
        for R in ranks
        for i in range(n_runs)
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(lambda job: _score_run(t, job[2]), jobs))
    else:
        scores = [_score_run(t, job[2]) for job in jobs]

    summaries = []
    for R in ranks:
        picked = [(job[2].seed, s) for job, s in zip(jobs, scores) if job[0] == R]
        ok = [s for _, s in picked if s is not None]
        summary = RankSummary(R, ok, [seed for seed, s in picked if s is not None], len(picked) - len(ok))
        if ok:
            summary.mean = float(np.mean(ok))
            if len(ok) >= 2:
                sd = float(np.std(ok, ddof=1))
                summary.ci_half_width = float(stats.t.ppf(0.975, len(ok) - 1) * sd / np.sqrt(len(ok)))
        else:
            warnings.append(f"rank {R}: every run failed; no score")
            log.warning(warnings[-1])
        summaries.append(summary)

    passing = [s for s in summaries if s.mean is not None and s.mean >= threshold]
    if passing:
        max(passing, key=lambda s: s.rank).selected = True
    return CcReport(summaries, float(threshold), warnings)
