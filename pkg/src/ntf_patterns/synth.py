"""Synthetic user populations with planted multi-timescale components.

Each component pairs a day-of-week template with a slowly varying weekly
profile. Users are drawn around a small number of membership archetypes
(the planted groups), and demographics lean towards a preferred category
depending on the user's dominant component.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray

from .demographics import ATTRIBUTES, DemographicTable
from .tensor import FactorModel, reconstruct

__all__ = [
    "DAY_TEMPLATES",
    "POPULATION_COUNTS",
    "SyntheticSpec",
    "SyntheticData",
    "default_archetypes",
    "generate_synthetic",
    "tensor_to_receipts",
]

# Monday first.
DAY_TEMPLATES: dict[str, tuple[float, ...]] = {
    "weekday": (1.0, 1.0, 1.0, 1.0, 1.0, 0.05, 0.05),
    "saturday": (0.15, 0.15, 0.15, 0.15, 0.2, 1.0, 0.15),
    "sunday": (0.15, 0.15, 0.15, 0.15, 0.15, 0.2, 1.0),
    "friday": (0.1, 0.1, 0.1, 0.3, 1.0, 0.3, 0.1),
    "monday": (1.0, 0.3, 0.1, 0.1, 0.1, 0.1, 0.1),
    "midweek": (0.2, 0.6, 1.0, 0.6, 0.2, 0.1, 0.1),
}

# Category counts of the 2,624-user receipt panel, used as base rates.
POPULATION_COUNTS: dict[str, tuple[int, ...]] = {
    "gender": (1887, 737),
    "age_cohort": (69, 690, 824, 673, 331, 137),
    "marital": (1628, 996),
    "child": (1345, 1279),
}

NOISE_MODELS = ("none", "poisson", "gaussian")


@dataclass
class SyntheticSpec:
    """Parameters of a planted population.

    ``mean_count`` sets the average cell intensity of the noise-free tensor.
    ``noise_level`` of 0 disables noise; for ``"poisson"`` a level ``v``
    draws ``v * Poisson(mu / v)`` (``v = 1`` is plain Poisson counts), for
    ``"gaussian"`` it is the noise s.d. relative to the mean intensity.
    ``coupling`` in [0, 1] mixes the base demographic rates with a point
    mass on the dominant component's preferred category.
    """

    n_users: int = 200
    n_weeks: int = 42
    rank: int = 3
    day_templates: tuple[str, ...] = ("weekday", "saturday", "sunday")
    n_groups: int = 5
    archetypes: list[list[float]] | None = None
    concentration: float = 60.0
    mean_count: float = 5.0
    weekly_amplitude: float = 0.3
    noise: str = "poisson"
    noise_level: float = 1.0
    coupling: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        self.day_templates = tuple(self.day_templates)
        if self.rank < 1 or self.n_users < 1 or self.n_weeks < 1:
            raise ValueError("n_users, n_weeks and rank must be >= 1")
        if len(self.day_templates) < self.rank:
            raise ValueError(f"need {self.rank} day templates, got {len(self.day_templates)}")
        names = self.day_templates[: self.rank]
        if len(set(names)) != len(names):
            raise ValueError("day templates must be distinct")
        unknown = [n for n in names if n not in DAY_TEMPLATES]
        if unknown:
            raise ValueError(f"unknown day templates {unknown}")
        if self.noise not in NOISE_MODELS:
            raise ValueError(f"noise must be one of {NOISE_MODELS}")
        if self.noise_level < 0 or self.mean_count <= 0:
            raise ValueError("noise_level must be >= 0 and mean_count > 0")
        if not 0.0 <= self.coupling <= 1.0:
            raise ValueError("coupling must lie in [0, 1]")
        if self.n_groups < 1 or self.n_groups > self.n_users:
            raise ValueError("n_groups must lie in [1, n_users]")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["day_templates"] = list(self.day_templates)
        return d


class SyntheticData(NamedTuple):
    tensor: NDArray[np.float64]
    truth: FactorModel
    demographics: DemographicTable
    labels: NDArray[np.int64]
    user_ids: list[str]


def default_archetypes(rank: int, n_groups: int) -> NDArray[np.float64]:
    """Share vectors for the planted groups.

    The first ``rank`` groups are dominated by one component each; further
    groups split their weight between two neighbouring components.
    """
    out = np.zeros((n_groups, rank))
    for g in range(n_groups):
        if rank == 1:
            out[g, 0] = 1.0
        elif g < rank:
            out[g] = 0.1 / (rank - 1)
            out[g, g] = 0.9
        else:
            r = (g - rank) % rank
            s = (r + 1) % rank
            out[g] = 0.1 / rank
            out[g, r] += 0.45
            out[g, s] += 0.45
    return out / out.sum(axis=1, keepdims=True)


def _weekly_profiles(K: int, R: int, amplitude: float, rng: np.random.Generator) -> NDArray:
    k = np.arange(K)
    C = np.empty((K, R))
    for r in range(R):
        period = rng.uniform(8.0, 20.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        wiggle = rng.uniform(-0.5, 0.5, size=K) * amplitude * 0.3
        C[:, r] = 1.0 + amplitude * np.sin(2.0 * np.pi * k / period + phase) + wiggle
    return np.maximum(C, 0.05)


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    rng = np.random.default_rng(spec.seed)
    I, K, R = spec.n_users, spec.n_weeks, spec.rank

    B = np.array([DAY_TEMPLATES[name] for name in spec.day_templates[:R]]).T
    C = _weekly_profiles(K, R, spec.weekly_amplitude, rng)

    arche = (np.asarray(spec.archetypes, dtype=np.float64) if spec.archetypes is not None
             else default_archetypes(R, spec.n_groups))
    if arche.shape != (spec.n_groups, R) or np.any(arche < 0):
        raise ValueError(f"archetypes must be a non-negative ({spec.n_groups}, {R}) array")
    arche = arche / arche.sum(axis=1, keepdims=True)
    labels = rng.permutation(np.arange(I) % spec.n_groups)
    alpha = np.maximum(spec.concentration * arche[labels], 1e-3)
    shares = rng.dirichlet(np.ones(R), size=I) if R == 1 else np.stack([rng.dirichlet(a) for a in alpha])
    level = rng.lognormal(0.0, 0.3, size=I)
    A = shares * level[:, None]

    mu = reconstruct(FactorModel(A, B, C))
    A *= spec.mean_count / mu.mean()
    truth = FactorModel(A, B, C)
    mu = reconstruct(truth)

    if spec.noise == "none" or spec.noise_level == 0:
        X = mu.copy()
    elif spec.noise == "poisson":
        v = spec.noise_level
        X = v * rng.poisson(mu / v).astype(np.float64)
    else:
        X = np.maximum(mu + spec.noise_level * mu.mean() * rng.standard_normal(mu.shape), 0.0)

    user_ids = [f"u{i:05d}" for i in range(I)]
    dominant = np.argmax(shares, axis=1)
    rows: dict[str, dict[str, str]] = {uid: {} for uid in user_ids}
    for attr, domain in ATTRIBUTES.items():
        base = np.asarray(POPULATION_COUNTS[attr], dtype=np.float64)
        base /= base.sum()
        for i, uid in enumerate(user_ids):
            pref = np.zeros(len(domain))
            pref[dominant[i] % len(domain)] = 1.0
            p = (1.0 - spec.coupling) * base + spec.coupling * pref
            rows[uid][attr] = domain[rng.choice(len(domain), p=p)]
    return SyntheticData(X, truth, DemographicTable(rows), labels.astype(np.int64), user_ids)


def tensor_to_receipts(
    tensor: NDArray, user_ids: list[str], first_week_start: dt.date, path
) -> int:
    """Write an integer count tensor as a receipt CSV, one row per item.

    Returns the number of rows written. Day index 0 is ``first_week_start``.
    """
    counts = np.rint(np.asarray(tensor)).astype(np.int64)
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    n = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "date", "item", "price"])
        for i, j, k in zip(*np.nonzero(counts)):
            day = (first_week_start + dt.timedelta(days=int(7 * k + j))).isoformat()
            for _ in range(counts[i, j, k]):
                w.writerow([user_ids[i], day, "item", ""])
                n += 1
    return n
