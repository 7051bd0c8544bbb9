"""Demographic characterization of user clusters and components.

Chi-squared statistics are computed against either a fixed population null
(expected counts = cluster size x population share) or, for two-cluster
comparisons, the usual row x column / total expectation. Pairwise tests are
Bonferroni corrected by the number of cluster pairs per attribute.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .clustering import membership_shares

__all__ = [
    "ATTRIBUTES",
    "ATTRIBUTE_LABELS",
    "DemographicTable",
    "ContingencyTable",
    "ChiSquaredResult",
    "PairwiseTest",
    "RepresentativeGroups",
    "UndefinedTestError",
    "gammaincc",
    "chi2_sf",
    "contingency",
    "chi_squared",
    "null_tests",
    "pairwise_tests",
    "significance_stars",
    "representative_groups",
    "jaccard_overlap",
    "share_table",
]

# Category domains as they appear in the demographics CSV.
ATTRIBUTES: dict[str, tuple[str, ...]] = {
    "gender": ("Female", "Male"),
    "age_cohort": ("1", "2", "3", "4", "5", "6"),
    "marital": ("Married", "Unmarried"),
    "child": ("No", "Yes"),
}

ATTRIBUTE_LABELS = {
    "gender": "Gender",
    "age_cohort": "Age range",
    "marital": "Marital status",
    "child": "Child",
}

CATEGORY_LABELS = {("child", "No"): "No children", ("child", "Yes"): "With children"}

ALPHA_LEVELS = (0.1, 0.05, 0.01, 0.001)


class UndefinedTestError(ValueError):
    """Raised when every cell of a table has zero expected count."""


def category_label(attribute: str, value: str) -> str:
    return CATEGORY_LABELS.get((attribute, value), value)


@dataclass
class DemographicTable:
    """Per-user categorical attributes keyed by user id."""

    rows: dict[str, dict[str, str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for uid, row in self.rows.items():
            for attr, domain in ATTRIBUTES.items():
                if row.get(attr) not in domain:
                    raise ValueError(f"user {uid!r}: {attr}={row.get(attr)!r} not in {domain}")

    def __len__(self) -> int:
        return len(self.rows)

    def __contains__(self, user_id: str) -> bool:
        return user_id in self.rows

    @property
    def users(self) -> list[str]:
        return list(self.rows)

    def value(self, user_id: str, attribute: str) -> str:
        return self.rows[user_id][attribute]

    def counts(self, attribute: str, users: Iterable[str] | None = None) -> NDArray[np.int64]:
        _check_attribute(attribute)
        domain = ATTRIBUTES[attribute]
        pool = self.rows if users is None else users
        out = np.zeros(len(domain), dtype=np.int64)
        for uid in pool:
            out[domain.index(self.rows[uid][attribute])] += 1
        return out


def _check_attribute(attribute: str) -> None:
    if attribute not in ATTRIBUTES:
        raise ValueError(f"unknown attribute {attribute!r}; expected one of {sorted(ATTRIBUTES)}")


# ---------------------------------------------------------------------------
# Chi-squared tail
# ---------------------------------------------------------------------------

def _gammainc_series(a: float, x: float) -> float:
    term = 1.0 / a
    total = term
    n = a
    for _ in range(10_000):
        n += 1.0
        term *= x / n
        total += term
        if abs(term) < abs(total) * 1e-17:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gammaincc_cf(a: float, x: float) -> float:
    # Modified Lentz evaluation of the continued fraction for Q(a, x).
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammaincc(a: float, x: float) -> float:
    """Regularized upper incomplete gamma function ``Q(a, x)``."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gammainc_series(a, x)
    return _gammaincc_cf(a, x)


def chi2_sf(statistic: float, dof: int) -> float:
    """Upper tail probability of the chi-squared distribution."""
    if dof <= 0:
        return 1.0
    if statistic <= 0:
        return 1.0
    return min(1.0, max(0.0, gammaincc(dof / 2.0, statistic / 2.0)))


def significance_stars(p: float, alpha_levels: Sequence[float] = ALPHA_LEVELS) -> str:
    """One star per level that ``p`` falls strictly below."""
    return "*" * sum(p < a for a in alpha_levels)


# ---------------------------------------------------------------------------
# Contingency tables and tests
# ---------------------------------------------------------------------------

@dataclass
class ContingencyTable:
    attribute: str
    categories: tuple[str, ...]
    clusters: list[int]
    observed: NDArray[np.float64]
    expected: NDArray[np.float64]
    kind: str
    n_missing: int = 0


@dataclass
class ChiSquaredResult:
    statistic: float
    dof: int
    p_value: float
    n_dropped: int = 0
    n_small_expected: int = 0
    p_corrected: float | None = None
    stars: str = ""


@dataclass
class PairwiseTest:
    attribute: str
    cluster_x: int
    cluster_y: int
    result: ChiSquaredResult


def contingency(
    labels: Mapping[str, int],
    demo: DemographicTable,
    attribute: str,
    kind: str = "null",
    population_shares: ArrayLike | None = None,
    clusters: Sequence[int] | None = None,
) -> ContingencyTable:
    """Observed and expected category-by-cluster counts.

    Parameters
    ----------
    labels : mapping user id -> cluster id
    demo : DemographicTable
    attribute : one of :data:`ATTRIBUTES`
    kind : ``"null"`` or ``"independence"``
        ``"null"`` expects ``size_m * share_l`` in each cell, with shares taken
        from ``population_shares`` or, by default, from all labeled users that
        have demographics. ``"independence"`` uses row x column / total.
    clusters : cluster ids to include, default all in ``labels``.

    Users without demographics are left out and counted in ``n_missing``.
    """
    _check_attribute(attribute)
    if kind not in ("null", "independence"):
        raise ValueError(f"unknown table kind {kind!r}")
    domain = ATTRIBUTES[attribute]
    if clusters is None:
        clusters = sorted(set(int(c) for c in labels.values()))
    clusters = [int(c) for c in clusters]
    col_of = {c: m for m, c in enumerate(clusters)}

    observed = np.zeros((len(domain), len(clusters)))
    missing = 0
    for uid, c in labels.items():
        c = int(c)
        if c not in col_of:
            continue
        if uid not in demo:
            missing += 1
            continue
        observed[domain.index(demo.value(uid, attribute)), col_of[c]] += 1

    sizes = observed.sum(axis=0)
    if kind == "null":
        if population_shares is None:
            totals = np.zeros(len(domain))
            for uid, c in labels.items():
                if uid in demo:
                    totals[domain.index(demo.value(uid, attribute))] += 1
            shares = totals / totals.sum() if totals.sum() > 0 else totals
        else:
            shares = np.asarray(population_shares, dtype=np.float64)
            if shares.shape != (len(domain),):
                raise ValueError(f"population_shares must have length {len(domain)}")
            shares = shares / shares.sum()
        expected = np.outer(shares, sizes)
    else:
        total = observed.sum()
        expected = np.outer(observed.sum(axis=1), sizes) / total if total > 0 else np.zeros_like(observed)
    return ContingencyTable(attribute, domain, clusters, observed, expected, kind, missing)


def chi_squared(table: ContingencyTable) -> ChiSquaredResult:
    """Pearson statistic ``sum (D - E)^2 / E`` over cells with ``E > 0``.

    Degrees of freedom count only rows and columns with positive expectation:
    ``(rows - 1) * (cols - 1)`` for independence tables and
    ``(rows - 1) * cols`` for the fixed-null table.
    """
    D, E = table.observed, table.expected
    keep = E > 0
    if not keep.any():
        raise UndefinedTestError(f"{table.attribute}: every expected count is zero")
    stat = float(np.sum((D[keep] - E[keep]) ** 2 / E[keep]))
    rows = int(np.any(keep, axis=1).sum())
    cols = int(np.any(keep, axis=0).sum())
    if table.kind == "independence":
        dof = (rows - 1) * (cols - 1)
    else:
        dof = (rows - 1) * cols
    p = chi2_sf(stat, dof)
    return ChiSquaredResult(
        statistic=stat,
        dof=dof,
        p_value=p,
        n_dropped=int((~keep).sum()),
        n_small_expected=int(np.sum(keep & (E < 5))),
        p_corrected=p,
        stars=significance_stars(p),
    )


def null_tests(
    labels: Mapping[str, int],
    demo: DemographicTable,
    attributes: Iterable[str] = tuple(ATTRIBUTES),
    population_shares: Mapping[str, ArrayLike] | None = None,
) -> dict[str, ChiSquaredResult]:
    """All-cluster test against the population null, one per attribute."""
    out = {}
    for attr in attributes:
        shares = None if population_shares is None else population_shares.get(attr)
        out[attr] = chi_squared(contingency(labels, demo, attr, "null", shares))
    return out


def pairwise_tests(
    labels: Mapping[str, int],
    demo: DemographicTable,
    attribute: str,
    alpha_levels: Sequence[float] = ALPHA_LEVELS,
) -> list[PairwiseTest]:
    """Two-cluster independence tests for every unordered cluster pair."""
    clusters = sorted(set(int(c) for c in labels.values()))
    if len(clusters) < 2:
        raise ValueError("pairwise tests need at least two clusters")
    pairs = list(itertools.combinations(clusters, 2))
    out = []
    for x, y in pairs:
        res = chi_squared(contingency(labels, demo, attribute, "independence", clusters=[x, y]))
        res.p_corrected = min(1.0, res.p_value * len(pairs))
        res.stars = significance_stars(res.p_corrected, alpha_levels)
        out.append(PairwiseTest(attribute, x, y, res))
    return out


# ---------------------------------------------------------------------------
# Representative users
# ---------------------------------------------------------------------------

@dataclass
class RepresentativeGroups:
    fraction: float
    thresholds: NDArray[np.float64]
    members: list[list]
    shares: NDArray[np.float64]

    @property
    def n_groups(self) -> int:
        return len(self.members)


def representative_groups(
    A: ArrayLike, fraction: float = 0.10, user_ids: Sequence | None = None
) -> RepresentativeGroups:
    """Users whose membership share in component ``r`` reaches ``h_r``.

    ``h_r`` is the largest share such that at least ``ceil(fraction * I)``
    users have a share ``>= h_r``; ties at the threshold are all kept, and a
    user can belong to several groups.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    shares, _ = membership_shares(A)
    n_users, R = shares.shape
    if user_ids is None:
        user_ids = list(range(n_users))
    elif len(user_ids) != n_users:
        raise ValueError("user_ids length does not match the membership matrix")
    # Shave a relative 1e-12 so 0.1 * 30 = 3.0000000000000004 counts as 3.
    n_top = max(1, math.ceil(fraction * n_users * (1.0 - 1e-12)))
    thresholds = np.empty(R)
    members = []
    for r in range(R):
        ordered = np.sort(shares[:, r])[::-1]
        thresholds[r] = ordered[n_top - 1]
        idx = np.flatnonzero(shares[:, r] >= thresholds[r])
        members.append([user_ids[i] for i in idx])
    return RepresentativeGroups(fraction, thresholds, members, shares)


def jaccard_overlap(groups: RepresentativeGroups | Sequence[Iterable]) -> NDArray[np.float64]:
    """Pairwise Jaccard index of the groups; two empty groups score 0."""
    members = groups.members if isinstance(groups, RepresentativeGroups) else groups
    sets = [set(m) for m in members]
    if not sets:
        raise ValueError("need at least one group")
    n = len(sets)
    J = np.zeros((n, n))
    for r in range(n):
        for s in range(n):
            union = len(sets[r] | sets[s])
            J[r, s] = len(sets[r] & sets[s]) / union if union else 0.0
    return J


def share_table(
    groups: Mapping[int, Iterable[str]], demo: DemographicTable, attribute: str
) -> list[dict]:
    """Per-group category counts and shares, one row per (group, category)."""
    _check_attribute(attribute)
    rows = []
    for g in sorted(groups):
        present = [u for u in groups[g] if u in demo]
        counts = demo.counts(attribute, present)
        total = counts.sum()
        for cat, cnt in zip(ATTRIBUTES[attribute], counts):
            rows.append({
                "attribute": ATTRIBUTE_LABELS[attribute],
                "category": category_label(attribute, cat),
                "group": g,
                "count": int(cnt),
                "share": float(cnt / total) if total else 0.0,
            })
    return rows
