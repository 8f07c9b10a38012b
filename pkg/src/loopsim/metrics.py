"""Evaluation quantities: country/popularity distributions, divergence, NDCG.

Country mass is summarized per user over three bins, [local, US, other].
For US users, local and US coincide; the shared mass is placed in the local
bin and the US bin is set to 0 so the result stays a probability
distribution. Popularity uses three bins, [HighPop, MidPop, LowPop], cut at
the top and bottom 20% of tracks ranked by interaction volume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .dataset import US, InteractionDataset
from .errors import InvariantViolationError, UndefinedDeltaError, UndefinedProportionError
from .stats import TTestResult, paired_t_test, welch_t_test

__all__ = [
    "COUNTRY_BINS",
    "POPULARITY_BINS",
    "AttributeDistribution",
    "PopularityBinning",
    "ProportionReport",
    "country_proportions",
    "country_distribution",
    "proportion_report",
    "popularity_binning",
    "popularity_distribution",
    "jsd",
    "ndcg_at_k",
    "delta_percent",
    "paired_t_test",
    "welch_t_test",
    "TTestResult",
]

COUNTRY_BINS = ("local", "US", "other")
POPULARITY_BINS = ("HighPop", "MidPop", "LowPop")

HIGH_POP, MID_POP, LOW_POP = POPULARITY_BINS


@dataclass(frozen=True)
class AttributeDistribution:
    """Probability mass over a fixed, ordered set of bins."""

    bins: tuple[str, ...]
    mass: tuple[float, ...]

    def __post_init__(self):
        if len(self.bins) != len(self.mass):
            raise InvariantViolationError(
                f"{len(self.bins)} bins but {len(self.mass)} masses"
            )
        if any(m < 0.0 for m in self.mass):
            raise InvariantViolationError(f"negative mass in {self.mass}")
        total = sum(self.mass)
        if abs(total - 1.0) > 1e-9:
            raise InvariantViolationError(f"mass sums to {total!r}, not 1")


def country_proportions(
    items: Sequence[str],
    user_country: str,
    track_countries: Mapping[str, str],
) -> tuple[float, float]:
    """Fractions of the item list that are local to the user and that are US."""
    if not items:
        raise UndefinedProportionError("cannot compute proportions of an empty item list")
    n = len(items)
    local = sum(1 for t in items if track_countries[t] == user_country)
    us = sum(1 for t in items if track_countries[t] == US)
    return local / n, us / n


def country_distribution(
    items: Sequence[str],
    user_country: str,
    track_countries: Mapping[str, str],
) -> AttributeDistribution:
    """Three-bin country distribution of an item list from one user's view."""
    p_local, p_us = country_proportions(items, user_country, track_countries)
    if user_country == US:
        mass = (p_us, 0.0, 1.0 - p_us)
    else:
        mass = (p_local, p_us, 1.0 - p_local - p_us)
    return AttributeDistribution(COUNTRY_BINS, mass)


@dataclass(frozen=True)
class PopularityBinning:
    """Assignment of every track in a reference dataset to a popularity bin."""

    assignment: Mapping[str, str]
    n_high: int
    n_low: int
    boundaries: tuple[float, float]

    def __getitem__(self, track_id: str) -> str:
        return self.assignment[track_id]


def popularity_binning(
    reference: InteractionDataset,
    boundaries: tuple[float, float] = (0.2, 0.2),
) -> PopularityBinning:
    """Cut tracks into HighPop / MidPop / LowPop by interaction volume.

    Tracks are ranked by count descending with ascending id as tie-break; the
    top floor(high * T) tracks are HighPop and the bottom floor(low * T) are
    LowPop. To keep the three sets disjoint on tiny datasets, the low cut is
    additionally capped at the tracks left after the high cut.
    """
    high_frac, low_frac = boundaries
    if not 0.0 <= high_frac <= 1.0 or not 0.0 <= low_frac <= 1.0:
        raise InvariantViolationError(f"bin boundaries out of range: {boundaries}")
    counts = reference.track_play_counts()
    ranked = sorted(counts, key=lambda t: (-counts[t], t))
    total = len(ranked)
    n_high = int(high_frac * total)
    n_low = min(int(low_frac * total), total - n_high)
    assignment = {}
    for rank, tid in enumerate(ranked):
        if rank < n_high:
            assignment[tid] = HIGH_POP
        elif rank >= total - n_low:
            assignment[tid] = LOW_POP
        else:
            assignment[tid] = MID_POP
    return PopularityBinning(assignment, n_high, n_low, boundaries)


def popularity_distribution(
    items: Sequence[str],
    binning: PopularityBinning,
) -> AttributeDistribution:
    """Three-bin popularity distribution of an item list."""
    if not items:
        raise UndefinedProportionError("cannot compute proportions of an empty item list")
    n = len(items)
    per_bin = {b: 0 for b in POPULARITY_BINS}
    for tid in items:
        per_bin[binning[tid]] += 1
    return AttributeDistribution(
        POPULARITY_BINS, tuple(per_bin[b] / n for b in POPULARITY_BINS)
    )


def _half_divergence(p: tuple[float, ...], q: tuple[float, ...]) -> float:
    total = 0.0
    for pi, qi in zip(p, q):
        if pi > 0.0:
            total += pi * math.log2(2.0 * pi / (pi + qi))
    return 0.5 * total


def jsd(h: AttributeDistribution, g: AttributeDistribution) -> float:
    """Jensen-Shannon divergence in bits; symmetric, bounded in [0, 1].

    Zero-mass terms contribute nothing (0 * log(0/x) := 0). Values a few ulp
    outside [0, 1] from rounding are clamped; anything further out signals a
    bug and raises.
    """
    if h.bins != g.bins:
        raise InvariantViolationError(f"bin mismatch: {h.bins} vs {g.bins}")
    value = _half_divergence(h.mass, g.mass) + _half_divergence(g.mass, h.mass)
    if value < 0.0 or value > 1.0:
        if -1e-12 < value < 0.0:
            return 0.0
        if 1.0 < value < 1.0 + 1e-12:
            return 1.0
        raise InvariantViolationError(f"divergence {value!r} outside [0, 1]")
    return value


def ndcg_at_k(ranked: Sequence[str], relevant: set[str] | frozenset[str], k: int) -> float:
    """Binary-relevance NDCG over the top k ranks; 0 when nothing is relevant."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not relevant:
        return 0.0
    dcg = 0.0
    for rank, tid in enumerate(ranked[:k], start=1):
        if tid in relevant:
            dcg += 1.0 / math.log2(rank + 1)
    ideal = sum(1.0 / math.log2(r + 1) for r in range(1, min(k, len(relevant)) + 1))
    return dcg / ideal


def delta_percent(current_mean: float, baseline_mean: float, points: bool = False) -> float:
    """Signed change vs a baseline: relative percent, or percentage points."""
    if points:
        return 100.0 * (current_mean - baseline_mean)
    if baseline_mean <= 0.0:
        raise UndefinedDeltaError(
            f"relative delta needs a positive baseline, got {baseline_mean}"
        )
    return 100.0 * (current_mean - baseline_mean) / baseline_mean


@dataclass(frozen=True)
class ProportionReport:
    """Per-user local/US fractions for one snapshot of profiles or lists."""

    p_local: Mapping[str, float]
    p_us: Mapping[str, float]

    def __post_init__(self):
        if set(self.p_local) != set(self.p_us):
            raise InvariantViolationError("p_local and p_US cover different users")

    @property
    def user_ids(self) -> list[str]:
        return sorted(self.p_local)

    def mean_local(self, user_ids: Sequence[str] | None = None) -> float:
        ids = self.user_ids if user_ids is None else list(user_ids)
        return sum(self.p_local[u] for u in ids) / len(ids)

    def mean_us(self, user_ids: Sequence[str] | None = None) -> float:
        ids = self.user_ids if user_ids is None else list(user_ids)
        return sum(self.p_us[u] for u in ids) / len(ids)


def proportion_report(
    item_lists: Mapping[str, Sequence[str]],
    user_countries: Mapping[str, str],
    track_countries: Mapping[str, str],
) -> ProportionReport:
    """Build per-user proportions for every user with a non-empty item list."""
    p_local: dict[str, float] = {}
    p_us: dict[str, float] = {}
    for uid, items in item_lists.items():
        if not items:
            continue
        pl, pu = country_proportions(items, user_countries[uid], track_countries)
        p_local[uid] = pl
        p_us[uid] = pu
    return ProportionReport(p_local, p_us)
