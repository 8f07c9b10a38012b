"""Synthetic country-skewed interaction datasets for desk-scale experiments.

Every user's events are split across countries by one multinomial draw over
a three-way mixture: own-country mass (local preference), majority-country
mass (solved so the aggregate majority interaction share hits its declared
target), and a remainder spread over the non-majority countries by catalog
size. Within a country, the user's distinct tracks come from weighted
sampling without replacement under a rank-based power law (exponent 0 =
uniform). Per-country quotas exceeding the catalog spill to countries with
capacity left, a small-sample effect that vanishes once catalogs dwarf
per-user event counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .dataset import (
    OTHER,
    IngestOptions,
    Interaction,
    InteractionDataset,
    TrackMeta,
    UserMeta,
    apply_filters,
)
from .errors import ConfigError, EmptyDatasetError, InfeasibleSpecError
from .rng import STREAM_SYNTH, derive_rng


@dataclass(frozen=True)
class CountrySpec:
    code: str
    n_users: int
    n_tracks: int


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator configuration.

    majority_share is the target share of all interactions that land on
    majority-country tracks; the generator solves the internal mixture so the
    empirical share matches it. local_preference is the probability that a
    single draw goes to the user's own country.
    """

    countries: tuple[CountrySpec, ...]
    majority: str
    majority_share: float
    local_preference: float = 0.15
    events_per_user: int = 100
    popularity_exponent: float = 1.0
    min_track_interactions: int = 2
    five_core: bool = False

    def validate(self) -> None:
        if not self.countries:
            raise InfeasibleSpecError("spec declares no countries")
        codes = [c.code for c in self.countries]
        if len(set(codes)) != len(codes):
            raise InfeasibleSpecError(f"duplicate country codes in {codes}")
        if self.majority not in codes:
            raise InfeasibleSpecError(f"majority {self.majority!r} not among countries {codes}")
        if any(c.n_users < 0 or c.n_tracks < 0 for c in self.countries):
            raise InfeasibleSpecError("negative user or track counts")
        if sum(c.n_users for c in self.countries) == 0:
            raise InfeasibleSpecError("no users")
        if not 0.0 < self.majority_share <= 1.0:
            raise InfeasibleSpecError(f"majority_share must be in (0, 1], got {self.majority_share}")
        if not 0.0 <= self.local_preference < 1.0:
            raise InfeasibleSpecError(
                f"local_preference must be in [0, 1), got {self.local_preference}"
            )
        if self.events_per_user < 1:
            raise InfeasibleSpecError(f"events_per_user must be >= 1, got {self.events_per_user}")
        if self.popularity_exponent < 0:
            raise InfeasibleSpecError(
                f"popularity_exponent must be >= 0, got {self.popularity_exponent}"
            )
        total_tracks = sum(c.n_tracks for c in self.countries)
        if self.events_per_user > total_tracks:
            raise InfeasibleSpecError(
                f"events_per_user={self.events_per_user} exceeds total tracks {total_tracks}"
            )


def generate_synthetic(spec: SyntheticSpec, rng_seed: int) -> InteractionDataset:
    """Build a dataset from the spec; deterministic for a given seed."""
    spec.validate()
    rng = derive_rng(rng_seed, STREAM_SYNTH)

    users: dict[str, UserMeta] = {}
    tracks: dict[str, TrackMeta] = {}
    track_lists: dict[str, list[str]] = {}
    for c in spec.countries:
        ids = [f"t_{c.code}_{i:05d}" for i in range(c.n_tracks)]
        track_lists[c.code] = ids
        for tid in ids:
            tracks[tid] = TrackMeta(tid, c.code)
        for i in range(c.n_users):
            uid = f"u_{c.code}_{i:04d}"
            users[uid] = UserMeta(uid, c.code)

    total_users = sum(c.n_users for c in spec.countries)
    majority_user_frac = next(
        c.n_users for c in spec.countries if c.code == spec.majority
    ) / total_users

    # Solve the majority-branch probability so the aggregate interaction share
    # of majority-country tracks matches the declared target.
    lp = spec.local_preference
    if len(spec.countries) == 1:
        majority_branch = 1.0
    else:
        majority_branch = (spec.majority_share - lp * majority_user_frac) / (1.0 - lp)
        if not 0.0 <= majority_branch <= 1.0:
            raise InfeasibleSpecError(
                f"majority_share={spec.majority_share} unreachable with "
                f"local_preference={lp} and majority user share {majority_user_frac:.3f}"
            )

    codes = [c.code for c in spec.countries]
    code_pos = {code: i for i, code in enumerate(codes)}
    pools = [track_lists[code] for code in codes]
    pool_sizes = np.array([len(p) for p in pools])

    non_majority = [c for c in spec.countries if c.code != spec.majority and c.n_tracks > 0]
    base = np.zeros(len(codes))
    if non_majority:
        sizes = np.array([c.n_tracks for c in non_majority], dtype=float)
        spread = (1.0 - lp) * (1.0 - majority_branch) * sizes / sizes.sum()
        for c, mass in zip(non_majority, spread):
            base[code_pos[c.code]] = mass
        base[code_pos[spec.majority]] += (1.0 - lp) * majority_branch
    else:
        base[code_pos[spec.majority]] += 1.0 - lp

    variants: dict[str, np.ndarray] = {}
    for code in codes:
        v = base.copy()
        # Local-preference mass falls back to the majority when the user's own
        # country publishes no tracks.
        target = code if track_lists[code] else spec.majority
        v[code_pos[target]] += lp
        variants[code] = v / v.sum()

    # Unnormalized rank weights; exponential sort keys give weighted sampling
    # without replacement, so country shares stay multinomial-exact instead of
    # leaking across countries through duplicate-rejection redraws.
    raw_w = [
        np.arange(1, n + 1, dtype=float) ** (-spec.popularity_exponent) if n else None
        for n in pool_sizes
    ]

    rows: list[Interaction] = []
    for uid in sorted(users):
        probs = variants[users[uid].country]
        quotas = rng.multinomial(spec.events_per_user, probs)
        orders: dict[int, np.ndarray] = {}

        def order_for(ci: int) -> np.ndarray:
            if ci not in orders:
                keys = np.log(rng.random(int(pool_sizes[ci]))) / raw_w[ci]
                orders[ci] = np.argsort(-keys, kind="stable")
            return orders[ci]

        taken = np.zeros(len(codes), dtype=int)
        excess = 0
        for ci in range(len(codes)):
            q = int(quotas[ci])
            if q == 0:
                continue
            take = min(q, int(pool_sizes[ci]))
            if take:
                order_for(ci)
            taken[ci] = take
            excess += q - take
        while excess > 0:
            open_cis = [ci for ci in range(len(codes)) if taken[ci] < pool_sizes[ci]]
            w = np.asarray([probs[ci] for ci in open_cis])
            if w.sum() <= 0.0:
                w = np.ones(len(open_cis))
            cum = np.cumsum(w / w.sum())
            j = int(np.searchsorted(cum, rng.random(), side="right"))
            ci = open_cis[min(j, len(open_cis) - 1)]
            order_for(ci)
            taken[ci] += 1
            excess -= 1
        for ci in range(len(codes)):
            if taken[ci] == 0:
                continue
            ids = pools[ci]
            for pos in orders[ci][: taken[ci]]:
                rows.append(Interaction(uid, ids[int(pos)], count=1, provenance=0))

    ds = InteractionDataset(users, tracks, tuple(rows))
    options = IngestOptions(
        min_track_interactions=spec.min_track_interactions,
        five_core=spec.five_core,
    )
    try:
        return apply_filters(ds, options)
    except EmptyDatasetError as exc:
        raise InfeasibleSpecError(f"spec infeasible: {exc}") from exc


# Per-country (users, tracks) for the LFM-2b-shaped preset at full scale:
# US holds ~13% of users, ~40% of tracks and ~45% of interaction mass.
_MAJORITY_SKEW_SHAPE = (
    ("US", 1582, 39614),
    ("UK", 823, 15522),
    ("DE", 805, 6793),
    ("SE", 320, 4519),
    ("CA", 217, 3754),
    ("FR", 254, 2800),
    ("AU", 193, 2346),
    ("FI", 420, 2260),
    ("NO", 208, 1765),
    ("BR", 1064, 2236),
    ("NL", 375, 1738),
    ("PL", 1040, 1709),
    ("RU", 1162, 1888),
    ("JP", 101, 1796),
    ("IT", 222, 1506),
    (OTHER, 2990, 9651),
)


def majority_skew_spec(scale: float = 0.01, **overrides) -> SyntheticSpec:
    """US-heavy long-tail fixture: one majority country with ~40% of tracks.

    At scale 0.01 this yields roughly 1,000 tracks, 120 users and 23K
    interactions, small enough for desk-scale loop experiments while keeping
    the country imbalance that drives representation drift.
    """
    countries = tuple(
        CountrySpec(code, max(1, round(n_users * scale)), max(1, round(n_tracks * scale)))
        for code, n_users, n_tracks in _MAJORITY_SKEW_SHAPE
    )
    params = dict(
        countries=countries,
        majority="US",
        majority_share=0.455,
        local_preference=0.15,
        events_per_user=194,
        popularity_exponent=1.0,
    )
    params.update(overrides)
    return SyntheticSpec(**params)


_SPEC_SCALARS = {
    "local_preference": float,
    "events_per_user": int,
    "popularity_exponent": float,
    "min_track_interactions": int,
    "five_core": bool,
}


def spec_from_dict(raw: Mapping) -> SyntheticSpec:
    """Build a generator spec from a config mapping.

    Either a full spec ({countries, majority, majority_share, ...}) or the
    shipped preset ({preset: "majority-skew", scale: 0.01, ...overrides}).
    """
    if not isinstance(raw, Mapping):
        raise ConfigError(f"synthetic section must be a mapping, got {type(raw).__name__}")
    d = dict(raw)
    preset = d.pop("preset", None)
    if preset is not None:
        if preset != "majority-skew":
            raise ConfigError(f"unknown synthetic preset {preset!r}")
        scale = float(d.pop("scale", 0.01))
        unknown = set(d) - set(_SPEC_SCALARS) - {"majority_share"}
        if unknown:
            raise ConfigError(f"unknown synthetic keys for preset: {sorted(unknown)}")
        return majority_skew_spec(scale, **d)
    try:
        countries = tuple(
            CountrySpec(str(code), int(n_users), int(n_tracks))
            for code, n_users, n_tracks in d.pop("countries")
        )
        majority = str(d.pop("majority"))
        majority_share = float(d.pop("majority_share"))
    except KeyError as exc:
        raise ConfigError(f"synthetic spec is missing key {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad synthetic countries entry: {exc}") from None
    kwargs = {}
    for key, cast in _SPEC_SCALARS.items():
        if key in d:
            kwargs[key] = cast(d.pop(key))
    if d:
        raise ConfigError(f"unknown synthetic keys: {sorted(d)}")
    return SyntheticSpec(
        countries=countries, majority=majority, majority_share=majority_share, **kwargs
    )


def block_dataset(
    n_users: int = 200,
    n_items: int = 400,
    within_density: float = 0.8,
    cross_density: float = 0.05,
    rng_seed: int = 0,
) -> InteractionDataset:
    """Two user clusters x two item clusters with dense within-block interactions.

    Used as a learnability fixture: a ranking model that picks up the block
    structure scores within-block items far above cross-block ones.
    """
    rng = derive_rng(rng_seed, STREAM_SYNTH, 99)
    half_u, half_i = n_users // 2, n_items // 2
    users = {}
    tracks = {}
    for i in range(n_users):
        code = "AA" if i < half_u else "BB"
        uid = f"u{i:04d}"
        users[uid] = UserMeta(uid, code)
    for j in range(n_items):
        code = "AA" if j < half_i else "BB"
        tid = f"t{j:04d}"
        tracks[tid] = TrackMeta(tid, code)

    draws = rng.random((n_users, n_items))
    rows: list[Interaction] = []
    for i, uid in enumerate(sorted(users)):
        row_items = []
        for j, tid in enumerate(sorted(tracks)):
            same = (i < half_u) == (j < half_i)
            density = within_density if same else cross_density
            if draws[i, j] < density:
                row_items.append(tid)
        if not row_items:  # keep every user trainable
            row_items.append(sorted(tracks)[0 if i < half_u else half_i])
        for tid in row_items:
            rows.append(Interaction(uid, tid, count=1, provenance=0))
    return InteractionDataset(users, tracks, tuple(rows))
