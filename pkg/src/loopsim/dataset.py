"""Interaction dataset: ingestion, core filtering, splitting, augmentation.

The dataset is an immutable collection of users, tracks (each carrying a
country label) and (user, track) interactions kept in insertion order.
Augmentation never mutates; it returns a new dataset that shares the
metadata tables and extends the interaction tuple.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    EmptyDatasetError,
    InvariantViolationError,
    ParseError,
)
from .rng import derive_rng

OTHER = "OTHER"
US = "US"

INTERACTIONS_HEADER = ("user_id", "track_id", "user_country", "track_country", "count")

_UPPER = set(string.ascii_uppercase)


def normalize_country(raw: str) -> str:
    """Map a raw country field to a two-letter code or the OTHER sentinel.

    Empty fields become OTHER; anything else must be exactly two uppercase
    ASCII letters (or the literal sentinel). Returns the code, or raises
    ValueError for malformed input.
    """
    code = raw.strip()
    if code == "" or code == OTHER:
        return OTHER
    if len(code) == 2 and code[0] in _UPPER and code[1] in _UPPER:
        return code
    raise ValueError(f"invalid country code {raw!r}")


@dataclass(frozen=True)
class UserMeta:
    user_id: str
    country: str


@dataclass(frozen=True)
class TrackMeta:
    track_id: str
    country: str


@dataclass(frozen=True)
class Interaction:
    """One (user, track) interaction. provenance 0 = initial, i >= 1 = iteration i."""

    user_id: str
    track_id: str
    count: int = 1
    provenance: int = 0


@dataclass(frozen=True)
class UserProfile:
    """Ordered view over one user's items: initial history, then accepted items."""

    user_id: str
    items: tuple[str, ...]

    @property
    def seen(self) -> frozenset[str]:
        return frozenset(self.items)


@dataclass(frozen=True)
class IngestOptions:
    drop_unknown_country: bool = False
    min_track_interactions: int = 0
    five_core: bool = False


@dataclass
class InteractionDataset:
    users: dict[str, UserMeta]
    tracks: dict[str, TrackMeta]
    interactions: tuple[Interaction, ...]

    def __post_init__(self):
        for it in self.interactions:
            if it.user_id not in self.users:
                raise InvariantViolationError(f"interaction references unknown user {it.user_id!r}")
            if it.track_id not in self.tracks:
                raise InvariantViolationError(f"interaction references unknown track {it.track_id!r}")

    def __len__(self) -> int:
        return len(self.interactions)

    @property
    def user_ids(self) -> list[str]:
        return sorted(self.users)

    @property
    def track_ids(self) -> list[str]:
        return sorted(self.tracks)

    def track_country(self, track_id: str) -> str:
        return self.tracks[track_id].country

    def profiles(self) -> dict[str, UserProfile]:
        """Per-user profiles: initial items first, then augmented in iteration order.

        Interactions are kept in insertion order and augmentation appends per
        iteration, so file order already yields the required ordering.
        """
        items: dict[str, list[str]] = {uid: [] for uid in self.users}
        for it in self.interactions:
            items[it.user_id].append(it.track_id)
        return {uid: UserProfile(uid, tuple(tracks)) for uid, tracks in items.items()}

    def seen_sets(self) -> dict[str, set[str]]:
        seen: dict[str, set[str]] = {uid: set() for uid in self.users}
        for it in self.interactions:
            seen[it.user_id].add(it.track_id)
        return seen

    def track_interaction_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {tid: 0 for tid in self.tracks}
        for it in self.interactions:
            counts[it.track_id] += 1
        return counts

    def track_play_counts(self) -> dict[str, int]:
        """Per-track interaction volume weighted by the count column.

        Structural filters (k-core, singleton drop) count rows; popularity
        ranking uses this weighted version. The two coincide for simulated
        data, where every row has count 1.
        """
        counts: dict[str, int] = {tid: 0 for tid in self.tracks}
        for it in self.interactions:
            counts[it.track_id] += it.count
        return counts

    def user_interaction_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {uid: 0 for uid in self.users}
        for it in self.interactions:
            counts[it.user_id] += 1
        return counts

    def users_by_country(self) -> dict[str, list[str]]:
        groups: dict[str, list[str]] = {}
        for uid in self.user_ids:
            groups.setdefault(self.users[uid].country, []).append(uid)
        return groups

    def tracks_by_country(self) -> dict[str, list[str]]:
        groups: dict[str, list[str]] = {}
        for tid in self.track_ids:
            groups.setdefault(self.tracks[tid].country, []).append(tid)
        return groups


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint interaction index sets partitioning a dataset."""

    train: frozenset[int]
    validation: frozenset[int]
    test: frozenset[int]

    def __post_init__(self):
        if self.train & self.validation or self.train & self.test or self.validation & self.test:
            raise InvariantViolationError("split sets overlap")


def _parse_row(path, line_no: int, line: str) -> tuple[str, str, str, str, int]:
    fields = line.rstrip("\n").split("\t")
    if len(fields) != 5:
        raise ParseError(path, line_no, f"expected 5 tab-separated fields, got {len(fields)}")
    user_id, track_id, user_country, track_country, count_raw = fields
    if not user_id or not track_id:
        raise ParseError(path, line_no, "empty user_id or track_id")
    try:
        count = int(count_raw)
    except ValueError:
        raise ParseError(path, line_no, f"count is not an integer: {count_raw!r}") from None
    if count < 1:
        raise ParseError(path, line_no, f"count must be >= 1, got {count}")
    return user_id, track_id, user_country, track_country, count


def ingest(path: str | Path, options: IngestOptions = IngestOptions()) -> InteractionDataset:
    """Read a tab-separated interactions file and apply the requested filters.

    Filter order: unknown-country row drop, then minimum track interactions,
    then iterative 5-core (repeated until fixpoint). Raises ParseError with
    the offending line number, or EmptyDatasetError when nothing survives.
    """
    path = Path(path)
    users: dict[str, UserMeta] = {}
    tracks: dict[str, TrackMeta] = {}
    rows: list[Interaction] = []

    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header.split("\t") != list(INTERACTIONS_HEADER):
            raise ParseError(path, 1, f"bad header {header!r}")
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            user_id, track_id, uc_raw, tc_raw, count = _parse_row(path, line_no, line)
            try:
                user_country = normalize_country(uc_raw)
                track_country = normalize_country(tc_raw)
            except ValueError as exc:
                raise ParseError(path, line_no, str(exc)) from None
            if options.drop_unknown_country and (not uc_raw.strip() or not tc_raw.strip()):
                continue
            if user_id in users:
                if uc_raw.strip() and users[user_id].country != user_country:
                    raise ParseError(
                        path, line_no,
                        f"user {user_id!r} country conflict: "
                        f"{users[user_id].country} vs {user_country}",
                    )
            else:
                users[user_id] = UserMeta(user_id, user_country)
            if track_id in tracks:
                if tc_raw.strip() and tracks[track_id].country != track_country:
                    raise ParseError(
                        path, line_no,
                        f"track {track_id!r} country conflict: "
                        f"{tracks[track_id].country} vs {track_country}",
                    )
            else:
                tracks[track_id] = TrackMeta(track_id, track_country)
            rows.append(Interaction(user_id, track_id, count=count, provenance=0))

    ds = InteractionDataset(users, tracks, tuple(rows))
    return apply_filters(ds, options)


def apply_filters(ds: InteractionDataset, options: IngestOptions) -> InteractionDataset:
    """Apply min-track-interactions and 5-core filtering; idempotent."""
    interactions = list(ds.interactions)

    if options.min_track_interactions > 1:
        counts: dict[str, int] = {}
        for it in interactions:
            counts[it.track_id] = counts.get(it.track_id, 0) + 1
        keep = {t for t, c in counts.items() if c >= options.min_track_interactions}
        interactions = [it for it in interactions if it.track_id in keep]

    if options.five_core:
        interactions = _k_core(interactions, k=5)

    if options != IngestOptions():
        if not interactions:
            raise EmptyDatasetError("empty after filtering")
        kept_users = {it.user_id for it in interactions}
        kept_tracks = {it.track_id for it in interactions}
        users = {uid: ds.users[uid] for uid in ds.users if uid in kept_users}
        tracks = {tid: ds.tracks[tid] for tid in ds.tracks if tid in kept_tracks}
        return InteractionDataset(users, tracks, tuple(interactions))
    if not interactions:
        raise EmptyDatasetError("empty dataset")
    return InteractionDataset(dict(ds.users), dict(ds.tracks), tuple(interactions))


def _k_core(interactions: list[Interaction], k: int) -> list[Interaction]:
    """Drop users/tracks with < k interactions, repeating until stable."""
    current = interactions
    while True:
        user_counts: dict[str, int] = {}
        track_counts: dict[str, int] = {}
        for it in current:
            user_counts[it.user_id] = user_counts.get(it.user_id, 0) + 1
            track_counts[it.track_id] = track_counts.get(it.track_id, 0) + 1
        bad_users = {u for u, c in user_counts.items() if c < k}
        bad_tracks = {t for t, c in track_counts.items() if c < k}
        if not bad_users and not bad_tracks:
            return current
        current = [
            it for it in current
            if it.user_id not in bad_users and it.track_id not in bad_tracks
        ]
        if not current:
            return current


def random_split(
    ds: InteractionDataset,
    ratios: tuple[float, float, float] = (0.75, 0.20, 0.05),
    rng_seed: int | Iterable[int] = 0,
) -> DatasetSplit:
    """Randomly partition interaction indices into train/validation/test.

    After the raw draw, every user left without a training interaction gets
    one of their held-out interactions promoted into train (chosen uniformly),
    so each user stays trainable.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    if any(r < 0 for r in ratios):
        raise ConfigError(f"split ratios must be non-negative, got {ratios}")
    n = len(ds.interactions)
    if n == 0:
        raise DataError("cannot split an empty dataset")

    rng = derive_rng(rng_seed)
    perm = rng.permutation(n)
    n_train = int(n * ratios[0])
    n_val = int(n * ratios[1])
    train = set(perm[:n_train].tolist())
    val = set(perm[n_train:n_train + n_val].tolist())
    test = set(perm[n_train + n_val:].tolist())

    by_user: dict[str, list[int]] = {uid: [] for uid in ds.users}
    for idx, it in enumerate(ds.interactions):
        by_user[it.user_id].append(idx)
    for uid in ds.user_ids:
        indices = by_user[uid]
        if not indices:
            continue
        if any(i in train for i in indices):
            continue
        held = sorted(i for i in indices if i in val or i in test)
        promoted = int(held[rng.integers(len(held))])
        val.discard(promoted)
        test.discard(promoted)
        train.add(promoted)

    return DatasetSplit(frozenset(train), frozenset(val), frozenset(test))


def augment(
    ds: InteractionDataset,
    accepted: Mapping[str, str],
    iteration: int,
) -> InteractionDataset:
    """Return a new dataset with one simulated interaction per accepting user.

    Users are appended in sorted id order so the result is independent of the
    mapping's insertion order. Re-adding a track the user has already seen is
    an invariant violation (it means recommendation exclusion failed).
    """
    if iteration < 1:
        raise InvariantViolationError(f"augmentation iteration must be >= 1, got {iteration}")
    if not accepted:
        return ds
    seen = ds.seen_sets()
    new_rows: list[Interaction] = []
    for uid in sorted(accepted):
        tid = accepted[uid]
        if uid not in ds.users:
            raise InvariantViolationError(f"accepted item for unknown user {uid!r}")
        if tid not in ds.tracks:
            raise InvariantViolationError(f"accepted unknown track {tid!r}")
        if tid in seen[uid]:
            raise InvariantViolationError(
                f"accepted track {tid!r} already seen by user {uid!r}"
            )
        new_rows.append(Interaction(uid, tid, count=1, provenance=iteration))
    return InteractionDataset(
        ds.users, ds.tracks, ds.interactions + tuple(new_rows)
    )


def write_interactions(ds: InteractionDataset, path: str | Path) -> None:
    """Write the dataset in the ingestion file format, preserving order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(INTERACTIONS_HEADER) + "\n")
        for it in ds.interactions:
            uc = ds.users[it.user_id].country
            tc = ds.tracks[it.track_id].country
            fh.write(f"{it.user_id}\t{it.track_id}\t{uc}\t{tc}\t{it.count}\n")


def dataset_fingerprint(path: str | Path) -> str:
    """Content hash of a dataset file (sha256 hex)."""
    import hashlib

    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
