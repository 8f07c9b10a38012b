import numpy as np
import pytest

from loopsim.dataset import (
    INTERACTIONS_HEADER,
    Interaction,
    InteractionDataset,
    TrackMeta,
    UserMeta,
)


def write_interactions_file(path, rows, header=True):
    """rows: iterables of (user_id, track_id, user_country, track_country, count)."""
    lines = []
    if header:
        lines.append("\t".join(INTERACTIONS_HEADER))
    for row in rows:
        lines.append("\t".join(str(f) for f in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def build_dataset(pairs, user_countries=None, track_countries=None, counts=None):
    """pairs: list of (user_id, track_id). Countries default to OTHER."""
    user_countries = user_countries or {}
    track_countries = track_countries or {}
    counts = counts or {}
    users = {}
    tracks = {}
    rows = []
    for uid, tid in pairs:
        users.setdefault(uid, UserMeta(uid, user_countries.get(uid, "OTHER")))
        tracks.setdefault(tid, TrackMeta(tid, track_countries.get(tid, "OTHER")))
        rows.append(Interaction(uid, tid, count=counts.get((uid, tid), 1)))
    return InteractionDataset(users, tracks, tuple(rows))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
