"""Deterministic RNG stream derivation.

Every random draw in a simulation flows from one master seed. Sub-streams
are derived from (seed, iteration, purpose tag[, user hash]) so replays are
exact and per-user sampling is independent of scheduling order.
"""

from __future__ import annotations

import hashlib
from typing import Iterable

import numpy as np

# Stream tags keep derived generators from colliding across purposes.
STREAM_SPLIT = 1
STREAM_MODEL = 2
STREAM_USER = 3
STREAM_SYNTH = 4


def stable_user_hash(user_id: str) -> int:
    """Stable 64-bit integer for a user id (unlike builtin hash, survives restarts)."""
    digest = hashlib.blake2b(user_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def derive_rng(*parts: int | Iterable[int]) -> np.random.Generator:
    """Build a generator seeded from the flattened integer parts."""
    flat: list[int] = []
    for part in parts:
        if isinstance(part, (int, np.integer)):
            flat.append(int(part))
        else:
            flat.extend(int(p) for p in part)
    return np.random.default_rng(flat)


def split_rng(seed: int, iteration: int) -> np.random.Generator:
    return derive_rng(seed, iteration, STREAM_SPLIT)


def model_rng_seed(seed: int, iteration: int) -> tuple[int, ...]:
    return (seed, iteration, STREAM_MODEL)


def user_rng(seed: int, iteration: int, user_id: str) -> np.random.Generator:
    return derive_rng(seed, iteration, STREAM_USER, stable_user_hash(user_id))
