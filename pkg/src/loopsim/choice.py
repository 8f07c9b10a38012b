"""Exponential rank-based acceptance: pick one recommended item per user.

The probability of accepting the item at rank r in a list of length k is
exp(alpha * r) / sum_j exp(alpha * j), ranks counted from 1. Negative alpha
concentrates acceptance near the top of the list; alpha = 0 degenerates to
uniform choice and is allowed for testing only.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, NoAcceptableItemError

DEFAULT_ALPHA = -0.1
DEFAULT_LIST_LENGTH = 10


@dataclass(frozen=True)
class ChoiceConfig:
    """Acceptance parameters: list-position decay and nominal list length."""

    alpha: float = DEFAULT_ALPHA
    k: int = DEFAULT_LIST_LENGTH
    rng_seed: int | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"recommendation list length must be >= 1, got {self.k}")


def acceptance_probabilities(k: int, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Probability of accepting each rank 1..k; sums to 1 within 1e-12.

    Computed as a shifted softmax so large |alpha| * k cannot underflow the
    numerator and denominator at the same time.
    """
    if k < 1:
        raise ConfigError(f"list length must be >= 1, got {k}")
    if alpha >= 0:
        warnings.warn(
            f"alpha={alpha} is non-negative; acceptance no longer favors top ranks",
            stacklevel=2,
        )
    exponents = alpha * np.arange(1, k + 1, dtype=float)
    exponents -= exponents.max()
    weights = np.exp(exponents)
    return weights / weights.sum()


def sample_accepted_item(
    rec: Sequence[str],
    cfg: ChoiceConfig,
    rng: np.random.Generator,
) -> str:
    """Draw one item from a recommendation list under the rank probabilities.

    Lists shorter than cfg.k renormalize over their actual length, so one
    item is always accepted from a non-empty list. Raises
    NoAcceptableItemError for an empty list so the caller can record a
    skipped user.
    """
    if len(rec) == 0:
        raise NoAcceptableItemError("empty recommendation list")
    probs = acceptance_probabilities(len(rec), cfg.alpha)
    cumulative = np.cumsum(probs)
    idx = int(np.searchsorted(cumulative, rng.random(), side="right"))
    return rec[min(idx, len(rec) - 1)]
