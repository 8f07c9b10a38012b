"""Pluggable recommenders: Pop, ItemKNN, BPR, plus file-backed and random models.

Every model fits on a training split view, then scores all tracks of the
dataset universe for a user. Ranking, seen-item exclusion and tie-breaking
live in recommend_top_k so all models rank identically: scores descending,
ties by ascending track_id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp

from .dataset import Interaction, InteractionDataset
from .errors import (
    ConfigError,
    DataError,
    InvariantViolationError,
    ParseError,
    TrainingDivergedError,
    UnknownUserError,
)
from .metrics import ndcg_at_k
from .rng import derive_rng, stable_user_hash

__all__ = [
    "TrainingConfig",
    "SplitView",
    "split_view",
    "RecommendationList",
    "Recommender",
    "PopModel",
    "ItemKNNModel",
    "BPRModel",
    "FixtureModel",
    "RandomModel",
    "MODEL_NAMES",
    "make_model",
    "recommend_top_k",
    "triple_loss",
    "triple_grads",
    "sgd_step",
]


@dataclass(frozen=True)
class TrainingConfig:
    """Model hyperparameters and early-stopping policy."""

    max_epochs: int = 200
    patience: int = 5
    eval_k: int = 10
    embedding_dim: int = 64
    learning_rate: float = 0.01
    l2_reg: float = 1e-4
    neighborhood: int = 100
    shrinkage: float = 0.0
    batch_size: int = 256
    rng_seed: int | tuple[int, ...] = 0

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.eval_k < 1:
            raise ConfigError(f"eval_k must be >= 1, got {self.eval_k}")
        if self.embedding_dim < 1:
            raise ConfigError(f"embedding_dim must be >= 1, got {self.embedding_dim}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.l2_reg < 0:
            raise ConfigError(f"l2_reg must be >= 0, got {self.l2_reg}")
        if self.neighborhood < 1:
            raise ConfigError(f"neighborhood must be >= 1, got {self.neighborhood}")
        if self.shrinkage < 0:
            raise ConfigError(f"shrinkage must be >= 0, got {self.shrinkage}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class SplitView:
    """One split's interactions over the full user/track universe."""

    user_ids: tuple[str, ...]
    track_ids: tuple[str, ...]
    interactions: tuple[Interaction, ...]

    @property
    def user_index(self) -> dict[str, int]:
        return {u: i for i, u in enumerate(self.user_ids)}

    @property
    def track_index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.track_ids)}

    def items_by_user(self) -> dict[str, set[str]]:
        out: dict[str, set[str]] = {u: set() for u in self.user_ids}
        for it in self.interactions:
            out[it.user_id].add(it.track_id)
        return out


def split_view(ds: InteractionDataset, indices: Iterable[int]) -> SplitView:
    """Restrict a dataset to the interactions at the given indices."""
    wanted = sorted(set(indices))
    rows = tuple(ds.interactions[i] for i in wanted)
    return SplitView(tuple(ds.user_ids), tuple(ds.track_ids), rows)


@dataclass(frozen=True)
class RecommendationList:
    """Top-k entries for one user: (track_id, score), best first."""

    user_id: str
    entries: tuple[tuple[str, float], ...]

    def __post_init__(self):
        scores = [s for _, s in self.entries]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise InvariantViolationError(f"scores not non-increasing for {self.user_id}")

    @property
    def items(self) -> tuple[str, ...]:
        return tuple(t for t, _ in self.entries)

    def __len__(self) -> int:
        return len(self.entries)


class Recommender:
    """Contract: fit once, then score any user over the track universe."""

    name = "base"
    # When set, a refit may continue from previously learned parameters
    # instead of reinitializing. Only BPR carries state worth reusing.
    warm_start = False

    def __init__(self):
        self.track_ids: tuple[str, ...] = ()
        self._user_index: dict[str, int] = {}

    def fit(self, train: SplitView, validation: SplitView | None, cfg: TrainingConfig) -> None:
        raise NotImplementedError

    def score(self, user_id: str) -> np.ndarray:
        """Scores aligned with self.track_ids; higher means ranked earlier."""
        raise NotImplementedError

    def _bind_universe(self, train: SplitView) -> None:
        if not train.interactions:
            raise DataError("cannot fit on an empty training split")
        self.track_ids = train.track_ids
        self._user_index = train.user_index

    def _require_user(self, user_id: str) -> int:
        idx = self._user_index.get(user_id)
        if idx is None:
            raise UnknownUserError(f"{self.name} was not fit for user {user_id!r}")
        return idx


class PopModel(Recommender):
    """Most-popular-by-training-count; identical scores for every user."""

    name = "pop"

    def fit(self, train: SplitView, validation: SplitView | None = None,
            cfg: TrainingConfig = TrainingConfig()) -> None:
        self._bind_universe(train)
        counts = np.zeros(len(train.track_ids), dtype=float)
        index = train.track_index
        for it in train.interactions:
            counts[index[it.track_id]] += it.count
        self._counts = counts

    def score(self, user_id: str) -> np.ndarray:
        return self._counts.copy()


class ItemKNNModel(Recommender):
    """Item-item cosine neighborhoods over binarized train vectors.

    sim(i, j) = |U_i and U_j| / (sqrt(|U_i| * |U_j|) + shrinkage), truncated
    to the top-N neighbors per item; a user's score for i sums sim(i, j) over
    their trained items j.
    """

    name = "itemknn"

    def fit(self, train: SplitView, validation: SplitView | None = None,
            cfg: TrainingConfig = TrainingConfig()) -> None:
        self._bind_universe(train)
        n_items = len(train.track_ids)
        n_users = len(train.user_ids)
        uindex = train.user_index
        tindex = train.track_index

        pairs = {(tindex[it.track_id], uindex[it.user_id]) for it in train.interactions}
        rows = np.fromiter((p[0] for p in pairs), dtype=np.int64, count=len(pairs))
        cols = np.fromiter((p[1] for p in pairs), dtype=np.int64, count=len(pairs))
        matrix = sp.csr_matrix(
            (np.ones(len(pairs)), (rows, cols)), shape=(n_items, n_users)
        )
        item_counts = np.asarray(matrix.sum(axis=1)).ravel()
        norms = np.sqrt(item_counts)

        co = (matrix @ matrix.T).tocsr()
        co.setdiag(0.0)
        co.eliminate_zeros()

        keep_rows: list[np.ndarray] = []
        keep_cols: list[np.ndarray] = []
        keep_vals: list[np.ndarray] = []
        top_n = cfg.neighborhood
        for i in range(n_items):
            start, stop = co.indptr[i], co.indptr[i + 1]
            if start == stop:
                continue
            neighbors = co.indices[start:stop]
            sims = co.data[start:stop] / (norms[i] * norms[neighbors] + cfg.shrinkage)
            order = np.lexsort((neighbors, -sims))[:top_n]
            keep_rows.append(np.full(len(order), i, dtype=np.int64))
            keep_cols.append(neighbors[order])
            keep_vals.append(sims[order])
        if keep_rows:
            self._weights = sp.csr_matrix(
                (np.concatenate(keep_vals),
                 (np.concatenate(keep_rows), np.concatenate(keep_cols))),
                shape=(n_items, n_items),
            )
        else:
            self._weights = sp.csr_matrix((n_items, n_items))
        self._train_items = {
            uid: sorted(tindex[t] for t in items)
            for uid, items in train.items_by_user().items()
        }

    def score(self, user_id: str) -> np.ndarray:
        self._require_user(user_id)
        profile = np.zeros(len(self.track_ids))
        profile[self._train_items[user_id]] = 1.0
        return self._weights @ profile


def _sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    # Branch on sign to keep exp() off large positive arguments.
    return np.where(
        np.asarray(x) >= 0,
        1.0 / (1.0 + np.exp(-np.abs(x))),
        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))),
    )


def triple_loss(u: np.ndarray, vi: np.ndarray, vj: np.ndarray,
                bi: float, bj: float, reg: float) -> float:
    """Pairwise ranking loss of one (user, positive, negative) triple."""
    diff = float(u @ vi + bi - u @ vj - bj)
    data = float(np.logaddexp(0.0, -diff))
    penalty = 0.5 * reg * (u @ u + vi @ vi + vj @ vj + bi * bi + bj * bj)
    return data + float(penalty)


def triple_grads(u: np.ndarray, vi: np.ndarray, vj: np.ndarray,
                 bi: float, bj: float, reg: float):
    """Analytic gradients of triple_loss w.r.t. every parameter block."""
    diff = float(u @ vi + bi - u @ vj - bj)
    s = float(_sigmoid(-diff))
    gu = -s * (vi - vj) + reg * u
    gvi = -s * u + reg * vi
    gvj = s * u + reg * vj
    gbi = -s + reg * bi
    gbj = s + reg * bj
    return gu, gvi, gvj, gbi, gbj


def sgd_step(u: np.ndarray, vi: np.ndarray, vj: np.ndarray,
             bi: float, bj: float, reg: float, lr: float):
    """One descent step on a triple; returns updated copies."""
    gu, gvi, gvj, gbi, gbj = triple_grads(u, vi, vj, bi, bj, reg)
    return u - lr * gu, vi - lr * gvi, vj - lr * gvj, bi - lr * gbi, bj - lr * gbj


class BPRModel(Recommender):
    """Pairwise ranking with latent factors and item bias.

    Minimizes -ln sigmoid(x_ui - x_uj) + L2 by minibatched SGD; one uniform
    negative per positive, drawn from items outside the user's training set;
    |train| triples per epoch. Early stopping keeps the parameters of the
    best validation-NDCG epoch. With warm_start set, a refit over the same
    user/item universe continues from the previous best parameters.
    """

    name = "bpr"

    def fit(self, train: SplitView, validation: SplitView | None,
            cfg: TrainingConfig = TrainingConfig()) -> None:
        prev = None
        if self.warm_start and getattr(self, "_user_emb", None) is not None:
            prev = (self._user_emb, self._item_emb, self._item_bias)

        self._bind_universe(train)
        rng = derive_rng(cfg.rng_seed)
        n_users = len(train.user_ids)
        n_items = len(train.track_ids)
        dim = cfg.embedding_dim
        scale = 1.0 / math.sqrt(dim)

        if prev is not None and prev[0].shape == (n_users, dim) \
                and prev[1].shape == (n_items, dim):
            user_emb, item_emb, item_bias = (a.copy() for a in prev)
        else:
            user_emb = rng.uniform(-scale, scale, size=(n_users, dim))
            item_emb = rng.uniform(-scale, scale, size=(n_items, dim))
            item_bias = np.zeros(n_items)

        uindex = train.user_index
        tindex = train.track_index
        pos_u = np.fromiter((uindex[it.user_id] for it in train.interactions),
                            dtype=np.int64, count=len(train.interactions))
        pos_i = np.fromiter((tindex[it.track_id] for it in train.interactions),
                            dtype=np.int64, count=len(train.interactions))
        train_codes = np.unique(pos_u * n_items + pos_i)
        self._train_items = {
            uid: sorted(tindex[t] for t in items)
            for uid, items in train.items_by_user().items()
        }
        self._items_by_uidx = [self._train_items[u] for u in train.user_ids]

        val_sets: dict[int, frozenset[int]] = {}
        if validation is not None:
            for uid, items in validation.items_by_user().items():
                if items:
                    val_sets[uindex[uid]] = frozenset(tindex[t] for t in items)

        n_triples = len(train.interactions)
        best = (-math.inf, None)
        stale = 0
        self.epoch_losses: list[float] = []
        self.validation_history: list[float] = []

        for epoch in range(1, cfg.max_epochs + 1):
            rows = rng.integers(0, n_triples, size=n_triples)
            users, positives = pos_u[rows], pos_i[rows]
            negatives = self._draw_negatives(rng, users, n_items, train_codes)

            loss_sum = 0.0
            for lo in range(0, n_triples, cfg.batch_size):
                hi = min(lo + cfg.batch_size, n_triples)
                loss_sum += self._batch_update(
                    user_emb, item_emb, item_bias,
                    users[lo:hi], positives[lo:hi], negatives[lo:hi],
                    cfg.learning_rate, cfg.l2_reg,
                )
            epoch_loss = loss_sum / n_triples
            if not np.isfinite(epoch_loss):
                raise TrainingDivergedError(epoch, f"mean loss {epoch_loss}")
            self.epoch_losses.append(epoch_loss)

            if val_sets:
                ndcg = self._validation_ndcg(user_emb, item_emb, item_bias,
                                             val_sets, cfg.eval_k)
                self.validation_history.append(ndcg)
                if ndcg > best[0]:
                    best = (ndcg, (user_emb.copy(), item_emb.copy(), item_bias.copy()))
                    stale = 0
                else:
                    stale += 1
                    if stale >= cfg.patience:
                        break

        if best[1] is not None:
            user_emb, item_emb, item_bias = best[1]
        self.best_validation_ndcg = best[0] if best[1] is not None else None
        self._user_emb = user_emb
        self._item_emb = item_emb
        self._item_bias = item_bias

    @staticmethod
    def _draw_negatives(rng: np.random.Generator, users: np.ndarray,
                        n_items: int, train_codes: np.ndarray) -> np.ndarray:
        negatives = rng.integers(0, n_items, size=len(users))
        for _ in range(1000):
            clash = np.isin(users * n_items + negatives, train_codes)
            if not clash.any():
                return negatives
            negatives[clash] = rng.integers(0, n_items, size=int(clash.sum()))
        raise InvariantViolationError("negative sampling failed: a user has seen every item")

    @staticmethod
    def _batch_update(user_emb, item_emb, item_bias, users, positives, negatives,
                      lr: float, reg: float) -> float:
        """Scatter SGD updates for one batch; returns the summed data loss."""
        u = user_emb[users]
        vi = item_emb[positives]
        vj = item_emb[negatives]
        diff = np.einsum("ij,ij->i", u, vi - vj) + item_bias[positives] - item_bias[negatives]
        s = np.asarray(_sigmoid(-diff))

        gu = -s[:, None] * (vi - vj) + reg * u
        gvi = -s[:, None] * u + reg * vi
        gvj = s[:, None] * u + reg * vj
        np.add.at(user_emb, users, -lr * gu)
        np.add.at(item_emb, positives, -lr * gvi)
        np.add.at(item_emb, negatives, -lr * gvj)
        np.add.at(item_bias, positives, -lr * (-s + reg * item_bias[positives]))
        np.add.at(item_bias, negatives, -lr * (s + reg * item_bias[negatives]))
        return float(np.logaddexp(0.0, -diff).sum())

    def _validation_ndcg(self, user_emb, item_emb, item_bias,
                         val_sets: Mapping[int, frozenset[int]], k: int) -> float:
        total = 0.0
        for u_idx in sorted(val_sets):
            scores = item_emb @ user_emb[u_idx] + item_bias
            # exclude only train-seen items; validation items must stay rankable
            scores[self._items_by_uidx[u_idx]] = -np.inf
            top = np.argsort(-scores, kind="stable")[:k]
            total += ndcg_at_k(list(top), val_sets[u_idx], k)
        return total / len(val_sets)

    def score(self, user_id: str) -> np.ndarray:
        idx = self._require_user(user_id)
        return self._item_emb @ self._user_emb[idx] + self._item_bias


class FixtureModel(Recommender):
    """Scores read from a tab-separated user_id/track_id/score file.

    The external seam for models trained elsewhere: pairs absent from the
    file score -inf and therefore rank last.
    """

    name = "fixture"

    def __init__(self, path: str | Path):
        super().__init__()
        self._path = Path(path)

    def fit(self, train: SplitView, validation: SplitView | None = None,
            cfg: TrainingConfig = TrainingConfig()) -> None:
        self._bind_universe(train)
        tindex = train.track_index
        scores: dict[str, np.ndarray] = {}
        with open(self._path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                fields = line.rstrip("\n").split("\t")
                if line_no == 1 and fields == ["user_id", "track_id", "score"]:
                    continue
                if len(fields) != 3:
                    raise ParseError(self._path, line_no,
                                     f"expected 3 tab-separated fields, got {len(fields)}")
                uid, tid, raw = fields
                try:
                    value = float(raw)
                except ValueError:
                    raise ParseError(self._path, line_no,
                                     f"score is not a number: {raw!r}") from None
                if uid not in self._user_index:
                    raise ParseError(self._path, line_no, f"unknown user {uid!r}")
                if tid not in tindex:
                    raise ParseError(self._path, line_no, f"unknown track {tid!r}")
                if uid not in scores:
                    scores[uid] = np.full(len(train.track_ids), -np.inf)
                scores[uid][tindex[tid]] = value
        self._scores = scores

    def score(self, user_id: str) -> np.ndarray:
        self._require_user(user_id)
        if user_id in self._scores:
            return self._scores[user_id].copy()
        return np.full(len(self.track_ids), -np.inf)


class RandomModel(Recommender):
    """Uniform random scores per user; the null baseline for ranking checks."""

    name = "random"

    def fit(self, train: SplitView, validation: SplitView | None = None,
            cfg: TrainingConfig = TrainingConfig()) -> None:
        self._bind_universe(train)
        self._seed = cfg.rng_seed

    def score(self, user_id: str) -> np.ndarray:
        self._require_user(user_id)
        rng = derive_rng(self._seed, stable_user_hash(user_id))
        return rng.random(len(self.track_ids))


MODEL_NAMES = ("pop", "itemknn", "bpr", "random", "fixture")


def make_model(name: str, fixture_path: str | Path | None = None) -> Recommender:
    if name == "pop":
        return PopModel()
    if name == "itemknn":
        return ItemKNNModel()
    if name == "bpr":
        return BPRModel()
    if name == "random":
        return RandomModel()
    if name == "fixture":
        if fixture_path is None:
            raise ConfigError("fixture model needs a scores file path")
        return FixtureModel(fixture_path)
    raise ConfigError(f"unknown model {name!r}; available: {', '.join(MODEL_NAMES)}")


def recommend_top_k(model: Recommender, user_id: str, k: int,
                    seen: set[str] | frozenset[str]) -> RecommendationList:
    """Rank the track universe for a user and keep the best k unseen items."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    scores = model.score(user_id)
    track_ids = model.track_ids
    if len(scores) != len(track_ids):
        raise InvariantViolationError(
            f"{model.name} scored {len(scores)} items for a universe of {len(track_ids)}"
        )
    # track_ids is sorted, so a stable sort on -scores breaks ties by id.
    order = np.argsort(-scores, kind="stable")
    entries: list[tuple[str, float]] = []
    for idx in order:
        tid = track_ids[idx]
        if tid in seen:
            continue
        entries.append((tid, float(scores[idx])))
        if len(entries) == k:
            break
    return RecommendationList(user_id, tuple(entries))
