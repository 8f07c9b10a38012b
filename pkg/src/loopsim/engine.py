"""Feedback-loop engine: split, train, recommend, accept, augment, record.

Each iteration re-splits the current dataset, fits a fresh model, produces
top-k lists that exclude everything each user has ever seen, samples one
accepted item per user, and appends it to the user's profile. Per-iteration
metrics stream to a CSV; checkpoints make any run resumable and replayable
bit for bit.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import hashlib

import numpy as np

from .choice import ChoiceConfig, sample_accepted_item
from .dataset import (
    Interaction,
    InteractionDataset,
    UserProfile,
    augment,
    ingest,
    random_split,
    write_interactions,
)
from .errors import (
    ConfigError,
    DataError,
    InvariantViolationError,
    TrainingDivergedError,
    UnknownUserError,
)
from .metrics import (
    PopularityBinning,
    country_distribution,
    country_proportions,
    jsd,
    ndcg_at_k,
    popularity_binning,
    popularity_distribution,
)
from .recommenders import (
    MODEL_NAMES,
    Recommender,
    SplitView,
    TrainingConfig,
    make_model,
    recommend_top_k,
    split_view,
)
from .rng import STREAM_SPLIT, model_rng_seed, user_rng

METRICS_HEADER = "iteration,scope,model,metric,country,value"
SCOPE_POPULATION = "population"
SCOPE_COUNTRY = "country"

# Population-scope metric emitted for every iteration including the baseline;
# used to detect truncated CSVs.
MARKER_METRIC = "prof_mean_p_local"

CHECKPOINT_INTERACTIONS = "interactions.tsv"
CHECKPOINT_STATE = "state.json"


@dataclass(frozen=True)
class SimulationConfig:
    """Everything a run needs; hashable so checkpoints can verify identity."""

    n_iterations: int = 100
    k: int = 10
    alpha: float = -0.1
    split_ratios: tuple[float, float, float] = (0.75, 0.20, 0.05)
    model: str = "pop"
    training: TrainingConfig = field(default_factory=TrainingConfig)
    fixture_scores: str | None = None
    freeze_popularity_binning: bool = False
    warm_start: bool = False
    delta_points: bool = False
    significance_alpha: float = 0.05
    bonferroni_m: int = 12
    min_country_users: int = 100
    min_country_tracks: int = 1000
    checkpoint_every: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ConfigError(f"n_iterations must be >= 1, got {self.n_iterations}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.model not in MODEL_NAMES:
            raise ConfigError(
                f"unknown model {self.model!r}; available: {', '.join(MODEL_NAMES)}"
            )
        if self.model == "fixture" and not self.fixture_scores:
            raise ConfigError("model 'fixture' requires fixture_scores")
        if len(self.split_ratios) != 3:
            raise ConfigError(f"split_ratios must have 3 entries, got {self.split_ratios}")
        if self.checkpoint_every < 0:
            raise ConfigError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        if self.significance_alpha <= 0 or self.significance_alpha >= 1:
            raise ConfigError(
                f"significance_alpha must be in (0, 1), got {self.significance_alpha}"
            )
        if self.bonferroni_m < 1:
            raise ConfigError(f"bonferroni_m must be >= 1, got {self.bonferroni_m}")
        if self.min_country_users < 0 or self.min_country_tracks < 0:
            raise ConfigError("country thresholds must be >= 0")


def config_digest(cfg: SimulationConfig) -> str:
    """Stable content hash of a config; stored with checkpoints and manifests."""
    canon = json.dumps(asdict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _mean(values: Mapping[str, float]) -> float | None:
    if not values:
        return None
    return sum(values.values()) / len(values)


@dataclass(frozen=True)
class IterationRecord:
    """Everything measured in one iteration (iteration 0 = baseline)."""

    iteration: int
    model: str
    validation_ndcg: float | None
    rec_p_local: Mapping[str, float]
    rec_p_us: Mapping[str, float]
    prof_p_local: Mapping[str, float]
    prof_p_us: Mapping[str, float]
    country_jsd: Mapping[str, float]
    popularity_jsd: Mapping[str, float]
    accepted: Mapping[str, str]
    skipped: int

    @property
    def mean_rec_p_local(self) -> float | None:
        return _mean(self.rec_p_local)

    @property
    def mean_rec_p_us(self) -> float | None:
        return _mean(self.rec_p_us)

    @property
    def mean_prof_p_local(self) -> float | None:
        return _mean(self.prof_p_local)

    @property
    def mean_prof_p_us(self) -> float | None:
        return _mean(self.prof_p_us)

    @property
    def mean_country_jsd(self) -> float | None:
        return _mean(self.country_jsd)

    @property
    def mean_popularity_jsd(self) -> float | None:
        return _mean(self.popularity_jsd)


def validation_ndcg(model: Recommender, train: SplitView, validation: SplitView,
                    k: int) -> float:
    """Mean NDCG@k over users holding validation items, excluding train-seen."""
    train_items = train.items_by_user()
    val_items = validation.items_by_user()
    tindex = train.track_index
    total = 0.0
    counted = 0
    for uid in validation.user_ids:
        relevant = val_items[uid]
        if not relevant:
            continue
        try:
            scores = np.array(model.score(uid), dtype=float)
        except UnknownUserError:
            continue
        exclude = [tindex[t] for t in train_items[uid]]
        scores[exclude] = -np.inf
        top = np.argsort(-scores, kind="stable")[:k]
        ranked = [model.track_ids[i] for i in top]
        total += ndcg_at_k(ranked, relevant, k)
        counted += 1
    return total / counted if counted else 0.0


def _profile_metrics(
    ds: InteractionDataset,
    initial_profiles: Mapping[str, UserProfile],
    binning: PopularityBinning,
) -> tuple[dict[str, float], dict[str, float], dict[str, float], dict[str, float]]:
    """Per-user profile proportions and profile-vs-initial divergences."""
    track_countries = {tid: ds.tracks[tid].country for tid in ds.tracks}
    profiles = ds.profiles()
    p_local: dict[str, float] = {}
    p_us: dict[str, float] = {}
    cjsd: dict[str, float] = {}
    pjsd: dict[str, float] = {}
    for uid in ds.user_ids:
        items = profiles[uid].items
        if not items:
            continue
        uc = ds.users[uid].country
        p_local[uid], p_us[uid] = country_proportions(items, uc, track_countries)
        init_items = initial_profiles[uid].items
        cjsd[uid] = jsd(
            country_distribution(items, uc, track_countries),
            country_distribution(init_items, uc, track_countries),
        )
        pjsd[uid] = jsd(
            popularity_distribution(items, binning),
            popularity_distribution(init_items, binning),
        )
    return p_local, p_us, cjsd, pjsd


def baseline_record(ds: InteractionDataset, cfg: SimulationConfig) -> IterationRecord:
    """Iteration-0 record: initial profiles against themselves (all JSD 0)."""
    binning = popularity_binning(ds)
    p_local, p_us, cjsd, pjsd = _profile_metrics(ds, ds.profiles(), binning)
    return IterationRecord(
        iteration=0, model=cfg.model, validation_ndcg=None,
        rec_p_local={}, rec_p_us={},
        prof_p_local=p_local, prof_p_us=p_us,
        country_jsd=cjsd, popularity_jsd=pjsd,
        accepted={}, skipped=0,
    )


def run_iteration(
    ds: InteractionDataset,
    initial_profiles: Mapping[str, UserProfile],
    cfg: SimulationConfig,
    iteration: int,
    model: Recommender | None = None,
    initial_binning: PopularityBinning | None = None,
) -> tuple[InteractionDataset, IterationRecord, Recommender]:
    """One loop pass; returns the augmented dataset, its record, and the model.

    The returned model is only reused by the caller when warm starting;
    otherwise a fresh instance is built here every iteration.
    """
    if iteration < 1:
        raise InvariantViolationError(f"iteration must be >= 1, got {iteration}")

    split = random_split(
        ds, cfg.split_ratios, rng_seed=(cfg.rng_seed, iteration, STREAM_SPLIT)
    )
    train = split_view(ds, split.train)
    validation = split_view(ds, split.validation)

    if model is None or not cfg.warm_start:
        model = make_model(cfg.model, cfg.fixture_scores)
        model.warm_start = cfg.warm_start
    tcfg = replace(cfg.training, rng_seed=model_rng_seed(cfg.rng_seed, iteration))
    try:
        model.fit(train, validation, tcfg)
    except TrainingDivergedError as exc:
        raise TrainingDivergedError(exc.epoch, f"iteration {iteration}") from exc

    ndcg = validation_ndcg(model, train, validation, cfg.training.eval_k)

    choice_cfg = ChoiceConfig(alpha=cfg.alpha, k=cfg.k)
    seen = ds.seen_sets()
    track_countries = {tid: ds.tracks[tid].country for tid in ds.tracks}
    rec_p_local: dict[str, float] = {}
    rec_p_us: dict[str, float] = {}
    accepted: dict[str, str] = {}
    skipped = 0
    for uid in ds.user_ids:
        rec = recommend_top_k(model, uid, cfg.k, seen[uid])
        if set(rec.items) & seen[uid]:
            raise InvariantViolationError(f"seen item recommended to {uid!r}")
        if len(rec) == 0:
            skipped += 1
            continue
        uc = ds.users[uid].country
        rec_p_local[uid], rec_p_us[uid] = country_proportions(
            rec.items, uc, track_countries
        )
        accepted[uid] = sample_accepted_item(
            rec.items, choice_cfg, user_rng(cfg.rng_seed, iteration, uid)
        )

    new_ds = augment(ds, accepted, iteration)
    if cfg.freeze_popularity_binning:
        binning = initial_binning if initial_binning is not None else popularity_binning(ds)
    else:
        binning = popularity_binning(new_ds)
    prof_p_local, prof_p_us, cjsd, pjsd = _profile_metrics(
        new_ds, initial_profiles, binning
    )

    record = IterationRecord(
        iteration=iteration, model=cfg.model, validation_ndcg=ndcg,
        rec_p_local=rec_p_local, rec_p_us=rec_p_us,
        prof_p_local=prof_p_local, prof_p_us=prof_p_us,
        country_jsd=cjsd, popularity_jsd=pjsd,
        accepted=accepted, skipped=skipped,
    )
    return new_ds, record, model


def _fmt(value: float | int) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def metric_rows(record: IterationRecord, ds: InteractionDataset) -> list[str]:
    """CSV lines for one record: population scope first, then per-country."""
    i, m = record.iteration, record.model
    rows: list[str] = []

    def pop_row(metric: str, value) -> None:
        rows.append(f"{i},{SCOPE_POPULATION},{m},{metric},,{_fmt(value)}")

    if record.validation_ndcg is not None:
        pop_row("validation_ndcg", record.validation_ndcg)
    population_metrics = [
        ("rec_mean_p_local", record.mean_rec_p_local),
        ("rec_mean_p_us", record.mean_rec_p_us),
        ("prof_mean_p_local", record.mean_prof_p_local),
        ("prof_mean_p_us", record.mean_prof_p_us),
        ("prof_country_jsd_mean", record.mean_country_jsd),
        ("prof_popularity_jsd_mean", record.mean_popularity_jsd),
    ]
    for name, value in population_metrics:
        if value is not None:
            pop_row(name, value)
    if record.iteration >= 1:
        pop_row("skipped_users", record.skipped)

    per_user = [
        ("rec_mean_p_local", record.rec_p_local),
        ("rec_mean_p_us", record.rec_p_us),
        ("prof_mean_p_local", record.prof_p_local),
        ("prof_mean_p_us", record.prof_p_us),
        ("prof_country_jsd_mean", record.country_jsd),
        ("prof_popularity_jsd_mean", record.popularity_jsd),
    ]
    for country, uids in sorted(ds.users_by_country().items()):
        for name, values in per_user:
            present = [values[u] for u in uids if u in values]
            if not present:
                continue
            mean = sum(present) / len(present)
            rows.append(f"{i},{SCOPE_COUNTRY},{m},{name},{country},{_fmt(mean)}")
    return rows


class MetricsWriter:
    """Appends one iteration's rows per write call, flushed to disk."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def ensure_header(self) -> None:
        if not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(METRICS_HEADER + "\n", encoding="utf-8")

    def append(self, rows: Sequence[str]) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write("".join(r + "\n" for r in rows))
            fh.flush()
            os.fsync(fh.fileno())

    def truncate_after(self, iteration: int) -> None:
        """Drop rows beyond an iteration, keeping earlier lines verbatim."""
        if not self.path.exists():
            self.ensure_header()
            return
        kept: list[str] = []
        with open(self.path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh):
                if line_no == 0:
                    kept.append(line)
                    continue
                if not line.strip():
                    continue
                head = line.split(",", 1)[0]
                try:
                    row_iter = int(head)
                except ValueError:
                    raise DataError(f"bad iteration field {head!r} in {self.path}") from None
                if row_iter <= iteration:
                    kept.append(line)
        with open(self.path, "w", encoding="utf-8") as fh:
            fh.writelines(kept)


def write_checkpoint(
    ckpt_dir: str | Path,
    ds: InteractionDataset,
    iteration: int,
    cfg: SimulationConfig,
    block_offsets: Sequence[int],
    first_rec: Mapping[str, Mapping[str, float]] | None,
) -> None:
    """Persist the augmented dataset plus the state needed to continue."""
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    write_interactions(ds, ckpt_dir / CHECKPOINT_INTERACTIONS)
    state = {
        "format": 1,
        "iteration": iteration,
        "rng_seed": cfg.rng_seed,
        "config_hash": config_digest(cfg),
        "block_offsets": list(block_offsets),
        "first_rec": first_rec,
    }
    tmp = ckpt_dir / (CHECKPOINT_STATE + ".tmp")
    tmp.write_text(json.dumps(state, sort_keys=True, indent=1), encoding="utf-8")
    os.replace(tmp, ckpt_dir / CHECKPOINT_STATE)


def load_checkpoint(
    ckpt_dir: str | Path,
) -> tuple[InteractionDataset, InteractionDataset, dict]:
    """Rebuild the augmented dataset and the initial dataset from a checkpoint."""
    ckpt_dir = Path(ckpt_dir)
    state_path = ckpt_dir / CHECKPOINT_STATE
    if not state_path.exists():
        raise DataError(f"no checkpoint state at {state_path}")
    state = json.loads(state_path.read_text(encoding="utf-8"))
    raw = ingest(ckpt_dir / CHECKPOINT_INTERACTIONS)
    offsets = state["block_offsets"]
    if not offsets or offsets[-1] != len(raw.interactions):
        raise DataError(
            f"checkpoint inconsistent: offsets {offsets} vs "
            f"{len(raw.interactions)} interactions"
        )
    rows: list[Interaction] = []
    provenance = 0
    for idx, it in enumerate(raw.interactions):
        while idx >= offsets[provenance]:
            provenance += 1
        rows.append(Interaction(it.user_id, it.track_id, it.count, provenance))
    ds = InteractionDataset(raw.users, raw.tracks, tuple(rows))
    initial = InteractionDataset(raw.users, raw.tracks, tuple(rows[: offsets[0]]))
    return ds, initial, state


def _per_user_rows(
    initial_ds: InteractionDataset,
    final_record: IterationRecord,
    first_rec: Mapping[str, Mapping[str, float]] | None,
) -> list[str]:
    track_countries = {tid: initial_ds.tracks[tid].country for tid in initial_ds.tracks}
    init_profiles = initial_ds.profiles()
    first_local = (first_rec or {}).get("p_local", {})
    first_us = (first_rec or {}).get("p_us", {})

    def cell(mapping: Mapping[str, float], uid: str) -> str:
        return _fmt(mapping[uid]) if uid in mapping else ""

    rows = []
    for uid in initial_ds.user_ids:
        items = init_profiles[uid].items
        if items:
            init_local, init_us = country_proportions(
                items, initial_ds.users[uid].country, track_countries
            )
            init_cells = [_fmt(init_local), _fmt(init_us)]
        else:
            init_cells = ["", ""]
        rows.append(",".join([
            uid,
            initial_ds.users[uid].country,
            *init_cells,
            cell(first_local, uid),
            cell(first_us, uid),
            cell(final_record.rec_p_local, uid),
            cell(final_record.rec_p_us, uid),
            cell(final_record.prof_p_local, uid),
            cell(final_record.prof_p_us, uid),
            cell(final_record.country_jsd, uid),
            cell(final_record.popularity_jsd, uid),
        ]))
    return rows


PER_USER_HEADER = (
    "user_id,user_country,init_prof_p_local,init_prof_p_us,"
    "first_rec_p_local,first_rec_p_us,final_rec_p_local,final_rec_p_us,"
    "final_prof_p_local,final_prof_p_us,final_country_jsd,final_popularity_jsd"
)


def write_per_user_table(
    path: str | Path,
    initial_ds: InteractionDataset,
    final_record: IterationRecord,
    first_rec: Mapping[str, Mapping[str, float]] | None,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [PER_USER_HEADER] + _per_user_rows(initial_ds, final_record, first_rec)
    path.write_text("".join(l + "\n" for l in lines), encoding="utf-8")


def run_simulation(
    ds0: InteractionDataset | None,
    cfg: SimulationConfig,
    out_dir: str | Path,
    resume_from: str | Path | None = None,
    stop_after: int | None = None,
) -> list[IterationRecord]:
    """Run (or resume) the loop, streaming metrics and checkpoints to out_dir.

    stop_after ends the run early after the given iteration and forces a
    checkpoint there, which is the supported way to produce a mid-run state
    for resume testing. Returns the records produced by this call.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    writer = MetricsWriter(out_dir / "metrics.csv")
    ckpt_dir = out_dir / "checkpoint"

    if stop_after is not None and stop_after < 1:
        raise ConfigError(f"stop_after must be >= 1, got {stop_after}")

    records: list[IterationRecord] = []
    first_rec: dict[str, dict[str, float]] | None = None

    if resume_from is not None:
        ds, initial_ds, state = load_checkpoint(resume_from)
        if state["config_hash"] != config_digest(cfg):
            raise ConfigError("checkpoint was written under a different config")
        start = int(state["iteration"])
        block_offsets = [int(x) for x in state["block_offsets"]]
        first_rec = state.get("first_rec")
        writer.truncate_after(start)
        writer.ensure_header()
    else:
        if ds0 is None:
            raise ConfigError("run_simulation needs a dataset unless resuming")
        ds = ds0
        initial_ds = ds0
        start = 0
        block_offsets = [len(ds0.interactions)]
        writer.ensure_header()
        base = baseline_record(ds0, cfg)
        writer.append(metric_rows(base, ds0))
        records.append(base)

    initial_profiles = initial_ds.profiles()
    initial_binning = (
        popularity_binning(initial_ds) if cfg.freeze_popularity_binning else None
    )

    model: Recommender | None = None
    last_record: IterationRecord | None = None
    for iteration in range(start + 1, cfg.n_iterations + 1):
        ds, record, model = run_iteration(
            ds, initial_profiles, cfg, iteration,
            model=model if cfg.warm_start else None,
            initial_binning=initial_binning,
        )
        block_offsets.append(len(ds.interactions))
        if iteration == 1:
            first_rec = {
                "p_local": dict(record.rec_p_local),
                "p_us": dict(record.rec_p_us),
            }
        writer.append(metric_rows(record, ds))
        records.append(record)
        last_record = record

        at_stop = stop_after is not None and iteration >= stop_after
        cadence = cfg.checkpoint_every > 0 and iteration % cfg.checkpoint_every == 0
        if cadence or at_stop:
            write_checkpoint(ckpt_dir, ds, iteration, cfg, block_offsets, first_rec)
        if at_stop:
            return records

    if last_record is not None and last_record.iteration == cfg.n_iterations:
        write_per_user_table(
            out_dir / "per_user.csv", initial_ds, last_record, first_rec
        )
    return records
