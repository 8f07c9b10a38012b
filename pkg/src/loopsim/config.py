"""Run configuration: one JSON file, flat flag overrides, one master seed.

Precedence per key: command-line flag, then config file, then (for the seed
only) the LOOPSIM_SEED environment variable, then the built-in default.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .dataset import IngestOptions
from .engine import SimulationConfig
from .errors import ConfigError
from .recommenders import TrainingConfig

SEED_ENV_VAR = "LOOPSIM_SEED"

# config-file key → SimulationConfig field
_SIM_KEYS = {
    "iterations": "n_iterations",
    "k": "k",
    "alpha": "alpha",
    "split_ratios": "split_ratios",
    "model": "model",
    "fixture_scores": "fixture_scores",
    "freeze_popularity_binning": "freeze_popularity_binning",
    "warm_start": "warm_start",
    "delta_points": "delta_points",
    "significance_alpha": "significance_alpha",
    "bonferroni_m": "bonferroni_m",
    "min_country_users": "min_country_users",
    "min_country_tracks": "min_country_tracks",
    "checkpoint_every": "checkpoint_every",
    "seed": "rng_seed",
}

_TRAINING_KEYS = (
    "max_epochs", "patience", "eval_k", "embedding_dim", "learning_rate",
    "l2_reg", "neighborhood", "shrinkage", "batch_size",
)

_INGEST_KEYS = ("drop_unknown_country", "min_track_interactions", "five_core")

_OTHER_KEYS = ("dataset", "out_dir", "training", "synthetic")


@dataclass(frozen=True)
class RunSettings:
    """Everything the CLI needs for one invocation."""

    sim: SimulationConfig
    dataset: str | None
    out_dir: str
    ingest: IngestOptions
    synthetic: Mapping[str, Any] | None


def _read_config_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    known = set(_SIM_KEYS) | set(_INGEST_KEYS) | set(_OTHER_KEYS)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return raw


def _resolve_seed(
    overrides: Mapping[str, Any], raw: Mapping[str, Any], env: Mapping[str, str]
) -> int:
    if overrides.get("seed") is not None:
        return int(overrides["seed"])
    if raw.get("seed") is not None:
        return int(raw["seed"])
    if SEED_ENV_VAR in env:
        try:
            return int(env[SEED_ENV_VAR])
        except ValueError:
            raise ConfigError(
                f"{SEED_ENV_VAR}={env[SEED_ENV_VAR]!r} is not an integer"
            ) from None
    return 0


def load_config(
    path: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    env: Mapping[str, str] | None = None,
) -> RunSettings:
    """Merge config file, flag overrides, and environment into run settings.

    overrides holds flag values keyed by config-file key; None values mean
    the flag was not given and the file/defaults win.
    """
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    env = os.environ if env is None else env
    raw = _read_config_file(path) if path is not None else {}

    training_raw = raw.get("training", {})
    if not isinstance(training_raw, dict):
        raise ConfigError("config key 'training' must be a JSON object")
    unknown = set(training_raw) - set(_TRAINING_KEYS)
    if unknown:
        raise ConfigError(f"unknown training keys: {sorted(unknown)}")
    training_kwargs = dict(training_raw)
    for key in _TRAINING_KEYS:
        if key in overrides:
            training_kwargs[key] = overrides[key]
    try:
        training = TrainingConfig(**training_kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad training config: {exc}") from None

    sim_kwargs: dict[str, Any] = {"training": training}
    for key, fieldname in _SIM_KEYS.items():
        if key == "seed":
            continue
        value = overrides.get(key, raw.get(key))
        if value is not None:
            if key == "split_ratios":
                value = tuple(float(r) for r in value)
            sim_kwargs[fieldname] = value
    sim_kwargs["rng_seed"] = _resolve_seed(overrides, raw, env)
    try:
        sim = SimulationConfig(**sim_kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad simulation config: {exc}") from None

    ingest_kwargs = {}
    for key in _INGEST_KEYS:
        value = overrides.get(key, raw.get(key))
        if value is not None:
            ingest_kwargs[key] = value
    ingest = IngestOptions(**ingest_kwargs)

    dataset = overrides.get("dataset", raw.get("dataset"))
    out_dir = overrides.get("out_dir", raw.get("out_dir", "runs"))
    synthetic = raw.get("synthetic")
    return RunSettings(
        sim=sim,
        dataset=str(dataset) if dataset is not None else None,
        out_dir=str(out_dir),
        ingest=ingest,
        synthetic=synthetic,
    )


def settings_to_file_config(settings: RunSettings) -> dict[str, Any]:
    """Effective configuration in the config-file schema.

    Feeding the result back through --config reproduces the run; the training
    sub-object drops its per-iteration rng_seed, which the engine derives.
    """
    from dataclasses import asdict

    sim = settings.sim
    training = asdict(sim.training)
    training.pop("rng_seed", None)
    return {
        "dataset": settings.dataset,
        "out_dir": settings.out_dir,
        "model": sim.model,
        "iterations": sim.n_iterations,
        "k": sim.k,
        "alpha": sim.alpha,
        "split_ratios": list(sim.split_ratios),
        "seed": sim.rng_seed,
        "checkpoint_every": sim.checkpoint_every,
        "fixture_scores": sim.fixture_scores,
        "freeze_popularity_binning": sim.freeze_popularity_binning,
        "warm_start": sim.warm_start,
        "delta_points": sim.delta_points,
        "significance_alpha": sim.significance_alpha,
        "bonferroni_m": sim.bonferroni_m,
        "min_country_users": sim.min_country_users,
        "min_country_tracks": sim.min_country_tracks,
        "drop_unknown_country": settings.ingest.drop_unknown_country,
        "min_track_interactions": settings.ingest.min_track_interactions,
        "five_core": settings.ingest.five_core,
        "training": training,
        "synthetic": dict(settings.synthetic) if settings.synthetic else None,
    }
