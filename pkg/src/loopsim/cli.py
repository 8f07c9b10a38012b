"""Command-line front door: dataset generation, simulation runs, reports.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
divergence. All commands are non-interactive; every run directory is
self-describing (manifest + effective config + CSVs).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import __version__
from .config import RunSettings, load_config, settings_to_file_config
from .dataset import dataset_fingerprint, ingest, write_interactions
from .engine import config_digest, run_simulation
from .errors import ConfigError, DataError, TrainingDivergedError
from .reporting import (
    load_metrics_csv,
    per_user_from_csv,
    render_figures,
    trajectory_lines_from_metrics,
    write_report,
)
from .synthetic import generate_synthetic, spec_from_dict

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRAINING = 4

_BOOL = dict(action=argparse.BooleanOptionalAction, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loopsim",
        description="Feedback-loop simulator for music recommenders.",
    )
    parser.add_argument("--version", action="version", version=f"loopsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-synthetic", help="write a synthetic interactions file")
    gen.add_argument("--config", help="JSON config with a 'synthetic' section")
    gen.add_argument("--out", required=True, help="output interactions file (TSV)")
    gen.add_argument("--seed", type=int, help="master seed override")
    gen.add_argument("--preset", choices=["majority-skew"],
                     help="use a shipped spec instead of the config section")
    gen.add_argument("--scale", type=float,
                     help="size multiplier for --preset (default 0.01)")
    gen.set_defaults(func=cmd_gen_synthetic)

    simp = sub.add_parser("simulate", help="run the feedback loop")
    simp.add_argument("--config", help="JSON config file")
    simp.add_argument("--dataset", help="interactions file (overrides config)")
    simp.add_argument("--out-dir", help="parent directory for run directories")
    simp.add_argument("--run-dir", help="exact run directory (default: timestamp + hash)")
    simp.add_argument("--resume", metavar="CHECKPOINT",
                      help="checkpoint directory to continue from")
    simp.add_argument("--stop-after", type=int, metavar="I",
                      help="stop after iteration I, forcing a checkpoint there")
    simp.add_argument("--model", help="pop | itemknn | bpr | random | fixture")
    simp.add_argument("--iterations", type=int)
    simp.add_argument("--k", type=int)
    simp.add_argument("--alpha", type=float)
    simp.add_argument("--seed", type=int)
    simp.add_argument("--checkpoint-every", type=int)
    simp.add_argument("--fixture-scores", help="scores file for --model fixture")
    simp.add_argument("--freeze-popularity-binning", **_BOOL)
    simp.add_argument("--warm-start", **_BOOL)
    simp.add_argument("--delta-points", **_BOOL)
    simp.add_argument("--significance-alpha", type=float)
    simp.add_argument("--bonferroni-m", type=int)
    simp.add_argument("--min-country-users", type=int)
    simp.add_argument("--min-country-tracks", type=int)
    simp.add_argument("--drop-unknown-country", **_BOOL)
    simp.add_argument("--min-track-interactions", type=int)
    simp.add_argument("--five-core", **_BOOL)
    simp.add_argument("--max-epochs", type=int)
    simp.add_argument("--patience", type=int)
    simp.add_argument("--eval-k", type=int)
    simp.add_argument("--embedding-dim", type=int)
    simp.add_argument("--learning-rate", type=float)
    simp.add_argument("--l2-reg", type=float)
    simp.add_argument("--neighborhood", type=int)
    simp.add_argument("--shrinkage", type=float)
    simp.add_argument("--batch-size", type=int)
    simp.set_defaults(func=cmd_simulate)

    rep = sub.add_parser("report", help="emit report tables and figure data")
    rep.add_argument("--run-dir", required=True, help="directory of a completed run")
    rep.add_argument("--dataset", required=True, help="the run's initial interactions file")
    rep.add_argument("--out-dir", help="report directory (default: <run-dir>/report)")
    rep.add_argument("--config", help="JSON config for thresholds and modes")
    rep.add_argument("--delta-points", **_BOOL)
    rep.add_argument("--significance-alpha", type=float)
    rep.add_argument("--bonferroni-m", type=int)
    rep.add_argument("--min-country-users", type=int)
    rep.add_argument("--min-country-tracks", type=int)
    rep.add_argument("--drop-unknown-country", **_BOOL)
    rep.add_argument("--min-track-interactions", type=int)
    rep.add_argument("--five-core", **_BOOL)
    rep.add_argument("--figures", **_BOOL)
    rep.set_defaults(func=cmd_report)
    return parser


def _overrides_from_args(args: argparse.Namespace) -> dict:
    mapping = {
        "dataset": "dataset", "out_dir": "out_dir", "model": "model",
        "iterations": "iterations", "k": "k", "alpha": "alpha", "seed": "seed",
        "checkpoint_every": "checkpoint_every", "fixture_scores": "fixture_scores",
        "freeze_popularity_binning": "freeze_popularity_binning",
        "warm_start": "warm_start", "delta_points": "delta_points",
        "significance_alpha": "significance_alpha", "bonferroni_m": "bonferroni_m",
        "min_country_users": "min_country_users",
        "min_country_tracks": "min_country_tracks",
        "drop_unknown_country": "drop_unknown_country",
        "min_track_interactions": "min_track_interactions", "five_core": "five_core",
        "max_epochs": "max_epochs", "patience": "patience", "eval_k": "eval_k",
        "embedding_dim": "embedding_dim", "learning_rate": "learning_rate",
        "l2_reg": "l2_reg", "neighborhood": "neighborhood",
        "shrinkage": "shrinkage", "batch_size": "batch_size",
    }
    out = {}
    for attr, key in mapping.items():
        if hasattr(args, attr):
            out[key] = getattr(args, attr)
    return out


def cmd_gen_synthetic(args: argparse.Namespace) -> None:
    settings = load_config(args.config, {"seed": args.seed})
    if args.preset is not None:
        spec_dict: dict = {"preset": args.preset}
        if args.scale is not None:
            spec_dict["scale"] = args.scale
    elif settings.synthetic is not None:
        spec_dict = dict(settings.synthetic)
    else:
        raise ConfigError(
            "no synthetic spec: pass --preset or a config with a 'synthetic' section"
        )
    spec = spec_from_dict(spec_dict)
    ds = generate_synthetic(spec, settings.sim.rng_seed)
    out = Path(args.out)
    write_interactions(ds, out)
    print(
        f"wrote {out}: {len(ds.users)} users, {len(ds.tracks)} tracks, "
        f"{len(ds.interactions)} interactions (seed {settings.sim.rng_seed})"
    )


def _write_manifest(run_dir: Path, settings: RunSettings, status: str,
                    started: str, finished: str | None,
                    dataset_path: str | None, dataset_sha: str | None) -> None:
    manifest = {
        "tool": "loopsim",
        "version": __version__,
        "status": status,
        "started": started,
        "finished": finished,
        "config": settings_to_file_config(settings),
        "config_hash": config_digest(settings.sim),
        "dataset": dataset_path,
        "dataset_sha256": dataset_sha,
        "outputs": sorted(
            str(p.relative_to(run_dir)) for p in run_dir.rglob("*") if p.is_file()
        ),
    }
    (run_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )


def _utc_now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def cmd_simulate(args: argparse.Namespace) -> None:
    settings = load_config(args.config, _overrides_from_args(args))
    resuming = args.resume is not None

    dataset_path = settings.dataset
    ds = None
    dataset_sha = None
    if dataset_path is not None:
        if not Path(dataset_path).exists():
            raise ConfigError(f"dataset not found: {dataset_path}")
        ds = ingest(dataset_path, settings.ingest)
        dataset_sha = dataset_fingerprint(dataset_path)
    elif not resuming:
        raise ConfigError("no dataset configured: pass --dataset or set 'dataset'")

    if args.run_dir:
        run_dir = Path(args.run_dir)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
        run_dir = Path(settings.out_dir) / f"{stamp}-{config_digest(settings.sim)[:8]}"
    run_dir.mkdir(parents=True, exist_ok=True)

    (run_dir / "config.json").write_text(
        json.dumps(settings_to_file_config(settings), indent=1, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    started = _utc_now()
    _write_manifest(run_dir, settings, "running", started, None, dataset_path, dataset_sha)

    records = run_simulation(
        ds, settings.sim, run_dir,
        resume_from=args.resume,
        stop_after=args.stop_after,
    )

    last = records[-1].iteration if records else 0
    status = "stopped" if args.stop_after is not None and last < settings.sim.n_iterations \
        else "completed"
    _write_manifest(run_dir, settings, status, started, _utc_now(),
                    dataset_path, dataset_sha)
    print(f"{status}: iteration {last} of {settings.sim.n_iterations}, "
          f"metrics at {run_dir / 'metrics.csv'}")


def cmd_report(args: argparse.Namespace) -> None:
    settings = load_config(args.config, _overrides_from_args(args))
    run_dir = Path(args.run_dir)
    out_dir = Path(args.out_dir) if args.out_dir else run_dir / "report"

    metrics_path = run_dir / "metrics.csv"
    if not metrics_path.exists():
        raise DataError(f"no metrics CSV at {metrics_path}")
    rows = load_metrics_csv(metrics_path)

    per_user_path = run_dir / "per_user.csv"
    if not per_user_path.exists():
        raise DataError(
            f"no per-user table at {per_user_path}; the run has not completed"
        )
    data = per_user_from_csv(per_user_path)

    if not Path(args.dataset).exists():
        raise ConfigError(f"dataset not found: {args.dataset}")
    initial_ds = ingest(args.dataset, settings.ingest)

    trajectories = trajectory_lines_from_metrics(rows)
    paths = write_report(data, trajectories, initial_ds, settings.sim, out_dir)
    for name in sorted(paths):
        print(f"wrote {paths[name]}")
    if args.figures is not False:
        for figure in render_figures(paths, out_dir):
            print(f"rendered {figure}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
