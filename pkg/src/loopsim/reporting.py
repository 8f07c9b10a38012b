"""Report tables from a completed run: deltas, significance, figure data.

Three CSV tables summarize a run. The population table compares final
recommendation/profile proportions to their baselines with paired t-tests;
the per-country tables restrict the same comparisons to countries meeting
configurable user/track minimums. A long-format trajectory CSV feeds the
optional figure renderer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .dataset import OTHER, InteractionDataset
from .engine import (
    MARKER_METRIC,
    METRICS_HEADER,
    PER_USER_HEADER,
    SCOPE_POPULATION,
    IterationRecord,
    SimulationConfig,
    _fmt,
)
from .errors import DataError, UndefinedDeltaError
from .metrics import delta_percent, paired_t_test

POPULATION_TABLE = "population_deltas.csv"
COUNTRY_JSD_TABLE = "per_country_jsd.csv"
COUNTRY_DELTA_TABLE = "per_country_deltas.csv"
TRAJECTORY_TABLE = "figure_trajectories.csv"
FIGURES_META = "figures_meta.json"

TRAJECTORY_METRICS = (
    "validation_ndcg",
    "rec_mean_p_local",
    "rec_mean_p_us",
    "prof_mean_p_local",
    "prof_mean_p_us",
    "prof_country_jsd_mean",
    "prof_popularity_jsd_mean",
)


@dataclass
class PerUserData:
    """Per-user baseline and final values, the input to every report table."""

    countries: dict[str, str] = field(default_factory=dict)
    init_prof_local: dict[str, float] = field(default_factory=dict)
    init_prof_us: dict[str, float] = field(default_factory=dict)
    first_rec_local: dict[str, float] = field(default_factory=dict)
    first_rec_us: dict[str, float] = field(default_factory=dict)
    final_rec_local: dict[str, float] = field(default_factory=dict)
    final_rec_us: dict[str, float] = field(default_factory=dict)
    final_prof_local: dict[str, float] = field(default_factory=dict)
    final_prof_us: dict[str, float] = field(default_factory=dict)
    final_country_jsd: dict[str, float] = field(default_factory=dict)
    final_popularity_jsd: dict[str, float] = field(default_factory=dict)


def per_user_from_records(
    records: Sequence[IterationRecord],
    initial_ds: InteractionDataset,
) -> PerUserData:
    """Assemble per-user data from in-memory records (baseline first)."""
    if not records:
        raise DataError("no iteration records")
    baseline = records[0]
    if baseline.iteration != 0:
        raise DataError(f"first record must be the baseline, got iteration {baseline.iteration}")
    first = next((r for r in records if r.iteration == 1), None)
    final = records[-1]
    data = PerUserData()
    data.countries = {uid: initial_ds.users[uid].country for uid in initial_ds.users}
    data.init_prof_local = dict(baseline.prof_p_local)
    data.init_prof_us = dict(baseline.prof_p_us)
    if first is not None:
        data.first_rec_local = dict(first.rec_p_local)
        data.first_rec_us = dict(first.rec_p_us)
    data.final_rec_local = dict(final.rec_p_local)
    data.final_rec_us = dict(final.rec_p_us)
    data.final_prof_local = dict(final.prof_p_local)
    data.final_prof_us = dict(final.prof_p_us)
    data.final_country_jsd = dict(final.country_jsd)
    data.final_popularity_jsd = dict(final.popularity_jsd)
    return data


_PER_USER_COLUMNS = {
    "init_prof_p_local": "init_prof_local",
    "init_prof_p_us": "init_prof_us",
    "first_rec_p_local": "first_rec_local",
    "first_rec_p_us": "first_rec_us",
    "final_rec_p_local": "final_rec_local",
    "final_rec_p_us": "final_rec_us",
    "final_prof_p_local": "final_prof_local",
    "final_prof_p_us": "final_prof_us",
    "final_country_jsd": "final_country_jsd",
    "final_popularity_jsd": "final_popularity_jsd",
}


def per_user_from_csv(path: str | Path) -> PerUserData:
    path = Path(path)
    data = PerUserData()
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != PER_USER_HEADER:
            raise DataError(f"unexpected per-user header in {path}: {header!r}")
        columns = header.split(",")
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split(",")
            if len(fields) != len(columns):
                raise DataError(f"{path}:{line_no}: expected {len(columns)} fields")
            row = dict(zip(columns, fields))
            uid = row["user_id"]
            data.countries[uid] = row["user_country"]
            for column, attr in _PER_USER_COLUMNS.items():
                raw = row[column]
                if raw:
                    getattr(data, attr)[uid] = float(raw)
    return data


def _stats_cells(
    before: Mapping[str, float],
    after: Mapping[str, float],
    cfg: SimulationConfig,
    with_delta: bool = True,
) -> tuple[int, list[str]]:
    """n plus [before, after, delta, mode, t, p, star] cells for a paired block."""
    common = sorted(uid for uid in before if uid in after)
    n = len(common)
    if n == 0:
        return 0, ["", "", "", "", "", "", ""]
    before_mean = sum(before[u] for u in common) / n
    after_mean = sum(after[u] for u in common) / n
    if with_delta:
        try:
            delta = delta_percent(after_mean, before_mean, points=cfg.delta_points)
            delta_cells = [_fmt(delta), "points" if cfg.delta_points else "relative"]
        except UndefinedDeltaError:
            delta_cells = ["", ""]
    else:
        delta_cells = ["", ""]
    if n < 2:
        return n, [_fmt(before_mean), _fmt(after_mean), *delta_cells, "", "", ""]
    result = paired_t_test([before[u] for u in common], [after[u] for u in common])
    star = "*" if result.significant(cfg.significance_alpha, cfg.bonferroni_m) else ""
    return n, [
        _fmt(before_mean), _fmt(after_mean), *delta_cells,
        _fmt(result.statistic), _fmt(result.p_value), star,
    ]


def _zeros_like(values: Mapping[str, float]) -> dict[str, float]:
    return {uid: 0.0 for uid in values}


def population_table(data: PerUserData, cfg: SimulationConfig) -> list[str]:
    lines = ["metric,n_users,before_mean,after_mean,delta,delta_mode,"
             "t_statistic,p_value,significant"]
    blocks = [
        ("rec_p_local", data.first_rec_local, data.final_rec_local, True),
        ("rec_p_us", data.first_rec_us, data.final_rec_us, True),
        ("prof_p_local", data.init_prof_local, data.final_prof_local, True),
        ("prof_p_us", data.init_prof_us, data.final_prof_us, True),
        ("prof_country_jsd", _zeros_like(data.final_country_jsd),
         data.final_country_jsd, False),
        ("prof_popularity_jsd", _zeros_like(data.final_popularity_jsd),
         data.final_popularity_jsd, False),
    ]
    for metric, before, after, with_delta in blocks:
        n, cells = _stats_cells(before, after, cfg, with_delta)
        lines.append(",".join([metric, str(n), *cells]))
    return lines


def qualifying_countries(
    initial_ds: InteractionDataset, cfg: SimulationConfig
) -> list[str]:
    """Countries meeting the user/track minimums; the OTHER bucket never counts."""
    users = initial_ds.users_by_country()
    tracks = initial_ds.tracks_by_country()
    out = []
    for country in sorted(users):
        if country == OTHER:
            continue
        if len(users[country]) < cfg.min_country_users:
            continue
        if len(tracks.get(country, [])) < cfg.min_country_tracks:
            continue
        out.append(country)
    return out


def _country_note(cfg: SimulationConfig) -> str:
    return (f"# note: no country meets the thresholds "
            f"(min_users={cfg.min_country_users}, min_tracks={cfg.min_country_tracks})")


def country_jsd_table(
    data: PerUserData, initial_ds: InteractionDataset, cfg: SimulationConfig
) -> list[str]:
    lines = ["country,n_users,n_tracks,mean_country_jsd,country_t,country_p,"
             "country_significant,mean_popularity_jsd,popularity_t,popularity_p,"
             "popularity_significant"]
    countries = qualifying_countries(initial_ds, cfg)
    if not countries:
        lines.append(_country_note(cfg))
        return lines
    users_by_country = initial_ds.users_by_country()
    tracks_by_country = initial_ds.tracks_by_country()
    for country in countries:
        uids = users_by_country[country]
        cells = [country, str(len(uids)), str(len(tracks_by_country[country]))]
        for mapping in (data.final_country_jsd, data.final_popularity_jsd):
            values = {u: mapping[u] for u in uids if u in mapping}
            _, stats = _stats_cells(_zeros_like(values), values, cfg, with_delta=False)
            # stats = [before, after, delta, mode, t, p, star]; keep after/t/p/star
            cells.extend([stats[1], stats[4], stats[5], stats[6]])
        lines.append(",".join(cells))
    return lines


def country_delta_table(
    data: PerUserData, initial_ds: InteractionDataset, cfg: SimulationConfig
) -> list[str]:
    lines = ["country,metric,n_users,before_mean,after_mean,delta,delta_mode,"
             "t_statistic,p_value,significant"]
    countries = qualifying_countries(initial_ds, cfg)
    if not countries:
        lines.append(_country_note(cfg))
        return lines
    users_by_country = initial_ds.users_by_country()
    blocks = [
        ("rec_p_local", data.first_rec_local, data.final_rec_local),
        ("rec_p_us", data.first_rec_us, data.final_rec_us),
        ("prof_p_local", data.init_prof_local, data.final_prof_local),
        ("prof_p_us", data.init_prof_us, data.final_prof_us),
    ]
    for country in countries:
        uids = set(users_by_country[country])
        for metric, before, after in blocks:
            b = {u: v for u, v in before.items() if u in uids}
            a = {u: v for u, v in after.items() if u in uids}
            n, cells = _stats_cells(b, a, cfg)
            lines.append(",".join([country, metric, str(n), *cells]))
    return lines


def trajectory_lines_from_records(records: Sequence[IterationRecord]) -> list[str]:
    lines = ["iteration,algorithm,metric,value"]
    for record in records:
        values = [
            ("validation_ndcg", record.validation_ndcg),
            ("rec_mean_p_local", record.mean_rec_p_local),
            ("rec_mean_p_us", record.mean_rec_p_us),
            ("prof_mean_p_local", record.mean_prof_p_local),
            ("prof_mean_p_us", record.mean_prof_p_us),
            ("prof_country_jsd_mean", record.mean_country_jsd),
            ("prof_popularity_jsd_mean", record.mean_popularity_jsd),
        ]
        for metric, value in values:
            if value is not None:
                lines.append(f"{record.iteration},{record.model},{metric},{_fmt(value)}")
    return lines


def load_metrics_csv(path: str | Path) -> list[dict[str, str]]:
    """Parse and validate a metrics CSV; detects truncated runs."""
    path = Path(path)
    rows: list[dict[str, str]] = []
    columns = METRICS_HEADER.split(",")
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != METRICS_HEADER:
            raise DataError(f"unexpected metrics header in {path}: {header!r}")
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split(",")
            if len(fields) != len(columns):
                raise DataError(f"{path}:{line_no}: expected {len(columns)} fields")
            rows.append(dict(zip(columns, fields)))
    marker_iters = {
        int(r["iteration"])
        for r in rows
        if r["scope"] == SCOPE_POPULATION and r["metric"] == MARKER_METRIC
    }
    if not marker_iters:
        raise DataError(f"{path} holds no complete iteration")
    last_good = -1
    while last_good + 1 in marker_iters:
        last_good += 1
    if last_good < max(marker_iters):
        raise DataError(
            f"{path} is truncated; last complete iteration is {last_good}"
        )
    return rows


def trajectory_lines_from_metrics(rows: Sequence[Mapping[str, str]]) -> list[str]:
    lines = ["iteration,algorithm,metric,value"]
    for row in rows:
        if row["scope"] != SCOPE_POPULATION:
            continue
        if row["metric"] not in TRAJECTORY_METRICS:
            continue
        lines.append(
            f"{row['iteration']},{row['model']},{row['metric']},{row['value']}"
        )
    return lines


def figures_meta(trajectory_lines: Sequence[str]) -> dict:
    """Baseline values for the figure renderer: iteration-0 profile means."""
    meta: dict[str, float] = {}
    for line in trajectory_lines[1:]:
        iteration, _, metric, value = line.split(",")
        if iteration != "0":
            continue
        if metric == "prof_mean_p_local":
            meta["baseline_local_proportion"] = float(value)
        elif metric == "prof_mean_p_us":
            meta["baseline_us_proportion"] = float(value)
    return meta


def _write_lines(path: Path, lines: Sequence[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(l + "\n" for l in lines), encoding="utf-8")


def write_report(
    data: PerUserData,
    trajectory_lines: Sequence[str],
    initial_ds: InteractionDataset,
    cfg: SimulationConfig,
    out_dir: str | Path,
) -> dict[str, Path]:
    """Write every report artifact; returns name → path."""
    out_dir = Path(out_dir)
    artifacts = {
        POPULATION_TABLE: population_table(data, cfg),
        COUNTRY_JSD_TABLE: country_jsd_table(data, initial_ds, cfg),
        COUNTRY_DELTA_TABLE: country_delta_table(data, initial_ds, cfg),
        TRAJECTORY_TABLE: list(trajectory_lines),
    }
    paths: dict[str, Path] = {}
    for name, lines in artifacts.items():
        target = out_dir / name
        _write_lines(target, lines)
        paths[name] = target
    meta_path = out_dir / FIGURES_META
    meta_path.parent.mkdir(parents=True, exist_ok=True)
    meta_path.write_text(
        json.dumps(figures_meta(trajectory_lines), indent=1, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    paths[FIGURES_META] = meta_path
    return paths


def final_report(
    records: Sequence[IterationRecord],
    initial_ds: InteractionDataset,
    cfg: SimulationConfig,
    out_dir: str | Path,
) -> dict[str, Path]:
    """Report tables straight from in-memory records."""
    data = per_user_from_records(records, initial_ds)
    return write_report(
        data, trajectory_lines_from_records(records), initial_ds, cfg, out_dir
    )


def render_figures(report_paths: Mapping[str, Path], out_dir: str | Path) -> list[Path]:
    """Draw trajectory figures when the optional plotter package is present."""
    try:
        from loopsim_plotter.figures import render_figure
    except ImportError:
        return []
    out_dir = Path(out_dir)
    meta = json.loads(Path(report_paths[FIGURES_META]).read_text(encoding="utf-8"))
    trajectories = str(report_paths[TRAJECTORY_TABLE])
    rendered = []
    rendered.append(render_figure(
        inputs=[trajectories],
        metrics=["rec_mean_p_local"],
        baselines=[meta.get("baseline_local_proportion")],
        out_path=out_dir / "figure_local_proportion.png",
    ))
    rendered.append(render_figure(
        inputs=[trajectories],
        metrics=["prof_country_jsd_mean", "prof_popularity_jsd_mean"],
        baselines=[None, None],
        out_path=out_dir / "figure_profile_jsd.png",
    ))
    return rendered
