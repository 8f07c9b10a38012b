import json

import pytest

from loopsim.cli import main
from loopsim.dataset import dataset_fingerprint, ingest, write_interactions
from loopsim.engine import MARKER_METRIC, METRICS_HEADER
from loopsim.reporting import (
    COUNTRY_DELTA_TABLE,
    COUNTRY_JSD_TABLE,
    FIGURES_META,
    POPULATION_TABLE,
    TRAJECTORY_TABLE,
)
from loopsim.synthetic import block_dataset


@pytest.fixture
def dataset_file(tmp_path):
    ds = block_dataset(n_users=16, n_items=40, rng_seed=3)
    path = tmp_path / "interactions.tsv"
    write_interactions(ds, path)
    return path


def simulate_args(dataset_file, run_dir, **extra):
    args = ["simulate", "--dataset", str(dataset_file), "--run-dir", str(run_dir),
            "--model", "pop", "--iterations", "3", "--seed", "5"]
    for flag, value in extra.items():
        args += [f"--{flag.replace('_', '-')}", str(value)]
    return args


# --- exit codes -----------------------------------------------------------

def test_simulate_missing_dataset_exits_2(tmp_path, capsys):
    missing = tmp_path / "nope.tsv"
    code = main(["simulate", "--dataset", str(missing),
                 "--run-dir", str(tmp_path / "run")])
    assert code == 2
    assert "nope.tsv" in capsys.readouterr().err


def test_simulate_without_any_dataset_exits_2(tmp_path, capsys):
    code = main(["simulate", "--run-dir", str(tmp_path / "run")])
    assert code == 2
    assert "no dataset" in capsys.readouterr().err


def test_simulate_fixture_model_without_scores_exits_2(tmp_path, dataset_file):
    code = main(simulate_args(dataset_file, tmp_path / "run", model="fixture"))
    assert code == 2


def test_simulate_malformed_dataset_exits_3(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text(
        "user_id\ttrack_id\tuser_country\ttrack_country\tcount\n"
        "u1\tt1\tAA\n",
        encoding="utf-8",
    )
    code = main(["simulate", "--dataset", str(bad), "--run-dir", str(tmp_path / "run")])
    assert code == 3
    assert ":2:" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_simulate_divergence_exits_4(tmp_path, capsys):
    # Needs enough triples per epoch for the runaway step size to overflow.
    ds = block_dataset(n_users=40, n_items=80, rng_seed=3)
    path = tmp_path / "wide.tsv"
    write_interactions(ds, path)
    code = main(simulate_args(
        path, tmp_path / "run", model="bpr", iterations="1",
        learning_rate="1e12", max_epochs="5",
    ))
    assert code == 4
    assert "diverged" in capsys.readouterr().err


def test_gen_synthetic_without_spec_exits_2(tmp_path, capsys):
    code = main(["gen-synthetic", "--out", str(tmp_path / "x.tsv")])
    assert code == 2
    assert "synthetic" in capsys.readouterr().err


def test_gen_synthetic_infeasible_spec_exits_2(tmp_path, capsys):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps({"synthetic": {
        "countries": [["AA", 5, 30], ["BB", 5, 30]],
        "majority": "AA", "majority_share": 1.5, "events_per_user": 10,
    }}), encoding="utf-8")
    code = main(["gen-synthetic", "--config", str(cfg),
                 "--out", str(tmp_path / "x.tsv")])
    assert code == 2


def test_unknown_config_key_exits_2(tmp_path, dataset_file, capsys):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps({"iterashuns": 3}), encoding="utf-8")
    code = main(["simulate", "--config", str(cfg),
                 "--dataset", str(dataset_file), "--run-dir", str(tmp_path / "run")])
    assert code == 2
    assert "iterashuns" in capsys.readouterr().err


def test_report_missing_metrics_exits_3(tmp_path, dataset_file, capsys):
    code = main(["report", "--run-dir", str(tmp_path / "empty"),
                 "--dataset", str(dataset_file)])
    assert code == 3
    assert "metrics" in capsys.readouterr().err


# --- gen-synthetic --------------------------------------------------------

def test_gen_synthetic_preset_writes_loadable_dataset(tmp_path, capsys):
    out = tmp_path / "synthetic.tsv"
    code = main(["gen-synthetic", "--preset", "majority-skew",
                 "--scale", "0.003", "--seed", "7", "--out", str(out)])
    assert code == 0
    ds = ingest(out)
    assert len(ds.users) > 20
    assert len(ds.tracks) > 100
    assert len(ds.interactions) > 1000
    printed = capsys.readouterr().out
    assert str(out) in printed
    assert "seed 7" in printed


def test_gen_synthetic_seed_controls_bytes(tmp_path):
    outs = []
    for name, seed in (("a", "7"), ("b", "7"), ("c", "8")):
        out = tmp_path / f"{name}.tsv"
        assert main(["gen-synthetic", "--preset", "majority-skew",
                     "--scale", "0.003", "--seed", seed, "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert outs[0] != outs[2]


# --- simulate -------------------------------------------------------------

def test_simulate_writes_run_artifacts(tmp_path, dataset_file, capsys):
    run_dir = tmp_path / "run"
    code = main(simulate_args(dataset_file, run_dir))
    assert code == 0
    assert "completed: iteration 3 of 3" in capsys.readouterr().out

    lines = (run_dir / "metrics.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == METRICS_HEADER
    markers = sorted(int(l.split(",")[0]) for l in lines[1:]
                     if f",{MARKER_METRIC}," in l and ",population," in l)
    assert markers == [0, 1, 2, 3]
    assert (run_dir / "per_user.csv").exists()

    config = json.loads((run_dir / "config.json").read_text(encoding="utf-8"))
    assert config["model"] == "pop"
    assert config["iterations"] == 3
    assert config["seed"] == 5

    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["tool"] == "loopsim"
    assert manifest["status"] == "completed"
    assert manifest["dataset_sha256"] == dataset_fingerprint(dataset_file)
    assert "metrics.csv" in manifest["outputs"]
    assert "per_user.csv" in manifest["outputs"]
    assert manifest["config_hash"]
    assert manifest["started"] and manifest["finished"]


def test_simulate_stop_after_marks_run_stopped(tmp_path, dataset_file, capsys):
    run_dir = tmp_path / "run"
    code = main(simulate_args(dataset_file, run_dir, stop_after="2",
                              iterations="4"))
    assert code == 0
    assert "stopped: iteration 2 of 4" in capsys.readouterr().out
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["status"] == "stopped"
    assert (run_dir / "checkpoint" / "state.json").exists()
    assert not (run_dir / "per_user.csv").exists()


def test_simulate_resume_matches_uninterrupted_run(tmp_path, dataset_file):
    full_dir = tmp_path / "full"
    assert main(simulate_args(dataset_file, full_dir, iterations="4")) == 0

    part_dir = tmp_path / "part"
    assert main(simulate_args(dataset_file, part_dir, iterations="4",
                              stop_after="2")) == 0
    code = main(["simulate", "--config", str(part_dir / "config.json"),
                 "--run-dir", str(part_dir),
                 "--resume", str(part_dir / "checkpoint")])
    assert code == 0

    assert (part_dir / "metrics.csv").read_bytes() == \
        (full_dir / "metrics.csv").read_bytes()
    assert (part_dir / "per_user.csv").read_bytes() == \
        (full_dir / "per_user.csv").read_bytes()
    manifest = json.loads((part_dir / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["status"] == "completed"


def test_simulate_resume_under_changed_flags_exits_2(tmp_path, dataset_file, capsys):
    run_dir = tmp_path / "run"
    assert main(simulate_args(dataset_file, run_dir, stop_after="1")) == 0
    code = main(simulate_args(dataset_file, run_dir, alpha="-0.5") +
                ["--resume", str(run_dir / "checkpoint")])
    assert code == 2
    assert "different config" in capsys.readouterr().err


# --- report ---------------------------------------------------------------

def completed_run(tmp_path, dataset_file):
    run_dir = tmp_path / "run"
    assert main(simulate_args(dataset_file, run_dir)) == 0
    return run_dir


def report_args(run_dir, dataset_file, **extra):
    args = ["report", "--run-dir", str(run_dir), "--dataset", str(dataset_file),
            "--min-country-users", "1", "--min-country-tracks", "1"]
    for flag, value in extra.items():
        args += [f"--{flag.replace('_', '-')}", str(value)]
    return args


def test_report_writes_tables(tmp_path, dataset_file, capsys):
    run_dir = completed_run(tmp_path, dataset_file)
    code = main(report_args(run_dir, dataset_file) + ["--no-figures"])
    assert code == 0
    out = capsys.readouterr().out
    report_dir = run_dir / "report"
    for name in (POPULATION_TABLE, COUNTRY_JSD_TABLE, COUNTRY_DELTA_TABLE,
                 TRAJECTORY_TABLE, FIGURES_META):
        assert (report_dir / name).exists()
        assert name in out
    assert not list(report_dir.glob("*.png"))

    pop_lines = (report_dir / POPULATION_TABLE).read_text(encoding="utf-8").splitlines()
    assert pop_lines[0].startswith("metric,n_users,")
    assert len(pop_lines) == 7
    country_lines = (report_dir / COUNTRY_DELTA_TABLE).read_text(
        encoding="utf-8").splitlines()
    assert {l.split(",")[0] for l in country_lines[1:]} == {"AA", "BB"}


def test_report_custom_output_directory(tmp_path, dataset_file):
    run_dir = completed_run(tmp_path, dataset_file)
    out_dir = tmp_path / "elsewhere"
    code = main(report_args(run_dir, dataset_file, out_dir=str(out_dir)) +
                ["--no-figures"])
    assert code == 0
    assert (out_dir / POPULATION_TABLE).exists()


def test_report_incomplete_run_exits_3(tmp_path, dataset_file, capsys):
    run_dir = completed_run(tmp_path, dataset_file)
    (run_dir / "per_user.csv").unlink()
    code = main(report_args(run_dir, dataset_file))
    assert code == 3
    assert "has not completed" in capsys.readouterr().err


def test_report_truncated_metrics_exits_3(tmp_path, dataset_file, capsys):
    run_dir = completed_run(tmp_path, dataset_file)
    with open(run_dir / "metrics.csv", "a", encoding="utf-8") as fh:
        fh.write(f"9,population,pop,{MARKER_METRIC},,0.5\n")
    code = main(report_args(run_dir, dataset_file))
    assert code == 3
    assert "last complete iteration is 3" in capsys.readouterr().err
