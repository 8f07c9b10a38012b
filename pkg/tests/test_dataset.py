import numpy as np
import pytest

from loopsim.dataset import (
    IngestOptions,
    Interaction,
    InteractionDataset,
    augment,
    apply_filters,
    dataset_fingerprint,
    ingest,
    normalize_country,
    random_split,
    write_interactions,
)
from loopsim.errors import (
    ConfigError,
    DataError,
    EmptyDatasetError,
    InvariantViolationError,
    ParseError,
)

from conftest import build_dataset, write_interactions_file


def five_core_reference(pairs):
    """Brute-force fixpoint oracle: drop users/tracks with < 5 rows until stable."""
    rows = list(pairs)
    while True:
        users = {}
        tracks = {}
        for u, t in rows:
            users[u] = users.get(u, 0) + 1
            tracks[t] = tracks.get(t, 0) + 1
        bad_u = {u for u, c in users.items() if c < 5}
        bad_t = {t for t, c in tracks.items() if c < 5}
        if not bad_u and not bad_t:
            return rows
        rows = [(u, t) for u, t in rows if u not in bad_u and t not in bad_t]
        if not rows:
            return rows


# ----------------------------------------------------------------------- ingest


def test_ingest_identity_pass_through(tmp_path):
    rows = [
        (f"u{i}", f"t{j}", "DE", "US", 1)
        for i in range(3)
        for j in range(5)
    ]
    path = write_interactions_file(tmp_path / "d.tsv", rows)
    ds = ingest(path)
    assert len(ds) == 15
    assert len(ds.users) == 3 and len(ds.tracks) == 5
    assert ds.users["u0"].country == "DE"
    assert ds.tracks["t0"].country == "US"


def test_ingest_drops_singleton_tracks(tmp_path):
    rows = [
        ("u1", "t1", "DE", "US", 1),
        ("u2", "t1", "SE", "US", 1),
        ("u1", "t9", "DE", "UK", 1),
    ]
    path = write_interactions_file(tmp_path / "d.tsv", rows)
    ds = ingest(path, IngestOptions(min_track_interactions=2))
    assert "t9" not in ds.tracks
    assert len(ds) == 2
    assert all(it.track_id != "t9" for it in ds.interactions)


def test_ingest_empty_country_becomes_other(tmp_path):
    rows = [("u1", "t1", "", "", 1), ("u2", "t1", "DE", "", 2)]
    path = write_interactions_file(tmp_path / "d.tsv", rows)
    ds = ingest(path)
    assert ds.users["u1"].country == "OTHER"
    assert ds.tracks["t1"].country == "OTHER"
    assert ds.users["u2"].country == "DE"


def test_ingest_drop_unknown_country_flag(tmp_path):
    rows = [
        ("u1", "t1", "", "US", 1),
        ("u2", "t1", "DE", "US", 1),
        ("u2", "t2", "DE", "", 1),
        ("u2", "t3", "DE", "UK", 1),
    ]
    path = write_interactions_file(tmp_path / "d.tsv", rows)
    ds = ingest(path, IngestOptions(drop_unknown_country=True))
    assert set(ds.users) == {"u2"}
    assert {it.track_id for it in ds.interactions} == {"t1", "t3"}


def test_ingest_bad_header(tmp_path):
    path = tmp_path / "d.tsv"
    path.write_text("user\ttrack\n", encoding="utf-8")
    with pytest.raises(ParseError) as err:
        ingest(path)
    assert "1" in str(err.value)


@pytest.mark.parametrize(
    "bad_row",
    [
        "u1\tt1\tDE\tUS",           # too few fields
        "u1\tt1\tDE\tUS\tx",        # count not an integer
        "u1\tt1\tDE\tUS\t0",        # count below 1
        "u1\tt1\tGermany\tUS\t1",   # malformed country
        "\tt1\tDE\tUS\t1",          # empty user id
    ],
)
def test_ingest_malformed_row_names_line(tmp_path, bad_row):
    path = tmp_path / "d.tsv"
    path.write_text(
        "user_id\ttrack_id\tuser_country\ttrack_country\tcount\n"
        "u0\tt0\tDE\tUS\t1\n" + bad_row + "\n",
        encoding="utf-8",
    )
    with pytest.raises(ParseError) as err:
        ingest(path)
    assert "3" in str(err.value)  # offending line number


def test_ingest_country_conflict(tmp_path):
    rows = [("u1", "t1", "DE", "US", 1), ("u1", "t2", "SE", "US", 1)]
    path = write_interactions_file(tmp_path / "d.tsv", rows)
    with pytest.raises(ParseError):
        ingest(path)


def test_normalize_country():
    assert normalize_country("DE") == "DE"
    assert normalize_country(" US ") == "US"
    assert normalize_country("") == "OTHER"
    assert normalize_country("OTHER") == "OTHER"
    for bad in ("de", "USA", "U1"):
        with pytest.raises(ValueError):
            normalize_country(bad)


# -------------------------------------------------------------------- 5-core


def test_five_core_removes_light_user_keeps_rest():
    # five heavy users sharing five tracks; user B only reaches four items
    pairs = [(f"u{i}", f"t{j}") for i in range(5) for j in range(5)]
    pairs += [("uB", f"t{j}") for j in range(4)]
    ds = build_dataset(pairs)
    out = apply_filters(ds, IngestOptions(five_core=True))
    assert "uB" not in out.users
    assert len(out) == 25
    assert [(it.user_id, it.track_id) for it in out.interactions] == five_core_reference(pairs)


def test_five_core_cascade():
    # dropping C's singleton tracks pulls C below 5, whose removal is absorbed
    pairs = [(f"u{i}", f"t{j}") for i in range(5) for j in range(5)]
    pairs += [("uC", t) for t in ("t0", "t1", "t2", "t3", "t6", "t7")]
    ds = build_dataset(pairs)
    out = apply_filters(ds, IngestOptions(five_core=True))
    assert "uC" not in out.users
    assert "t6" not in out.tracks and "t7" not in out.tracks
    assert len(out) == 25
    assert [(it.user_id, it.track_id) for it in out.interactions] == five_core_reference(pairs)


def test_five_core_matches_bruteforce_on_random_graphs():
    rng = np.random.default_rng(13)
    for trial in range(20):
        n_users, n_tracks = int(rng.integers(6, 15)), int(rng.integers(6, 15))
        pairs = sorted(
            {
                (f"u{int(rng.integers(n_users))}", f"t{int(rng.integers(n_tracks))}")
                for _ in range(int(rng.integers(20, 80)))
            }
        )
        expected = five_core_reference(pairs)
        ds = build_dataset(pairs)
        if not expected:
            with pytest.raises(EmptyDatasetError):
                apply_filters(ds, IngestOptions(five_core=True))
            continue
        out = apply_filters(ds, IngestOptions(five_core=True))
        assert [(it.user_id, it.track_id) for it in out.interactions] == expected


def test_filtering_is_idempotent():
    # dense core that survives 5-core, plus light rows that get trimmed
    pairs = [(f"u{i}", f"t{j}") for i in range(8) for j in range(8)]
    pairs += [("u0", "t_extra"), ("u_light", "t0")]
    opts = IngestOptions(min_track_interactions=2, five_core=True)
    once = apply_filters(build_dataset(pairs), opts)
    assert "t_extra" not in once.tracks and "u_light" not in once.users
    twice = apply_filters(once, opts)
    assert once.interactions == twice.interactions
    assert once.users == twice.users and once.tracks == twice.tracks


def test_empty_after_filtering_raises():
    ds = build_dataset([("u1", "t1"), ("u2", "t2")])
    with pytest.raises(EmptyDatasetError):
        apply_filters(ds, IngestOptions(five_core=True))


# ---------------------------------------------------------------------- split


def _split_sizes(split):
    return len(split.train), len(split.validation), len(split.test)


def test_split_exact_sizes_on_100():
    pairs = [(f"u{i % 10}", f"t{j}") for i, j in enumerate(range(100))]
    ds = build_dataset(pairs)
    split = random_split(ds, (0.75, 0.20, 0.05), rng_seed=3)
    assert _split_sizes(split) == (75, 20, 5)


def test_split_partitions_exactly():
    rng = np.random.default_rng(5)
    for trial in range(10):
        n = int(rng.integers(1, 120))
        pairs = [(f"u{int(rng.integers(8))}", f"t{i}") for i in range(n)]
        ds = build_dataset(pairs)
        split = random_split(ds, rng_seed=trial)
        union = split.train | split.validation | split.test
        assert union == frozenset(range(n))
        assert len(split.train) + len(split.validation) + len(split.test) == n


def test_split_deterministic():
    pairs = [(f"u{i % 7}", f"t{i}") for i in range(60)]
    ds = build_dataset(pairs)
    a = random_split(ds, rng_seed=11)
    b = random_split(ds, rng_seed=11)
    c = random_split(ds, rng_seed=12)
    assert (a.train, a.validation, a.test) == (b.train, b.validation, b.test)
    assert a.train != c.train


def test_split_every_user_keeps_a_training_row():
    rng = np.random.default_rng(9)
    for trial in range(15):
        pairs = []
        for u in range(10):
            for j in range(int(rng.integers(1, 6))):
                pairs.append((f"u{u}", f"t{u}_{j}"))
        ds = build_dataset(pairs)
        split = random_split(ds, rng_seed=trial)
        covered = {ds.interactions[i].user_id for i in split.train}
        assert covered == set(ds.users)


def test_split_single_interaction_user_lands_in_train():
    pairs = [("lone", "t0")] + [("busy", f"t{i}") for i in range(1, 40)]
    ds = build_dataset(pairs)
    for seed in range(10):
        split = random_split(ds, rng_seed=seed)
        assert 0 in split.train


def test_split_repair_with_zero_train_ratio():
    # n_train = 0 forces the repair path for every user
    pairs = [(f"u{i % 5}", f"t{i}") for i in range(50)]
    ds = build_dataset(pairs)
    split = random_split(ds, (0.0, 0.9, 0.1), rng_seed=2)
    covered = {ds.interactions[i].user_id for i in split.train}
    assert covered == set(ds.users)
    assert len(split.train) == 5  # exactly one promoted row per user


def test_split_bad_ratios():
    ds = build_dataset([("u1", "t1")])
    with pytest.raises(ConfigError):
        random_split(ds, (0.5, 0.5, 0.5))
    with pytest.raises(ConfigError):
        random_split(ds, (1.2, -0.1, -0.1))


def test_split_empty_dataset():
    ds = InteractionDataset({}, {}, ())
    with pytest.raises(DataError):
        random_split(ds)


# -------------------------------------------------------------------- augment


def test_augment_empty_map_is_identity():
    ds = build_dataset([("u1", "t1")])
    assert augment(ds, {}, 1) is ds


def test_augment_grows_by_accepted_count():
    pairs = [(f"u{i}", "t_shared") for i in range(4)] + [("u0", "t_new"), ("u1", "t_new")]
    ds = build_dataset(pairs)
    accepted = {"u2": "t_new", "u3": "t_new"}
    out = augment(ds, accepted, iteration=3)
    assert len(out) == len(ds) + 2
    tail = out.interactions[-2:]
    assert {(it.user_id, it.track_id) for it in tail} == {("u2", "t_new"), ("u3", "t_new")}
    assert all(it.provenance == 3 for it in tail)
    # input untouched
    assert len(ds) == 6


def test_augment_preserves_profile_order():
    ds = build_dataset([("u1", "ta"), ("u1", "tb"), ("u2", "tc")])
    out = augment(ds, {"u1": "tc"}, 1)
    assert out.profiles()["u1"].items == ("ta", "tb", "tc")


def test_augment_rejects_seen_item():
    ds = build_dataset([("u1", "t1"), ("u2", "t2")])
    with pytest.raises(InvariantViolationError):
        augment(ds, {"u1": "t1"}, 1)


def test_augment_rejects_unknown_ids_and_bad_iteration():
    ds = build_dataset([("u1", "t1"), ("u2", "t2")])
    with pytest.raises(InvariantViolationError):
        augment(ds, {"ghost": "t1"}, 1)
    with pytest.raises(InvariantViolationError):
        augment(ds, {"u1": "ghost"}, 1)
    with pytest.raises(InvariantViolationError):
        augment(ds, {"u1": "t2"}, 0)


def test_augment_never_shrinks_seen_sets():
    ds = build_dataset([("u1", "t1"), ("u2", "t2"), ("u1", "t3"), ("u2", "t3")])
    before = ds.seen_sets()
    out = augment(ds, {"u1": "t2"}, 1)
    after = out.seen_sets()
    for uid in before:
        assert before[uid] <= after[uid]


# ------------------------------------------------------------------ round trip


def test_write_then_ingest_round_trip(tmp_path):
    ds = build_dataset(
        [("u1", "t1"), ("u1", "t2"), ("u2", "t1")],
        user_countries={"u1": "DE", "u2": "US"},
        track_countries={"t1": "US", "t2": "OTHER"},
        counts={("u1", "t1"): 4},
    )
    path = tmp_path / "round.tsv"
    write_interactions(ds, path)
    back = ingest(path)
    assert [(it.user_id, it.track_id, it.count) for it in back.interactions] == [
        ("u1", "t1", 4), ("u1", "t2", 1), ("u2", "t1", 1)
    ]
    assert back.users["u2"].country == "US"
    assert back.tracks["t2"].country == "OTHER"
    assert dataset_fingerprint(path) == dataset_fingerprint(path)


def test_play_counts_weighted_interaction_counts_not():
    ds = build_dataset(
        [("u1", "ta"), ("u2", "ta"), ("u1", "tb")],
        counts={("u1", "tb"): 10},
    )
    assert ds.track_interaction_counts() == {"ta": 2, "tb": 1}
    assert ds.track_play_counts() == {"ta": 2, "tb": 10}


def test_dataset_rejects_dangling_references():
    with pytest.raises(InvariantViolationError):
        InteractionDataset({}, {}, (Interaction("u", "t"),))
