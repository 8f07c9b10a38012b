"""End-to-end checks of the headline guarantees, one test per guarantee.

Each test carries its own runtime budget; the heavier fixtures (the block
dataset and the skewed synthetic preset) are shared with the unit suite but
every oracle here is recomputed from scratch.
"""

import math
import time

import mpmath
import numpy as np
import pytest
import scipy.stats

from loopsim.choice import ChoiceConfig, acceptance_probabilities, sample_accepted_item
from loopsim.dataset import random_split
from loopsim.engine import (
    SimulationConfig,
    baseline_record,
    run_iteration,
    run_simulation,
    validation_ndcg,
)
from loopsim.metrics import AttributeDistribution, jsd, paired_t_test
from loopsim.recommenders import (
    BPRModel,
    ItemKNNModel,
    PopModel,
    RandomModel,
    TrainingConfig,
    recommend_top_k,
    split_view,
    triple_grads,
    triple_loss,
)
from loopsim.rng import derive_rng
from loopsim.synthetic import block_dataset, generate_synthetic, majority_skew_spec

from conftest import build_dataset


def reference_jsd(p, q):
    """Literal half-sum KL form, log base 2."""
    m = [(pi + qi) / 2.0 for pi, qi in zip(p, q)]

    def kl(a, b):
        return sum(ai * math.log2(ai / bi) for ai, bi in zip(a, b) if ai > 0.0)

    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def dist(mass, bins=("a", "b", "c")):
    return AttributeDistribution(tuple(bins[: len(mass)]), tuple(mass))


def test_jsd_correctness():
    start = time.perf_counter()

    for mass in ((1.0, 0.0, 0.0), (0.2, 0.3, 0.5), (0.0, 1.0, 0.0)):
        assert jsd(dist(mass), dist(mass)) == 0.0

    assert abs(jsd(dist((1.0, 0.0, 0.0)), dist((0.0, 1.0, 0.0))) - 1.0) <= 1e-12

    two_bin = jsd(dist((1.0, 0.0), ("x", "y")), dist((0.5, 0.5), ("x", "y")))
    assert two_bin == pytest.approx(0.3113, abs=1e-4)
    assert two_bin == pytest.approx(reference_jsd((1.0, 0.0), (0.5, 0.5)), abs=1e-12)

    rng = np.random.default_rng(20240817)
    for _ in range(10**4):
        p = rng.random(3)
        q = rng.random(3)
        p[rng.random(3) < 0.2] = 0.0        # exercise empty bins
        q[rng.random(3) < 0.2] = 0.0
        if p.sum() == 0.0 or q.sum() == 0.0:
            continue
        p, q = tuple(p / p.sum()), tuple(q / q.sum())
        forward = jsd(dist(p), dist(q))
        assert forward == jsd(dist(q), dist(p))
        assert 0.0 <= forward <= 1.0 + 1e-12
        assert forward == pytest.approx(reference_jsd(p, q), abs=1e-12)

    assert time.perf_counter() - start < 5.0


def test_acceptance_probability_contract():
    start = time.perf_counter()

    alphas = (-5.0, -2.0, -1.0, -0.5, -0.1, -0.05, -0.01)
    for k in range(1, 1001):
        for alpha in alphas:
            probs = acceptance_probabilities(k, alpha)
            assert abs(probs.sum() - 1.0) <= 1e-12

    with mpmath.workdps(50):
        weights = [mpmath.e ** (mpmath.mpf("-0.1") * r) for r in range(10)]
        total = sum(weights)
        oracle = [float(w / total) for w in weights]
    got = acceptance_probabilities(10, -0.1)
    assert np.max(np.abs(got - np.array(oracle))) <= 1e-12

    items = [f"t{i}" for i in range(10)]
    cfg = ChoiceConfig(alpha=-0.1, k=10)
    rng = derive_rng(123)
    n_draws = 10**6
    counts = {t: 0 for t in items}
    for _ in range(n_draws):
        counts[sample_accepted_item(items, cfg, rng)] += 1
    for rank, tid in enumerate(items):
        assert abs(counts[tid] / n_draws - got[rank]) <= 0.01

    assert time.perf_counter() - start < 30.0


def test_model_scoring_oracles():
    start = time.perf_counter()

    # popularity: ranking equals a count sort with id tie-break
    rng = np.random.default_rng(7)
    counts = {f"t{i:02d}": int(c) for i, c in enumerate(rng.integers(1, 100, 20))}
    counts["t03"] = counts["t11"]            # force a tie
    pairs = [("listener", tid) for tid in counts]
    ds = build_dataset(pairs, counts={("listener", t): c for t, c in counts.items()})
    pop = PopModel()
    pop.fit(split_view(ds, range(len(ds.interactions))), None, TrainingConfig())
    scores = np.asarray(pop.score("listener"), dtype=float)
    got_order = [pop.track_ids[i] for i in np.argsort(-scores, kind="stable")]
    expected = sorted(counts, key=lambda t: (-counts[t], t))
    assert got_order == expected

    # item-item cosine: exact match with a dense brute-force scorer
    matrix = np.array(
        [
            [1, 1, 0, 0, 0],
            [1, 1, 1, 0, 0],
            [0, 1, 1, 1, 0],
            [0, 0, 1, 1, 1],
            [1, 0, 0, 1, 1],
            [0, 0, 0, 0, 1],
        ],
        dtype=float,
    )
    knn_pairs = [
        (f"u{u}", f"t{i}")
        for i in range(matrix.shape[0])
        for u in range(matrix.shape[1])
        if matrix[i, u]
    ]
    knn_ds = build_dataset(knn_pairs)
    knn = ItemKNNModel()
    knn.fit(split_view(knn_ds, range(len(knn_ds.interactions))), None,
            TrainingConfig(neighborhood=10))
    item_counts = matrix.sum(axis=1)
    sims = np.zeros((6, 6))
    for i in range(6):
        for j in range(6):
            if i != j and matrix[i] @ matrix[j] > 0:
                sims[i, j] = (matrix[i] @ matrix[j]) / math.sqrt(
                    item_counts[i] * item_counts[j]
                )
    dense_scores = sims @ matrix
    for u in range(5):
        assert np.max(np.abs(knn.score(f"u{u}") - dense_scores[:, u])) < 1e-9

    # pairwise ranking loss: analytic gradients vs central differences
    grad_rng = np.random.default_rng(77)
    h = 1e-6
    for _ in range(10):
        u = grad_rng.normal(size=2)
        vi = grad_rng.normal(size=2)
        vj = grad_rng.normal(size=2)
        bi, bj = float(grad_rng.normal()), float(grad_rng.normal())
        reg = float(grad_rng.uniform(0.0, 0.5))
        grads = triple_grads(u, vi, vj, bi, bj, reg)
        for block, vec in enumerate((u, vi, vj)):
            for d in range(2):
                plus = [u.copy(), vi.copy(), vj.copy()]
                minus = [u.copy(), vi.copy(), vj.copy()]
                plus[block][d] += h
                minus[block][d] -= h
                num = (triple_loss(*plus, bi, bj, reg)
                       - triple_loss(*minus, bi, bj, reg)) / (2 * h)
                assert abs(num - grads[block][d]) / max(1.0, abs(grads[block][d])) < 1e-4
        num_bi = (triple_loss(u, vi, vj, bi + h, bj, reg)
                  - triple_loss(u, vi, vj, bi - h, bj, reg)) / (2 * h)
        num_bj = (triple_loss(u, vi, vj, bi, bj + h, reg)
                  - triple_loss(u, vi, vj, bi, bj - h, reg)) / (2 * h)
        assert abs(num_bi - grads[3]) / max(1.0, abs(grads[3])) < 1e-4
        assert abs(num_bj - grads[4]) / max(1.0, abs(grads[4])) < 1e-4

    assert time.perf_counter() - start < 60.0


def test_bpr_learning_sanity():
    start = time.perf_counter()
    ds = block_dataset()                     # 200 users, 400 items
    for seed in (0, 1, 2):
        split = random_split(ds, (0.75, 0.20, 0.05), rng_seed=seed)
        train = split_view(ds, split.train)
        val = split_view(ds, split.validation)
        bpr = BPRModel()
        bpr.fit(train, val, TrainingConfig(rng_seed=seed))
        learned = validation_ndcg(bpr, train, val, 10)
        null = RandomModel()
        null.fit(train, val, TrainingConfig(rng_seed=seed))
        floor = validation_ndcg(null, train, val, 10)
        print(f"seed {seed}: ndcg@10 {learned:.4f} vs random {floor:.4f}")
        assert floor > 0.0
        assert learned >= 2.0 * floor
    assert time.perf_counter() - start < 300.0


def test_loop_dynamics_minority_drift(tmp_path):
    start = time.perf_counter()
    ds = generate_synthetic(majority_skew_spec(scale=0.01), rng_seed=42)
    cfg = SimulationConfig(model="pop", n_iterations=20, k=10, alpha=-0.1,
                           rng_seed=42)
    records = run_simulation(ds, cfg, tmp_path)
    base, final = records[0], records[-1]

    minority = [uid for uid in ds.user_ids
                if ds.users[uid].country != "US"
                and uid in base.prof_p_local and uid in final.prof_p_local]
    assert len(minority) >= 50

    before_local = [base.prof_p_local[u] for u in minority]
    after_local = [final.prof_p_local[u] for u in minority]
    before_us = [base.prof_p_us[u] for u in minority]
    after_us = [final.prof_p_us[u] for u in minority]

    mean = lambda v: sum(v) / len(v)
    local_t = paired_t_test(before_local, after_local)
    us_t = paired_t_test(before_us, after_us)
    # magnitudes are data, not a contract; only the directions are asserted
    print(f"minority p_local {mean(before_local):.4f} -> {mean(after_local):.4f} "
          f"(t={local_t.statistic:.2f}, p={local_t.p_value:.2e}); "
          f"p_us {mean(before_us):.4f} -> {mean(after_us):.4f} "
          f"(t={us_t.statistic:.2f}, p={us_t.p_value:.2e})")

    assert mean(after_local) < mean(before_local)
    assert mean(after_us) > mean(before_us)
    assert local_t.significant(0.05, corrections=12)
    assert us_t.significant(0.05, corrections=12)
    assert time.perf_counter() - start < 600.0


def test_loop_bookkeeping():
    ds = block_dataset(n_users=24, n_items=60, rng_seed=5)
    cfg = SimulationConfig(model="pop", n_iterations=4, k=10, rng_seed=9)

    base = baseline_record(ds, cfg)
    for uid in ds.user_ids:
        assert base.country_jsd[uid] == 0.0
        assert base.popularity_jsd[uid] == 0.0

    initial_profiles = ds.profiles()
    current = ds
    for iteration in range(1, cfg.n_iterations + 1):
        seen_before = current.seen_sets()
        new_ds, record, model = run_iteration(
            current, initial_profiles, cfg, iteration
        )
        for uid in current.user_ids:
            rec = recommend_top_k(model, uid, cfg.k, seen_before[uid])
            assert not (set(rec.items) & seen_before[uid])
            if uid in record.accepted:
                assert record.accepted[uid] in rec.items
        served = len(current.user_ids) - record.skipped
        assert len(record.accepted) == served
        assert len(new_ds.interactions) == len(current.interactions) + served
        new_seen = new_ds.seen_sets()
        for uid, tid in record.accepted.items():
            assert tid not in seen_before[uid]
            assert new_seen[uid] == seen_before[uid] | {tid}
        current = new_ds


def test_determinism_and_resume(tmp_path):
    ds = block_dataset(n_users=24, n_items=60, rng_seed=5)
    cfg = SimulationConfig(model="pop", n_iterations=4, rng_seed=17)

    run_simulation(ds, cfg, tmp_path / "one")
    run_simulation(ds, cfg, tmp_path / "two")
    reference = (tmp_path / "one" / "metrics.csv").read_bytes()
    assert (tmp_path / "two" / "metrics.csv").read_bytes() == reference

    interrupted = tmp_path / "interrupted"
    run_simulation(ds, cfg, interrupted, stop_after=2)
    run_simulation(None, cfg, interrupted, resume_from=interrupted / "checkpoint")
    assert (interrupted / "metrics.csv").read_bytes() == reference
    assert (interrupted / "per_user.csv").read_bytes() == \
        (tmp_path / "one" / "per_user.csv").read_bytes()


def test_statistics_oracle():
    res = paired_t_test([0.1, 0.2, 0.3], [0.15, 0.40, 0.25])
    assert res.df == 2
    assert res.statistic == pytest.approx(0.918, abs=1e-3)
    assert res.p_value == pytest.approx(0.455, abs=1e-3)

    rng = np.random.default_rng(2025)
    for _ in range(100):
        n = int(rng.integers(2, 40))
        scale = float(rng.uniform(0.01, 10.0))
        before = rng.normal(0.0, scale, n)
        after = before + rng.normal(rng.uniform(-1, 1), scale, n)
        ours = paired_t_test(before, after)
        t_ref, p_ref = scipy.stats.ttest_rel(after, before)
        assert abs(ours.statistic - t_ref) < 1e-6
        assert abs(ours.p_value - p_ref) < 1e-6
