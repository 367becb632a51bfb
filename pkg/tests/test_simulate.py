import numpy as np
import pytest
from scipy import stats

from palearn.core import Dataset, PoolError, QueryBudget, init_pools
from palearn.core import RoundRecord, RunLog
from palearn.selection import random_select
from palearn.simulate import (ExperimentPlan, PlanError, generate_synthetic_dataset,
                              make_biased_pool, make_oracle, missing_class_sampling_rate,
                              run_active_learning, stratified_split, summarize)


def labels_only(n, classes):
    return Dataset(np.zeros((n, 8, 8, 1)), np.arange(n) % classes, classes)


# oracle

def test_oracle_exact_corruption_count():
    ds = labels_only(10, 3)
    oracle = make_oracle(ds, 0.2, 0)
    assert len(oracle.corrupted_ids) == 2


def test_oracle_clean_when_rate_zero():
    ds = labels_only(50, 4)
    oracle = make_oracle(ds, 0.0, 1)
    assert np.array_equal(oracle.labels(np.arange(50)), ds.true_labels)
    assert not oracle.corrupted_ids


def test_oracle_corrupted_labels_differ_and_others_match():
    ds = labels_only(500, 5)
    oracle = make_oracle(ds, 0.3, 2)
    got = oracle.labels(np.arange(500))
    for i in range(500):
        if i in oracle.corrupted_ids:
            assert got[i] != ds.true_labels[i]
        else:
            assert got[i] == ds.true_labels[i]


def test_oracle_rejects_rate_one():
    with pytest.raises(ValueError):
        make_oracle(labels_only(10, 2), 1.0, 0)


def test_oracle_replacements_roughly_uniform():
    ds = Dataset(np.zeros((6000, 8, 8, 1)), np.zeros(6000, int), 4)
    oracle = make_oracle(ds, 0.5, 3)
    wrong = oracle.labels(sorted(oracle.corrupted_ids))
    counts = np.bincount(wrong, minlength=4)
    assert counts[0] == 0
    assert stats.chisquare(counts[1:]).pvalue > 1e-3


def test_oracle_is_stable_across_queries():
    ds = labels_only(100, 3)
    oracle = make_oracle(ds, 0.4, 5)
    first = oracle.labels(np.arange(100))
    assert all(oracle.label(i) == first[i] for i in range(100))


# biased pools

def test_biased_pool_excludes_classes():
    ds = labels_only(1000, 10)
    pool = make_biased_pool(ds, 0.1, {8, 9}, 0)
    assert len(pool.labeled) == 100
    assert not {ds.true_labels[i] for i in pool.labeled} & {8, 9}
    excluded = set(np.flatnonzero(np.isin(ds.true_labels, [8, 9])).tolist())
    assert excluded <= pool.unlabeled


def test_biased_pool_without_exclusion_matches_init_pools():
    ds = labels_only(300, 3)
    assert make_biased_pool(ds, 0.1, set(), 4) == init_pools(ds, 0.1, 4)


def test_biased_pool_errors():
    ds = labels_only(100, 4)
    with pytest.raises(PoolError):
        make_biased_pool(ds, 0.1, {0, 1, 2, 3}, 0)
    with pytest.raises(PoolError):
        make_biased_pool(ds, 0.9, {0, 1}, 0)


# synthetic data

def test_synthetic_dataset_shape_and_balance():
    ds = generate_synthetic_dataset(4, 500, 16, 0)
    assert len(ds) == 2000 and ds.image_shape == (16, 16, 1)
    assert np.bincount(ds.true_labels).tolist() == [500] * 4
    assert ds.images.min() >= 0 and ds.images.max() <= 1


def test_synthetic_dataset_deterministic():
    a = generate_synthetic_dataset(5, 20, 12, 3)
    b = generate_synthetic_dataset(5, 20, 12, 3)
    assert a.images.tobytes() == b.images.tobytes()
    assert np.array_equal(a.true_labels, b.true_labels)


def test_synthetic_dataset_rejects_small_images():
    with pytest.raises(ValueError):
        generate_synthetic_dataset(4, 10, 4, 0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_synthetic_nearest_centroid_held_out(seed):
    ds = generate_synthetic_dataset(4, 500, 16, seed)
    train, test = stratified_split(ds, 0.2, seed)
    x = train.images.reshape(len(train), -1)
    cent = np.stack([x[train.true_labels == c].mean(0) for c in range(4)])
    xt = test.images.reshape(len(test), -1)
    pred = ((xt[:, None] - cent[None]) ** 2).sum(-1).argmin(1)
    assert (pred == test.true_labels).mean() > 0.8


def test_rings_class_is_rotation_symmetric_without_noise():
    ds = generate_synthetic_dataset(4, 30, 16, 0, noise=0.0)
    rings = ds.images[ds.true_labels == 2]
    for img in rings:
        assert np.allclose(np.rot90(img, 1, axes=(0, 1)), img, atol=1e-6)
    chevrons = ds.images[ds.true_labels == 3]
    assert not all(np.allclose(np.rot90(img, 1, axes=(0, 1)), img) for img in chevrons)


def test_stratified_split():
    ds = generate_synthetic_dataset(4, 50, 8, 0)
    train, test = stratified_split(ds, 0.2, 0)
    assert np.bincount(test.true_labels).tolist() == [10] * 4
    assert len(train) == 160


# missing-class metric

def test_missing_class_rate_examples():
    log = RunLog("x", 0)
    log.append(RoundRecord(0, 0.1, 0.5))
    log.append(RoundRecord(1, 0.2, 0.6, list(range(10)), {0: 4, 1: 3, 2: 3}))
    assert missing_class_sampling_rate(log, {2}) == [0.3]
    assert missing_class_sampling_rate(log, set()) == [0.0]


def test_random_missing_rate_matches_hypergeometric_mean():
    ds = labels_only(400, 4)
    pool = make_biased_pool(ds, 0.1, {2, 3}, 0)
    unl = pool.unlabeled_ids()
    share = np.isin(ds.true_labels[unl], [2, 3]).mean()
    rates = []
    for t in range(2000):
        q = random_select(pool, QueryBudget(20, 1), t).sample_ids
        rates.append(np.isin(ds.true_labels[q], [2, 3]).mean())
    # hypergeometric sampling: mean equals the share, sd of the mean is tiny
    hyper = stats.hypergeom(len(unl), int(round(share * len(unl))), 20)
    assert hyper.mean() / 20 == pytest.approx(share)
    assert abs(np.mean(rates) - share) < 4 * hyper.std() / 20 / np.sqrt(2000)


# plans and the loop

def small_plan(**kw):
    d = {
        "dataset": {"synthetic": {"class_count": 4, "samples_per_class": 50, "image_size": 8}},
        "strategies": [{"kind": "random", "hyperparameters": {"epochs_main": 2}}],
        "seeds": [0],
        "round_count": 3,
        "initial_fraction": 0.10,
        "query_fraction": 0.05,
        "architecture": {"conv_channels": [4], "hidden": 8},
    }
    d.update(kw)
    return d


def test_plan_validation_reports_paths():
    with pytest.raises(PlanError) as err:
        ExperimentPlan.from_dict(small_plan(round_count=0, strategies=[{"kind": "vaal"}]))
    paths = {p for p, _ in err.value.errors}
    assert "round_count" in paths and "strategies/0/kind" in paths


def test_plan_rejects_non_dividing_subqueries():
    # 160 training samples, 5% -> N = 8; K = 3 does not divide it
    with pytest.raises(PlanError, match="does not divide"):
        ExperimentPlan.from_dict(small_plan(strategies=[{"kind": "pal", "subquery_count": 3}]))


def test_plan_roundtrip():
    plan = ExperimentPlan.from_dict(small_plan())
    assert ExperimentPlan.from_dict(plan.to_dict()) == plan


def test_loop_fractions_and_shared_pool(tmp_path):
    plan = ExperimentPlan.from_dict(small_plan(strategies=[
        {"kind": "random", "hyperparameters": {"epochs_main": 2}},
        {"kind": "entropy", "hyperparameters": {"epochs_main": 2}},
        {"kind": "coreset", "hyperparameters": {"epochs_main": 2}},
        {"kind": "pal", "subquery_count": 2,
         "hyperparameters": {"epochs_main": 2, "epochs_finetune": 1}},
    ]))
    results = run_active_learning(plan, tmp_path)
    for log in results.values():
        assert log.error is None
        fr = [r.labeled_fraction for r in log.rounds]
        assert fr == pytest.approx([0.10, 0.15, 0.20, 0.25])
        assert all(a < b for a, b in zip(fr, fr[1:]))
        assert all(len(r.query_sample_ids) == 8 for r in log.rounds[1:])
    # same initial pool: the round-0 accuracy is identical for every strategy
    assert len({log.rounds[0].task_accuracy for log in results.values()}) == 1
    assert (tmp_path / "summary.csv").read_text().count("\n") == 1 + 4 * 3
    assert len(list((tmp_path / "scores").glob("pal_*.csv"))) == 3
    assert len(list((tmp_path / "queries").glob("*.json"))) == 12
    stats_ = summarize(results)
    assert ("random", 3) in stats_


def test_noisy_labels_in_pool_match_noise_rate():
    plan = ExperimentPlan.from_dict(small_plan(
        dataset={"synthetic": {"class_count": 4, "samples_per_class": 500, "image_size": 8}},
        noise_rate=0.2, round_count=4, seeds=[0, 1]))
    from palearn.simulate import prepare_seed, run_strategy
    for seed in plan.seeds:
        setup = prepare_seed(plan, seed)
        log = run_strategy(plan.strategies[0], setup, seed, plan.round_count)
        labeled = list(setup.pool.labeled) + [i for r in log.rounds for i in r.query_sample_ids]
        wrong = sum(i in setup.oracle.corrupted_ids for i in labeled)
        n, total = len(labeled), len(setup.train)
        # hypergeometric draw of n from a population with 20% corrupted
        hyper = stats.hypergeom(total, len(setup.oracle.corrupted_ids), n)
        lo, hi = hyper.interval(0.999)
        assert lo <= wrong <= hi


def test_failed_run_is_recorded_not_raised(monkeypatch):
    import palearn.simulate as sim
    plan = ExperimentPlan.from_dict(small_plan(strategies=[
        {"kind": "random", "hyperparameters": {"epochs_main": 1}},
        {"kind": "entropy", "hyperparameters": {"epochs_main": 1}}]))

    def boom(*a, **k):
        raise RuntimeError("scorer exploded")
    monkeypatch.setattr(sim, "entropy_select", boom)
    results = run_active_learning(plan)
    assert results[("random", 0)].error is None
    assert "scorer exploded" in results[("entropy", 0)].error


def test_biased_run_first_query_rate_recorded():
    plan = ExperimentPlan.from_dict(small_plan(excluded_classes=[2, 3], round_count=1))
    log = run_active_learning(plan)[("random", 0)]
    assert len(missing_class_sampling_rate(log, [2, 3])) == 1
