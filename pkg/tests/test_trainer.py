import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from structnoise.experiments import ExperimentSpec, relative_improvement, run_trials, trials_csv
from structnoise.gin import f1_macro, init_model, predict
from structnoise.graphgen import HouseRingConfig, build_ring_of_houses
from structnoise.noise import NoiseSpec, add_noise
from structnoise.trainer import (
    AugmentConfig,
    InfeasibleSplit,
    SplitConfig,
    TrainOptions,
    derive_seed,
    fit,
    make_splits,
    small_graph_schedule,
    splitmix64,
    train_augmented,
    train_baseline,
    train_on_surrogate,
)

QUICK = TrainOptions(epochs=6)


@pytest.fixture(scope="module")
def G():
    return build_ring_of_houses(HouseRingConfig(333, 3))


@pytest.fixture(scope="module")
def mid():
    return build_ring_of_houses(HouseRingConfig(40, 3))


# ----------------------------------------------------------------- seeds


def test_splitmix64_reference_values():
    # first outputs of the reference generator seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert splitmix64(0x9E3779B97F4A7C15) == 0x6E789E6AA1B965F4


def test_derive_seed_separates_streams():
    seeds = {derive_seed(0, t, s) for t in range(50) for s in range(1, 6)}
    assert len(seeds) == 250
    assert all(0 <= s < 2**64 for s in seeds)
    assert derive_seed(7, 1) == derive_seed(7, 1)
    assert derive_seed(7, 1, 0) != derive_seed(7, 1)


# ---------------------------------------------------------------- splits


def test_default_split_sizes(G):
    s = make_splits(G, SplitConfig(seed=1))
    assert (len(s.train_ids), len(s.val_ids), len(s.test_ids)) == (120, 200, 1000)
    assert np.array_equal(np.bincount(G.labels[s.train_ids]), [20] * 6)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**64 - 1))
def test_splits_are_disjoint_and_stratified(l, seed):
    g = build_ring_of_houses(HouseRingConfig(333, 3))
    s = make_splits(g, SplitConfig(per_class_train=l, seed=seed))
    assert np.array_equal(np.bincount(g.labels[s.train_ids], minlength=6), [l] * 6)
    assert not np.intersect1d(s.train_ids, s.val_ids).size
    assert not np.intersect1d(s.train_ids, s.test_ids).size
    assert not np.intersect1d(s.val_ids, s.test_ids).size
    for ids in (s.train_ids, s.val_ids, s.test_ids):
        assert np.all(np.diff(ids) > 0)


def test_one_node_per_class(G):
    s = make_splits(G, SplitConfig(per_class_train=1, seed=3))
    assert sorted(G.labels[s.train_ids].tolist()) == list(range(6))


def test_splits_are_deterministic(G):
    a, b = make_splits(G, SplitConfig(seed=9)), make_splits(G, SplitConfig(seed=9))
    c = make_splits(G, SplitConfig(seed=10))
    assert all(np.array_equal(x, y) for x, y in zip(vars(a).values(), vars(b).values()))
    assert not np.array_equal(a.test_ids, c.test_ids)


def test_infeasible_splits(G):
    with pytest.raises(InfeasibleSplit):
        make_splits(G, SplitConfig(per_class_train=334))
    with pytest.raises(InfeasibleSplit):
        make_splits(G, SplitConfig(per_class_train=256))
    small = build_ring_of_houses(HouseRingConfig(33, 3))
    with pytest.raises(InfeasibleSplit):
        make_splits(small, SplitConfig())


def test_clipped_test_set_takes_the_remainder(G):
    s = make_splits(G, SplitConfig(per_class_train=256, seed=2, clip_test=True))
    assert (len(s.train_ids), len(s.val_ids), len(s.test_ids)) == (1536, 200, 928)
    # unclipped configurations are unaffected by the flag
    a = make_splits(G, SplitConfig(per_class_train=20, seed=2, clip_test=True))
    b = make_splits(G, SplitConfig(per_class_train=20, seed=2))
    assert np.array_equal(a.test_ids, b.test_ids)


# -------------------------------------------------------------- training


def test_zero_epochs_reports_untrained_model(mid):
    splits = make_splits(mid, SplitConfig(val_size=40, test_size=100, seed=0))
    res = train_baseline(mid, splits, TrainOptions(epochs=0), init_seed=4)
    assert res.best_epoch == -1 and res.val_curve == ()
    model = init_model(4, 6)
    expected = f1_macro(predict(mid, model)[splits.test_ids], mid.labels[splits.test_ids], 6)
    assert res.test_f1 == expected


def test_best_validation_snapshot_is_restored(mid):
    splits = make_splits(mid, SplitConfig(val_size=40, test_size=100, seed=1))
    model = init_model(2, 6)
    steps = [(mid, splits.train_ids)]
    res = fit(model, lambda e: steps, (mid, splits.val_ids), (mid, splits.test_ids), TrainOptions(epochs=15))
    curve = np.array(res.val_curve)
    assert len(curve) == 15
    assert res.best_epoch == int(np.argmax(curve))
    assert res.best_val_f1 == curve.max()
    pred = predict(mid, model)
    assert f1_macro(pred[splits.val_ids], mid.labels[splits.val_ids], 6) == res.best_val_f1
    assert f1_macro(pred[splits.test_ids], mid.labels[splits.test_ids], 6) == res.test_f1


def test_training_fits_the_noiseless_graph(mid):
    splits = make_splits(mid, SplitConfig(val_size=40, test_size=100, seed=3))
    res = train_baseline(mid, splits, TrainOptions(epochs=120), init_seed=5)
    assert res.test_f1 > 0.9


def test_leak_guard(mid):
    splits = make_splits(mid, SplitConfig(val_size=40, test_size=100, seed=0))
    leaky = np.union1d(splits.train_ids, splits.test_ids[:1])
    with pytest.raises(AssertionError):
        fit(
            init_model(0, 6),
            lambda e: [(mid, leaky)],
            (mid, splits.val_ids),
            (mid, splits.test_ids),
            QUICK,
            forbidden=(mid, splits.test_ids),
        )


def test_baseline_is_deterministic(mid):
    splits = make_splits(mid, SplitConfig(val_size=40, test_size=100, seed=0))
    a = train_baseline(mid, splits, QUICK, 8)
    b = train_baseline(mid, splits, QUICK, 8)
    assert a == b


# ---------------------------------------------------------- augmentation


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(0, 60), st.integers(0, 2**32))
def test_small_graph_schedule_cycles_through_permutations(n, epochs, seed):
    order = small_graph_schedule(n, epochs, seed)
    assert len(order) == epochs
    for start in range(0, epochs - n + 1, n):
        assert sorted(order[start : start + n]) == list(range(n))
    assert order == small_graph_schedule(n, epochs, seed)


def test_augmented_training_runs_and_rejects_mismatches(mid):
    splits = make_splits(mid, SplitConfig(val_size=40, test_size=100, seed=0))
    small = build_ring_of_houses(HouseRingConfig(6, 3))
    aug = [add_noise(small, NoiseSpec(0.2, "khop2", j)) for j in range(3)]
    res = train_augmented(mid, splits, aug, AugmentConfig("small", 3), QUICK, 1, 2)
    assert len(res.val_curve) == QUICK.epochs
    assert res == train_augmented(mid, splits, aug, AugmentConfig("small", 3), QUICK, 1, 2)
    with pytest.raises(ValueError):
        train_augmented(mid, splits, aug[:2], AugmentConfig("small", 3), QUICK)
    with pytest.raises(ValueError):
        train_augmented(mid, splits, [], AugmentConfig("same"), QUICK)
    with pytest.raises(ValueError):
        AugmentConfig("other")


def test_surrogate_equal_to_target_matches_baseline(mid):
    cfg = SplitConfig(val_size=40, test_size=100, seed=6)
    base = train_baseline(mid, make_splits(mid, cfg), QUICK, 3)
    assert train_on_surrogate(mid, mid, cfg, QUICK, 3) == base


def test_surrogate_class_mismatch(mid):
    single = build_ring_of_houses(HouseRingConfig(40, 1))
    assert single.num_classes != mid.num_classes
    with pytest.raises(ValueError, match="classes"):
        train_on_surrogate(single, mid, SplitConfig(val_size=40, test_size=100))


# ------------------------------------------------------- experiment runs


def test_relative_improvement():
    assert relative_improvement(0.6, 0.4) == pytest.approx(50.0)
    assert relative_improvement(0.3, 0.4) == pytest.approx(-25.0)
    with pytest.raises(ZeroDivisionError):
        relative_improvement(0.5, 0.0)


def test_variants_share_trial_seeds():
    spec = ExperimentSpec(
        kind="augment_same", num_houses=40, modes=("khop2",), p_values=(0.2,), l_values=(3,),
        trials=2, epochs=2, val_size=40, test_size=100,
    )
    report = run_trials(spec)
    assert {r.experiment for r in report.records} == {"baseline", "augment_same"}
    seeds = {(r.experiment, r.trial): r.seed for r in report.records}
    assert seeds[("baseline", 0)] == seeds[("augment_same", 0)] != seeds[("baseline", 1)]
    again = run_trials(spec)
    assert trials_csv(again.records) == trials_csv(report.records)
    assert len(report.improvements) == 1
