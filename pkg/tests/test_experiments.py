import io
import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gedicrop.errors import ConfigError, RunError, SplitError, ValidationError
from gedicrop.experiments import (SplitConfig, aggregate, cell_keys, compute_metrics,
                                  grid_split, local_models, n_train_cells, prepare_region, run_gedi_s2_transfer,
                                  run_local, run_regime, run_transfer, write_summary_csv)
from gedicrop.forest import ForestConfig, serialize_forest
from gedicrop.synth import MAIZE, SOYBEAN, RegionSpec, gen_region

FAST = ForestConfig(n_trees=40)
RUNS = 3


# ---------------------------------------------------------------- splits

def test_four_cells_three_train():
    lon = [0.1, 0.6, 0.1, 0.6]
    lat = [0.1, 0.1, 0.6, 0.6]
    s = grid_split(lon, lat, 0.5, 0.8, seed=1)
    assert len(s.train_cells) == 3 and len(s.test_cells) == 1


def test_two_cells_clamped():
    s = grid_split([0.1, 0.7], [0.1, 0.1], 0.5, 0.99, seed=0)
    assert len(s.train_cells) == 1 and len(s.test_cells) == 1


def test_one_cell_is_an_error():
    with pytest.raises(SplitError):
        grid_split([0.1, 0.2, 0.3], [0.1, 0.2, 0.3], 0.5, 0.8, 0)


def test_round_half_up():
    assert [n_train_cells(n, 0.8) for n in (2, 3, 4, 5, 6, 7, 8, 16)] == [1, 2, 3, 4, 5, 6, 6, 13]
    assert n_train_cells(10, 0.25) == 3  # 2.5 rounds up
    assert n_train_cells(2, 0.01) == 1


def test_world_grid_keys():
    assert cell_keys([-0.25, 0.0, 0.49, 179.99], [-90.0, -0.01, 0.5, 45.2], 0.5) == \
        [(-1, -180), (0, -1), (0, 1), (359, 90)]


def test_split_leakage_10k_points():
    rng = np.random.default_rng(0)
    lon = rng.uniform(-3, 3, 10_000)
    lat = rng.uniform(40, 44, 10_000)
    for seed in range(11):
        s = grid_split(lon, lat, 0.5, 0.8, seed)
        train = s.is_train(lon, lat)
        # exhaustive scan: which sides does each cell see?
        sides = {}
        for key, t in zip(cell_keys(lon, lat, 0.5), train):
            sides.setdefault(key, set()).add(bool(t))
        assert all(len(v) == 1 for v in sides.values())
        n = len(sides)
        assert len(s.train_cells) == math.floor(0.8 * n + 0.5)
        assert set(s.train_cells) | set(s.test_cells) == set(sides)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-20, 20), st.floats(-20, 20)), min_size=2, max_size=80),
       st.floats(0.05, 0.95), st.integers(0, 2 ** 32))
def test_split_properties(points, frac, seed):
    lon, lat = map(np.array, zip(*points))
    n = len(set(cell_keys(lon, lat, 0.5)))
    if n < 2:
        return
    s = grid_split(lon, lat, 0.5, frac, seed)
    assert len(s.train_cells) == min(max(math.floor(frac * n + 0.5), 1), n - 1)
    assert set(s.train_cells).isdisjoint(s.test_cells)
    assert grid_split(lon, lat, 0.5, frac, seed).assignment == s.assignment


# ---------------------------------------------------------------- metrics

def test_metrics_trivial():
    truth = np.array([1, 0, 1, 1, 0], bool)
    m = compute_metrics(truth, truth)
    assert m.accuracy == 1.0 and m.confusion[0][1] == m.confusion[1][0] == 0
    assert compute_metrics(~truth, truth).accuracy == 0.0
    with pytest.raises(ValidationError):
        compute_metrics([1, 0], [1, 0, 1])


def test_metrics_hand_tally():
    pred = [1, 1, 0, 0, 1, 0, 1, 1, 0, 0, 1, 0, 0, 1, 1, 0, 1, 0, 0, 1]
    true = [1, 0, 0, 1, 1, 0, 1, 0, 0, 0, 1, 1, 0, 1, 0, 0, 1, 0, 1, 1]
    crop = ["maize" if t else ("soybean" if i % 3 else "rice") for i, t in enumerate(true)]
    m = compute_metrics(pred, true, crop)
    # predicted x actual, counted by hand: TN=7 FN=3 FP=3 TP=7
    assert m.confusion == [[7, 3], [3, 7]]
    assert m.accuracy == 0.7 and m.n_test == 20
    assert m.per_crop == {"maize": [7, 3], "rice": [0, 3], "soybean": [3, 4]}
    assert sum(map(sum, m.confusion)) == m.n_test


def test_aggregate_examples():
    assert aggregate([0.9]) == (0.9, 0.0, 0)
    mean, std, med = aggregate([0.8, 0.9, 1.0])
    assert mean == pytest.approx(0.9) and std == pytest.approx(0.0816, abs=1e-4) and med == 1
    assert aggregate([0.85] * 11)[1] == 0.0
    assert aggregate([0.9, 0.7, 0.8, 0.6])[2] == 1  # lower middle of (0.7, 0.8)
    with pytest.raises(ValueError):
        aggregate([])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=15))
def test_aggregate_matches_recomputation(acc):
    mean, std, med = aggregate(acc)
    m = sum(acc) / len(acc)
    assert mean == pytest.approx(m, abs=1e-12)
    assert std == pytest.approx(math.sqrt(sum((a - m) ** 2 for a in acc) / len(acc)), abs=1e-9)
    assert acc[med] == sorted(acc)[(len(acc) - 1) // 2]


# ---------------------------------------------------------------- regimes on the synthetic benchmark

@pytest.fixture(scope="module")
def models(small_benchmark):
    a, b = small_benchmark["alpha"], small_benchmark["beta"]
    return {(name, kind): local_models(d, kind, n_runs=RUNS, forest_cfg=FAST)
            for name, d in (("alpha", a), ("beta", b)) for kind in ("RH11", "HARM20")}


def test_separable_region_local_accuracy():
    # two crops, 1.5 m apart in height (5 sd) and with a constant season height
    tall = replace(MAIZE, month_scale=(1.0, 1.0, 1.0))
    spec = RegionSpec("sep", (5.0, 50.0, 6.5, 51.5), ((tall, 0.5), (SOYBEAN, 0.5)), n_shots=1500, seed=21,
                      cell_size=0.01)
    region = gen_region(spec)
    data, _ = prepare_region("sep", region.shots, region.series, region.truth, spec.maize_code)
    assert run_local(data, "RH11", n_runs=RUNS, forest_cfg=FAST).mean_accuracy >= 0.97
    assert run_local(data, "HARM20", n_runs=RUNS, forest_cfg=FAST).mean_accuracy >= 0.95


def test_local_accuracy(small_benchmark, models):
    for name in ("alpha", "beta"):
        d = small_benchmark[name]
        gedi = run_local(d, "RH11", n_runs=RUNS, forest_cfg=FAST, models=models[name, "RH11"])
        s2 = run_local(d, "HARM20", n_runs=RUNS, forest_cfg=FAST, models=models[name, "HARM20"])
        assert gedi.mean_accuracy >= 0.95 and s2.mean_accuracy >= 0.95
        assert len(gedi.runs) == RUNS
        # S2 Local and GEDI Local see the same samples
        assert [r.n_test for r in gedi.runs] == [r.n_test for r in s2.runs]
        accs = [r.accuracy for r in gedi.runs]
        assert gedi.std_accuracy == pytest.approx(np.std(accs), abs=1e-15)


def test_local_models_default_matches_explicit(small_benchmark, models):
    d = small_benchmark["alpha"]
    fresh = run_local(d, "RH11", n_runs=RUNS, forest_cfg=FAST)
    reused = run_local(d, "RH11", n_runs=RUNS, forest_cfg=FAST, models=models["alpha", "RH11"])
    assert fresh.to_dict() == reused.to_dict()


def test_transfer_properties(small_benchmark, models):
    for src, tgt in (("alpha", "beta"), ("beta", "alpha")):
        S, T = small_benchmark[src], small_benchmark[tgt]
        gedi_local = run_local(T, "RH11", n_runs=RUNS, forest_cfg=FAST, models=models[tgt, "RH11"])
        s2_local = run_local(T, "HARM20", n_runs=RUNS, forest_cfg=FAST, models=models[tgt, "HARM20"])
        gedi_tr = run_transfer(S, T, "RH11", n_runs=RUNS, forest_cfg=FAST, models=models[src, "RH11"])
        s2_tr = run_transfer(S, T, "HARM20", n_runs=RUNS, forest_cfg=FAST, models=models[src, "HARM20"])
        assert abs(gedi_tr.mean_accuracy - gedi_local.mean_accuracy) <= 0.03
        assert s2_local.mean_accuracy - s2_tr.mean_accuracy >= 0.15
        # transfer is scored on the target's local test split
        assert [r.n_test for r in gedi_tr.runs] == [r.n_test for r in gedi_local.runs]


def test_gedi_s2_transfer(small_benchmark, models):
    S, T = small_benchmark["alpha"], small_benchmark["beta"]
    s2_local = run_local(T, "HARM20", n_runs=RUNS, forest_cfg=FAST, models=models["beta", "HARM20"])
    rep = run_gedi_s2_transfer(S, T, n_runs=RUNS, forest_cfg=FAST, gedi_models=models["alpha", "RH11"])
    assert abs(rep.mean_accuracy - s2_local.mean_accuracy) <= 0.03
    for run in rep.runs:
        assert run.accuracy >= run.extra["pseudo_label_accuracy"] - 0.05


def test_pseudo_label_noise_tolerance(small_benchmark):
    # depth-1 trees on one random RH value each: stage-1 labels are noticeably wrong
    S, T = small_benchmark["alpha"], small_benchmark["beta"]
    weak = ForestConfig(n_trees=40, max_depth=1, max_features=1)
    models = local_models(S, "RH11", n_runs=RUNS, forest_cfg=weak)
    rep = run_gedi_s2_transfer(S, T, n_runs=RUNS, forest_cfg=FAST, gedi_models=models)
    assert min(r.extra["pseudo_label_accuracy"] for r in rep.runs) < 0.9
    for run in rep.runs:
        assert run.accuracy >= run.extra["pseudo_label_accuracy"] - 0.05


def test_target_truth_never_reaches_training(small_benchmark, models):
    S, T = small_benchmark["alpha"], small_benchmark["beta"]
    rep, stage2 = run_gedi_s2_transfer(S, T, n_runs=2, forest_cfg=FAST, gedi_models=models["alpha", "RH11"][:2],
                                       return_models=True)
    scrambled = T.take(np.arange(len(T)))
    scrambled.is_maize = np.random.default_rng(0).permutation(scrambled.is_maize)
    _, stage2b = run_gedi_s2_transfer(S, scrambled, n_runs=2, forest_cfg=FAST,
                                      gedi_models=models["alpha", "RH11"][:2], return_models=True)
    assert [serialize_forest(m) for m in stage2] == [serialize_forest(m) for m in stage2b]


def test_kind_mismatch(small_benchmark, models):
    S, T = small_benchmark["alpha"], small_benchmark["beta"]
    with pytest.raises(ConfigError):
        run_transfer(S, T, "HARM20", n_runs=RUNS, models=models["alpha", "RH11"])
    with pytest.raises(ConfigError):
        run_gedi_s2_transfer(S, T, n_runs=RUNS, gedi_models=models["alpha", "HARM20"])


def test_class_collapse_names_months(small_benchmark):
    d = small_benchmark["alpha"]
    only_maize = d.take(d.is_maize)
    with pytest.raises(RunError, match=r"\[8\]"):
        run_local(only_maize, "RH11", months=[8], n_runs=1, forest_cfg=FAST)


def test_month_subsets(small_benchmark):
    d = small_benchmark["alpha"]
    rep = run_local(d, "RH11", months=[8], n_runs=2, forest_cfg=FAST)
    assert rep.months == [8]
    assert sum(rep.runs[0].confusion[0]) + sum(rep.runs[0].confusion[1]) == rep.runs[0].n_test
    with pytest.raises(ConfigError):
        run_local(d, "RH11", months=[6], n_runs=1)


def test_run_regime_dispatch(small_benchmark):
    with pytest.raises(ConfigError):
        run_regime("s3_local", small_benchmark, "alpha")
    with pytest.raises(ConfigError):
        run_regime("gedi_transfer", small_benchmark, "alpha")
    with pytest.raises(ConfigError):
        run_regime("gedi_transfer", small_benchmark, "alpha", "alpha")
    with pytest.raises(ConfigError):
        run_regime("gedi_local", small_benchmark, "alpha", "beta")
    rep = run_regime("gedi_transfer", small_benchmark, "alpha", "beta", n_runs=1, forest_cfg=FAST)
    assert (rep.regime, rep.train_region, rep.test_region) == ("gedi_transfer", "alpha", "beta")


def test_report_serialization_is_deterministic(small_benchmark):
    def render():
        rep = run_regime("gedi_local", small_benchmark, "beta", n_runs=2, forest_cfg=FAST)
        buf = io.StringIO()
        write_summary_csv([rep], buf)
        return json.dumps(rep.to_dict(), sort_keys=True), buf.getvalue()
    a, b = render(), render()
    assert a == b
    doc = json.loads(a[0])
    assert doc["n_runs"] == 2 and len(doc["runs"]) == 2
    assert doc["median_run_confusion"] == doc["runs"][doc["median_run_index"]]["confusion"]
    assert doc["config"]["master_seed"] == 0 and doc["config"]["class_weighting"] == "none"
    assert a[1].splitlines()[0].startswith("regime,feature_kind")


def test_split_config_validation():
    for bad in (dict(cell_size_deg=0), dict(train_frac=1.0), dict(train_frac=0.0)):
        with pytest.raises(ConfigError):
            SplitConfig(**bad)
