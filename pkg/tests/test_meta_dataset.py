import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hubrank.meta_dataset import (
    LoadError,
    MetaSample,
    TimeSeriesDataset,
    default_hub,
    generate_synthetic_world,
    load_dataset,
    load_meta,
    make_linear_ar,
    make_seasonal_mean,
    meta_to_json,
    normalize_scores,
    oracle_ground_truth,
    sample_tasks,
    save_meta,
    split_meta,
    write_dataset_csv,
)

# ---------------------------------------------------------------------------
# loading


def test_load_small_csv(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("date,a,b\n2020-01-01,1.5,2\n2020-01-02,3,4.25\n2020-01-03,5,6\n")
    ds = load_dataset(p)
    assert ds.values.shape == (3, 2)
    assert np.array_equal(ds.values, [[1.5, 2], [3, 4.25], [5, 6]])
    assert ds.channels == ["a", "b"]


def test_load_without_timestamp(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b\n1,2\n3,4\n")
    assert load_dataset(p).values.shape == (2, 2)


def test_load_forward_fill(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("time,a,b\n0,,1\n1,2,\n2,3,5\n3,NaN,6\n")
    ds = load_dataset(p, missing="ffill")
    assert np.array_equal(ds.values, [[2, 1], [2, 1], [3, 5], [3, 6]])
    with pytest.raises(LoadError, match="row 2, column 'a'"):
        load_dataset(p)


def test_load_errors_locate_cells(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("time,a,b\n0,1,2\n1,3\n")
    with pytest.raises(LoadError, match="row 3"):
        load_dataset(p)
    p.write_text("time,a,b\n0,1,2\n1,3,oops\n")
    with pytest.raises(LoadError, match="row 3, column 'b'"):
        load_dataset(p)
    p.write_text("time,a\n0,1\n1,2\n")
    with pytest.raises(LoadError, match="at least 10"):
        load_dataset(p, min_rows=10)
    with pytest.raises(LoadError, match="no such file"):
        load_dataset(tmp_path / "missing.csv")


def test_load_constant_column_policy(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("time,a,b\n0,1,7\n1,2,7\n2,3,7\n")
    with pytest.raises(LoadError, match="constant"):
        load_dataset(p)
    assert load_dataset(p, constant="drop").channels == ["a"]
    assert load_dataset(p, constant="keep").n_channels == 2


def test_load_hourly_benchmark_shape(tmp_path):
    rng = np.random.default_rng(0)
    ds = TimeSeriesDataset("etth1", rng.standard_normal((14400, 7)))
    write_dataset_csv(ds, tmp_path / "etth1.csv")
    back = load_dataset(tmp_path / "etth1.csv", split="6:2:2")
    assert back.values.shape == (14400, 7)
    assert back.split == (Fraction(3, 5), Fraction(1, 5), Fraction(1, 5))
    assert back.bounds() == (8640, 11520)
    assert np.array_equal(back.values, ds.values)


def test_split_must_sum_to_one():
    with pytest.raises(ValueError):
        TimeSeriesDataset("x", np.zeros((10, 1)), split=(Fraction(1, 2), Fraction(1, 2), Fraction(1, 2)))


# ---------------------------------------------------------------------------
# score normalization


def test_normalize_examples():
    assert np.array_equal(normalize_scores([2, 4]), [1, 0])
    assert np.array_equal(normalize_scores([3, 3, 3]), [0.5, 0.5, 0.5])
    assert np.allclose(normalize_scores([1, 2, 4, 8]), [1, 6 / 7, 4 / 7, 0], rtol=0, atol=1e-15)
    assert np.array_equal(normalize_scores([1, 2, 4, 8], method="rank"), [1, 2 / 3, 1 / 3, 0])
    with pytest.raises(ValueError):
        normalize_scores([1, np.nan])


@given(
    st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=10),
    st.floats(0.01, 100),
    st.floats(-100, 100),
)
def test_normalize_affine_invariance(e, a, b):
    e = np.array(e)
    if np.ptp(e) < 1e-6 * max(1.0, np.abs(e).max()):
        return  # degenerate spread is handled by the all-equal rule
    assert np.allclose(normalize_scores(a * e + b), normalize_scores(e), atol=1e-7)


# ---------------------------------------------------------------------------
# synthetic hub and oracle


@given(st.integers(0, 7), st.integers(0, 60), st.integers(1, 40))
def test_forecast_shape_for_any_sufficient_window(k, extra, H):
    m = default_hub(8, seed=0)[k]
    x = np.random.default_rng(k).standard_normal(m.receptive_field + extra)
    assert m.forecast(x, H).shape == (H, 1)
    assert m.forecast(x.reshape(-1, 1), H).shape == (H, 1)


def test_forecast_rejects_short_window():
    m = make_linear_ar("ar", [0.5, 0.2, 0.1])
    with pytest.raises(ValueError, match="receptive field"):
        m.forecast(np.zeros(2), 4)


def test_oracle_single_model_gives_half(small_world):
    ds = next(iter(small_world.datasets.values()))
    assert np.array_equal(oracle_ground_truth(small_world.hub[:1], ds, 96).scores, [0.5])


def test_oracle_prefers_generating_process():
    rng = np.random.default_rng(5)
    coef = np.array([0.6, -0.3])
    x = np.zeros(4000)
    eps = rng.standard_normal(4000)
    for t in range(2, 4000):
        x[t] = coef[0] * x[t - 1] + coef[1] * x[t - 2] + eps[t]
    ds = TimeSeriesDataset("ar2", x)
    hub = [make_linear_ar("true_ar", coef), make_seasonal_mean("season12", 12)]
    s = oracle_ground_truth(hub, ds, 4)
    assert s.scores[0] == 1.0 and s.scores[1] == 0.0


def test_oracle_scores_have_single_best_and_worst(small_world):
    for s in small_world.samples:
        assert len(s.scores) == 8
        assert np.sum(s.scores == 1.0) == 1 and np.sum(s.scores == 0.0) == 1
        assert np.all((s.scores >= 0) & (s.scores <= 1))


def test_oracle_ranking_invariant_to_channel_scaling(small_world):
    ds = next(iter(small_world.datasets.values()))
    scaled = TimeSeriesDataset(ds.id, ds.values * np.array([3.0, 0.5])[: ds.n_channels] + 7.0, split=ds.split)
    a = oracle_ground_truth(small_world.hub, ds, 96)
    b = oracle_ground_truth(small_world.hub, scaled, 96)
    assert np.array_equal(np.argsort(a.errors), np.argsort(b.errors))


# ---------------------------------------------------------------------------
# world generation


def test_world_counts_and_diversity(small_world):
    assert len(small_world.datasets) == 4 and len(small_world.hub) == 8
    assert len(small_world.samples) == 4 * 2
    winners = {}
    for s in small_world.samples:
        winners.setdefault(s.dataset_id, set()).add(int(np.argmax(s.scores)))
    assert len({min(v) for v in winners.values()}) >= 2
    assert small_world.attempts <= 5


def test_world_is_deterministic(small_world):
    again = generate_synthetic_world(0, n_datasets=4, K=8, horizons=(96, 192), length=2000)
    a = json.dumps(meta_to_json([m.id for m in small_world.hub], small_world.samples))
    b = json.dumps(meta_to_json([m.id for m in again.hub], again.samples))
    assert a == b


def test_world_rejects_tiny_requests():
    with pytest.raises(ValueError):
        generate_synthetic_world(0, n_datasets=3)
    with pytest.raises(ValueError, match="unknown domain"):
        generate_synthetic_world(0, domains=["martian"])


def test_meta_file_roundtrip(tmp_path, small_world):
    ids = [m.id for m in small_world.hub]
    save_meta(tmp_path / "m.json", ids, small_world.samples)
    hub, back = load_meta(tmp_path / "m.json")
    assert hub == ids
    for a, b in zip(small_world.samples, back):
        assert a.key == b.key and np.array_equal(a.scores, b.scores)
    blob = json.loads((tmp_path / "m.json").read_text())
    blob["samples"][0]["scores"] = blob["samples"][0]["scores"][:3]
    (tmp_path / "m.json").write_text(json.dumps(blob))
    with pytest.raises(ValueError, match="hub of 8"):
        load_meta(tmp_path / "m.json")


# ---------------------------------------------------------------------------
# partitions and tasks


def _fake_meta(n_ds, horizons=(96, 192, 336, 720)):
    return [MetaSample(f"d{i:02d}", h, np.linspace(0, 1, 4)) for i in range(n_ds) for h in horizons]


def _ids(part):
    return {s.dataset_id for s in part}


def test_split_fourteen_datasets():
    meta = _fake_meta(14)
    tr, va, te = split_meta(meta, 3, seed=0)
    assert len(_ids(te)) == 3 and len(_ids(va)) == 1 and len(_ids(tr)) == 10
    assert len(tr) + len(va) + len(te) == len(meta)
    assert not (_ids(tr) & _ids(va)) and not (_ids(tr) & _ids(te)) and not (_ids(va) & _ids(te))


def test_split_boundary_and_error():
    tr, va, te = split_meta(_fake_meta(6), 4, seed=1)
    assert len(_ids(tr)) == 1 and len(_ids(va)) == 1 and len(_ids(te)) == 4
    with pytest.raises(ValueError, match="at least"):
        split_meta(_fake_meta(5), 4)


@given(st.integers(4, 20), st.integers(0, 1000))
def test_split_is_a_partition(n, seed):
    meta = _fake_meta(n, (96, 192))
    tr, va, te = split_meta(meta, min(3, n - 2), seed)
    keys = [s.key for s in tr + va + te]
    assert sorted(keys) == sorted(s.key for s in meta)
    assert not (_ids(tr) & _ids(va)) and not (_ids(tr) & _ids(te)) and not (_ids(va) & _ids(te))


def test_cross_dataset_two_datasets():
    meta = _fake_meta(2)
    (task,) = sample_tasks(meta, "cross_dataset", 1, 4, 4, np.random.default_rng(0))
    assert _ids(task.support).isdisjoint(_ids(task.query))


def test_cross_horizon_query_avoids_support_horizon():
    meta = _fake_meta(3)
    rng = np.random.default_rng(0)
    for _ in range(50):
        (task,) = sample_tasks(meta, "cross_horizon", 1, 4, 4, rng)
        h = {s.horizon for s in task.support}
        assert len(h) == 1
        assert all(s.horizon in {96, 192, 336, 720} - h for s in task.query)


def test_task_invariants_ten_thousand_trials():
    meta = _fake_meta(6)
    rng = np.random.default_rng(1)
    for i in range(10_000):
        strategy = ("cross_dataset", "cross_horizon")[i % 2]
        (task,) = sample_tasks(meta, strategy, 1, 4, 4, rng)
        assert {s.key for s in task.support}.isdisjoint({s.key for s in task.query})
        if strategy == "cross_dataset":
            assert len(_ids(task.support)) == 1 and _ids(task.support).isdisjoint(_ids(task.query))
        else:
            sh = {s.horizon for s in task.support}
            assert len(sh) == 1 and sh.isdisjoint({s.horizon for s in task.query})


def test_task_coverage_census():
    meta = _fake_meta(10)
    rng = np.random.default_rng(2)
    seen = set()
    for i in range(1000):
        for t in sample_tasks(meta, ("cross_dataset", "cross_horizon")[i % 2], 1, 4, 4, rng):
            seen |= _ids(t.support) | _ids(t.query)
    assert seen == _ids(meta)


def test_task_sampling_diversity_errors():
    with pytest.raises(ValueError, match="2 datasets"):
        sample_tasks(_fake_meta(1), "cross_dataset", 1, 4, 4, np.random.default_rng(0))
    with pytest.raises(ValueError, match="2 horizons"):
        sample_tasks(_fake_meta(3, (96,)), "cross_horizon", 1, 4, 4, np.random.default_rng(0))
    with pytest.raises(ValueError, match="strategy"):
        sample_tasks(_fake_meta(3), "sideways", 1, 4, 4, np.random.default_rng(0))
