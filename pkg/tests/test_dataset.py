import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emcausal.dataset import (
    DataFormatError,
    LagGraph,
    LagWeightTensor,
    NoiseModel,
    TimeSeriesDataset,
    load_csv,
    load_graph,
    save_csv,
    save_graph,
    summarize,
)


def _random_dataset(rng, T=None, d=None, rate=0.3):
    T = T or int(rng.integers(1, 30))
    d = d or int(rng.integers(1, 6))
    values = rng.normal(scale=10 ** rng.uniform(-3, 3), size=(T, d))
    mask = rng.random((T, d)) >= rate
    return TimeSeriesDataset(values, mask)


def test_dataset_shape_validation():
    with pytest.raises(ValueError):
        TimeSeriesDataset(np.zeros((3, 2)), np.ones((3, 3), dtype=bool))
    with pytest.raises(ValueError):
        TimeSeriesDataset(np.zeros((3, 2)), np.ones((3, 2), dtype=bool), ["a", "a"])
    with pytest.raises(ValueError):
        TimeSeriesDataset(np.zeros((0, 2)), np.ones((0, 2), dtype=bool))


def test_dataset_is_immutable():
    ds = TimeSeriesDataset(np.zeros((2, 2)), np.ones((2, 2), dtype=bool))
    with pytest.raises(ValueError):
        ds.values[0, 0] = 1.0


def test_missing_rate_matches_mask():
    rng = np.random.default_rng(0)
    for _ in range(20):
        ds = _random_dataset(rng)
        n_missing = np.sum(~ds.mask)
        assert abs(ds.missing_rate - n_missing / ds.mask.size) <= 1 / ds.mask.size


def test_load_csv_single_gap(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("A,B\n1.0,2.0\n3.0,\n5.0,6.0\n")
    ds = load_csv(path)
    assert (ds.T, ds.d) == (3, 2)
    assert np.sum(~ds.mask) == 1
    assert not ds.mask[1, 1]
    assert ds.var_names == ["A", "B"]


def test_load_csv_no_rows(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("# format_version: 1\nA,B\n")
    with pytest.raises(DataFormatError, match="empty dataset"):
        load_csv(path)


def test_load_csv_bad_row_length(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("A,B\n1,2\n3\n")
    with pytest.raises(DataFormatError, match="row 2"):
        load_csv(path)


def test_load_csv_bad_cell(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("A,B\n1,2\n3,abc\n")
    with pytest.raises(DataFormatError, match="row 2, column 2"):
        load_csv(path)


def test_save_csv_fully_observed(tmp_path):
    path = tmp_path / "full.csv"
    save_csv(TimeSeriesDataset(np.array([[1.0, 2.0], [3.0, 4.0]]), np.ones((2, 2), bool)), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# format_version: 1"
    body = lines[1:]
    assert len(body) == 3
    assert all("" not in line.split(",") for line in body)


def test_save_csv_all_missing(tmp_path):
    path = tmp_path / "missing.csv"
    save_csv(TimeSeriesDataset(np.zeros((3, 3)), np.zeros((3, 3), bool)), path)
    rows = path.read_text().splitlines()[2:]
    assert rows == [",,"] * 3
    assert not load_csv(path).mask.any()


def test_csv_round_trip_random(tmp_path):
    rng = np.random.default_rng(1)
    for k in range(100):
        ds = _random_dataset(rng)
        if not ds.mask.any():
            continue
        path = tmp_path / f"r{k}.csv"
        save_csv(ds, path)
        back = load_csv(path)
        assert np.array_equal(back.mask, ds.mask)
        obs = ds.mask
        np.testing.assert_allclose(back.values[obs], ds.values[obs], rtol=1e-15, atol=0)


def test_graph_round_trip_random(tmp_path):
    rng = np.random.default_rng(2)
    for k in range(100):
        L, d = int(rng.integers(1, 4)), int(rng.integers(1, 6))
        g = LagGraph(rng.random((L, d, d)) < 0.3)
        path = tmp_path / f"g{k}.json"
        save_graph(g, path)
        back = load_graph(path)
        assert np.array_equal(back.adjacency, g.adjacency)
        assert back.var_names == g.var_names


def test_load_graph_aggregates_lags(tmp_path):
    path = tmp_path / "g.json"
    payload = {
        "format_version": 1,
        "max_lag": 2,
        "var_names": ["X1", "X2"],
        "edges": [
            {"target": "X2", "source": "X1", "lag": 1},
            {"target": "X2", "source": "X1", "lag": 2},
        ],
    }
    path.write_text(json.dumps(payload))
    g = load_graph(path)
    assert g.summary.sum() == 1 and g.summary[1, 0]


def test_load_graph_empty_edges(tmp_path):
    path = tmp_path / "g.json"
    path.write_text(json.dumps({"max_lag": 3, "var_names": ["a", "b", "c"], "edges": []}))
    g = load_graph(path)
    assert not g.adjacency.any() and not g.summary.any()


@pytest.mark.parametrize(
    "edge, msg",
    [
        ({"target": "X2", "source": "X1", "lag": 0}, "outside"),
        ({"target": "X2", "source": "X1", "lag": 3}, "outside"),
        ({"target": "X9", "source": "X1", "lag": 1}, "unknown variable"),
    ],
)
def test_load_graph_validation(tmp_path, edge, msg):
    path = tmp_path / "g.json"
    path.write_text(json.dumps({"max_lag": 2, "var_names": ["X1", "X2"], "edges": [edge]}))
    with pytest.raises(DataFormatError, match=msg):
        load_graph(path)


def test_summarize_basic():
    assert not summarize(np.zeros((2, 3, 3), bool)).any()
    adj = np.zeros((2, 3, 3), bool)
    adj[1, 0, 0] = True
    s = summarize(adj)
    assert s[0, 0] and s.sum() == 1


def test_summarize_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(50):
        adj = rng.random((3, 4, 4)) < 0.2
        s = summarize(adj)
        for i in range(4):
            for j in range(4):
                assert s[i, j] == any(adj[tau, i, j] for tau in range(3))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_summarize_idempotent_under_lag_duplication(L, d, seed):
    adj = np.random.default_rng(seed).random((L, d, d)) < 0.3
    assert np.array_equal(summarize(np.concatenate([adj, adj])), summarize(adj))


def test_lag_weight_tensor_validation():
    with pytest.raises(ValueError):
        LagWeightTensor(np.array([[[np.nan]]]))
    w = LagWeightTensor.zeros(2, 3)
    assert w.max_lag == 2 and w.d == 3


def test_noise_model_contracts():
    with pytest.raises(ValueError):
        NoiseModel("gaussian", 0.0)
    with pytest.raises(ValueError):
        NoiseModel("empirical")
    pool = NoiseModel("empirical", residual_pool=np.array([1.0, 2.0, 3.0]))
    assert pool.residual_pool.mean() == pytest.approx(0.0)
    rng = np.random.default_rng(0)
    assert abs(NoiseModel("laplace", 2.0).sample(rng, 100_000).mean()) < 0.05
