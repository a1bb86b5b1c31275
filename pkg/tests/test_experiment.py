import json
import logging

import pytest

from sparsehash.data import ClusterConfig
from sparsehash.experiment import ExperimentConfig, alpha_sweep, format_report, report_json, sparse_vs_dense_experiment
from sparsehash.trainer import SgdConfig


def small(**over) -> ExperimentConfig:
    base = dict(
        data=ClusterConfig(n_points=400, n_clusters=4, dim=16, spread=1.4),
        n_query_per_class=5,
        n_train_per_class=40,
        n_pos=200,
        lengths=(8, 12),
        alpha={8: 0.2, 12: 0.2},
        lam={8: 0.03, 12: 0.02},
        margin={8: 12.0, 12: 16.0},
        sgd=SgdConfig(lr=0.003, max_epochs=3),
    )
    return ExperimentConfig(**{**base, **over})


@pytest.fixture(scope="module")
def results():
    return sparse_vs_dense_experiment(small())


def test_rows_cover_methods_and_lengths(results):
    assert [(r.method, r.m) for r in results] == [
        (meth, m) for meth in ("sparsehash", "dense", "nnhash", "diffhash") for m in (8, 12)
    ]
    for r in results:
        assert sorted(r.recall) == [0, 1, 2]
        assert 0 <= r.sparsity <= 1
        assert 1 <= r.unique_codes
        for rad in (0, 1, 2):
            assert 0 <= r.recall[rad] <= 1 and 0 <= r.precision[rad] <= 1
        assert r.recall[0] <= r.recall[1] <= r.recall[2]


def test_linear_baselines_have_full_codes(results):
    for r in results:
        if r.method in ("nnhash", "diffhash"):
            assert r.sparsity == 1.0


def test_dense_ablation_is_dense(results):
    for r in results:
        if r.method == "dense":
            assert r.sparsity > 0.4


def test_deterministic(results):
    again = sparse_vs_dense_experiment(small())
    assert report_json(again) == report_json(results)


def test_swapping_lengths_only_relabels(results):
    swapped = sparse_vs_dense_experiment(small(lengths=(12, 8)))
    key = lambda r: (r.method, r.m)  # noqa: E731
    assert sorted(json.loads(report_json(swapped)), key=lambda d: (d["method"], d["m"])) == sorted(
        json.loads(report_json(results)), key=lambda d: (d["method"], d["m"])
    )
    assert [key(r) for r in swapped][:2] == [("sparsehash", 12), ("sparsehash", 8)]


def test_report_formats(results):
    lines = format_report(results).splitlines()
    assert lines[0].split("\t")[:5] == ["method", "m", "sparsity", "unique_codes", "avg_neighbors_r0"]
    assert len(lines) == 1 + len(results)
    assert len(json.loads(report_json(results))) == len(results)


def test_diffhash_skipped_when_longer_than_dimension(caplog):
    per_m = dict(alpha={8: 0.2, 20: 0.2}, lam={8: 0.03, 20: 0.02}, margin={8: 12.0, 20: 16.0})
    cfg = small(lengths=(8, 20), methods=("diffhash",), **per_m)
    with caplog.at_level(logging.WARNING):
        out = sparse_vs_dense_experiment(cfg)
    assert [(r.method, r.m) for r in out] == [("diffhash", 8)]
    assert "diff-hash" in caplog.text


def test_alpha_sweep_returns_one_value_per_alpha():
    vals = alpha_sweep(small(methods=("sparsehash",)), [0.0, 0.5], 8)
    assert len(vals) == 2
    assert all(0 <= v <= 1 for v in vals)


@pytest.mark.parametrize(
    "over",
    [dict(lengths=(8, 32)), dict(methods=("pca",)), dict(alpha={8: 0.1})],
)
def test_config_validation(over):
    with pytest.raises(ValueError):
        small(**over)
