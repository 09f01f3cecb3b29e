"""Acceptance gate: every criterion at its stated tolerance.

Each test prints one PASS/FAIL line (run with ``pytest -s`` or ``-rA`` to
see them). The desk-scale F1 reproduction criteria need the real prepared
datasets; when those are absent (they cannot be fetched automatically), the
tests skip with instructions and the always-run synthetic consistency smoke
covers the same mechanism end to end.
"""

import json
import os
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from fedboost.boosting import (
    Hyperparameters,
    bin_features,
    bucket_counts,
    build_histograms,
    find_best_split,
    train_centralized,
)
from fedboost.data import (
    DatasetMatrix,
    PartitionSpec,
    holdout_split,
    load_prepared,
    make_partition,
)
from fedboost.experiment import ExperimentConfig, run_dataset_grid
from fedboost.federation import TrainingConfig, run_training
from fedboost.losses import LossFunction, grad_hess
from fedboost.sketch import FeatureSketchSet, QuantileSketch

DATA_DIR = Path(
    os.environ.get(
        "FEDBOOST_DATA_DIR", Path(__file__).resolve().parents[1] / "data" / "prepared"
    )
)

BENCHMARK_HYPERPARAMS = Hyperparameters(
    reg_lambda=0.1, gamma=0.0, eta=0.1, max_depth=6, max_bins=255, rounds=100
)

F1_TARGETS = {
    "htru2": (0.89, 0.03),
    "dry_bean": (0.93, 0.03),
    "parkinson": (0.93, 0.05),
    "bank": (0.56, 0.05),
}

PARTY_COUNT_GOLDENS = {
    36168: [  # bank
        (7234, 7234, 7234, 7233, 7233),
        (10851, 9043, 6329, 6781, 3164),
        (15373, 9268, 5820, 4323, 1384),
        (20007, 8999, 4157, 2399, 606),
        (24507, 7617, 2538, 1241, 265),
    ],
    14318: [  # htru2
        (2864, 2864, 2864, 2863, 2863),
        (4296, 3580, 2505, 2684, 1253),
        (6086, 3669, 2304, 1711, 548),
        (7920, 3563, 1645, 950, 240),
        (9702, 3015, 1005, 491, 105),
    ],
    604: [  # parkinson
        (121, 121, 121, 121, 120),
        (181, 152, 106, 113, 52),
        (257, 156, 97, 71, 23),
        (335, 151, 68, 40, 10),
        (411, 126, 42, 21, 4),
    ],
}


@contextmanager
def criterion(label: str):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {label}: FAIL")
        raise
    print(f"ACCEPTANCE {label}: PASS")


def synthetic_binary(n, seed, m=6):
    rng = np.random.default_rng(seed)
    features = rng.normal(size=(n, m))
    noise = 0.6 * rng.normal(size=n)
    labels = (features[:, 0] + 0.7 * features[:, 1] - 0.4 * features[:, 2] + noise > 0)
    return DatasetMatrix(
        features, labels.astype(np.int64), [f"f{i}" for i in range(m)], "binary", 2
    )


def synthetic_multiclass(n, seed, k=3, m=5):
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=2.5, size=(k, m))
    labels = rng.integers(0, k, size=n)
    features = centers[labels] + rng.normal(size=(n, m))
    labels[:k] = np.arange(k)
    return DatasetMatrix(features, labels, [f"f{i}" for i in range(m)], "multiclass", k)


def exact_quantile(values, q):
    ordered = np.sort(np.asarray(values, dtype=np.float64))
    return ordered[int(np.floor(q * (len(ordered) - 1)))]


# -- criterion 1: partition-count goldens --------------------------------------


def test_criterion_1_partition_count_goldens():
    with criterion("1 partition-count goldens (Bank, HTRU2, Parkinson)"):
        started = time.perf_counter()
        rng = np.random.default_rng(0)
        for train_size, golden_rows in PARTY_COUNT_GOLDENS.items():
            features = rng.normal(size=(train_size, 2))
            labels = rng.integers(0, 2, size=train_size)
            labels[:2] = [0, 1]
            data = DatasetMatrix(features, labels, ["a", "b"], "binary", 2)
            for scheme, expected in zip(("even", "A", "B", "C", "D"), golden_rows):
                result = make_partition(
                    data, PartitionSpec(scheme=scheme, seed=11)
                )
                assert tuple(result.counts) == expected, (train_size, scheme)
        elapsed = time.perf_counter() - started
        assert elapsed < 1.0, f"golden partition check took {elapsed:.2f}s"


# -- criteria 2 and 3: desk-scale F1 reproduction over the real datasets --------

_GRID_CACHE: dict = {}


def _real_dataset_grid(name: str, tmp_path_factory):
    prepared = DATA_DIR / name
    if not (prepared / "manifest.json").exists():
        pytest.skip(
            f"prepared dataset {name!r} not found under {DATA_DIR}; fetch the raw "
            f"file (see recipes/{name}.json) and run "
            f"`fedboost prepare recipes/{name}.json --raw <file> --out {prepared}`"
        )
    if name not in _GRID_CACHE:
        train, test, _ = load_prepared(prepared)
        out_dir = tmp_path_factory.mktemp(f"grid_{name}")
        config = ExperimentConfig(hyperparameters=BENCHMARK_HYPERPARAMS, seed=0)
        _GRID_CACHE[name] = run_dataset_grid(name, train, test, config, out_dir)
    return _GRID_CACHE[name]


@pytest.mark.parametrize("name", sorted(F1_TARGETS))
def test_criterion_2_f1_reproduction(name, tmp_path_factory):
    block = _real_dataset_grid(name, tmp_path_factory)
    target, tolerance = F1_TARGETS[name]
    with criterion(f"2 F1 reproduction: {name} = {target} +/- {tolerance}"):
        for scheme in ("even", "A", "B", "C", "D"):
            cell = block["federated"].get(scheme, {})
            assert "f1" in cell, f"{name}/{scheme} produced no F1: {cell}"
            assert abs(cell["f1"] - target) <= tolerance, (
                f"{name}/{scheme}: F1 {cell['f1']:.3f} outside {target} +/- {tolerance}"
            )


@pytest.mark.parametrize("name", sorted(F1_TARGETS))
def test_criterion_3_partition_consistency(name, tmp_path_factory):
    block = _real_dataset_grid(name, tmp_path_factory)
    with criterion(f"3 partition consistency: {name}"):
        _assert_consistency(block)


def _assert_consistency(block, max_spread=0.03, local_slack=0.01):
    f1s = [
        cell["f1"] for cell in block["federated"].values() if isinstance(cell, dict) and "f1" in cell
    ]
    assert len(f1s) >= 2, "need at least two federated cells"
    spread = max(f1s) - min(f1s)
    assert spread <= max_spread, f"federated F1 spread {spread:.3f} > {max_spread}"
    local_avg = block["local_party_avg"]["f1"]
    assert local_avg is not None
    assert min(f1s) >= local_avg - local_slack, (
        f"federated F1 {min(f1s):.3f} below local average {local_avg:.3f} - {local_slack}"
    )


def test_criterion_3_synthetic_smoke_binary(tmp_path):
    # Stands in for the full-scale datasets that cannot ship with the repo:
    # same grid machinery, consistency-only assertions.
    with criterion("3s consistency smoke (synthetic binary, all schemes)"):
        whole = synthetic_binary(3000, seed=42)
        train, test = holdout_split(whole, 0.2, seed=7)
        config = ExperimentConfig(
            hyperparameters=Hyperparameters(rounds=40), seed=0
        )
        block = run_dataset_grid("smoke_binary", train, test, config, tmp_path)
        _assert_consistency(block)
        assert abs(block["centralized"]["f1"] - np.mean(
            [c["f1"] for c in block["federated"].values()]
        )) <= 0.03


def test_criterion_3_synthetic_smoke_multiclass(tmp_path):
    with criterion("3s consistency smoke (synthetic multiclass, all schemes)"):
        whole = synthetic_multiclass(2000, seed=43)
        train, test = holdout_split(whole, 0.2, seed=9)
        config = ExperimentConfig(
            hyperparameters=Hyperparameters(rounds=15), seed=0
        )
        block = run_dataset_grid("smoke_multiclass", train, test, config, tmp_path)
        _assert_consistency(block)


def test_criterion_3_bitcoin_subsample_smoke(tmp_path):
    prepared = DATA_DIR / "bitcoin"
    if not (prepared / "manifest.json").exists():
        pytest.skip(
            f"prepared bitcoin dataset not found under {DATA_DIR}; the full-scale "
            "cells are out of desk scope and the 50k-row smoke needs the raw data"
        )
    with criterion("3s consistency smoke (bitcoin, 50k-row subsample)"):
        train, test, _ = load_prepared(prepared)
        rng = np.random.default_rng(0)
        rows = np.sort(rng.choice(train.n_rows, size=50_000, replace=False))
        sample = train.subset(rows)
        config = ExperimentConfig(hyperparameters=Hyperparameters(rounds=20), seed=0)
        block = run_dataset_grid("bitcoin_smoke", sample, test, config, tmp_path)
        _assert_consistency(block)


# -- criterion 4: centralized equivalence ----------------------------------------


def test_criterion_4_centralized_equivalence():
    with criterion("4 single-party federated == centralized, byte-identical"):
        params = Hyperparameters(rounds=20, max_depth=5)
        for data in (synthetic_binary(2000, seed=1), synthetic_multiclass(900, seed=2)):
            central, _ = train_centralized(data, params)
            federated = run_training(
                [("party_1", data)], TrainingConfig(hyperparameters=params)
            )
            assert federated.ok, federated.error
            assert federated.model.canonical_json() == central.canonical_json()


# -- criterion 5: histogram-merge exactness ---------------------------------------


def test_criterion_5_histogram_merge_exactness():
    with criterion("5 merged histograms == centralized (counts exact, sums 1e-9)"):
        rng = np.random.default_rng(5)
        for trial in range(4):
            n = int(rng.integers(4000, 10001))
            m = int(rng.integers(3, 8))
            features = rng.normal(size=(n, m))
            margins = rng.normal(size=n)
            labels = rng.integers(0, 2, size=n)
            g, h = grad_hess(LossFunction("binary_logistic"), margins, labels)
            sketches = FeatureSketchSet.from_matrix(features, 0.01)
            candidates = [
                np.asarray(s.split_candidates(64)) for s in sketches.sketches
            ]
            binned = bin_features(features, candidates)
            n_buckets = bucket_counts(candidates)
            # Multi-node assignment: rows spread over several open nodes.
            assignment = rng.integers(0, 5, size=n).astype(np.int64)
            nodes = [0, 1, 2, 3, 4]
            whole = build_histograms(binned, g, h, assignment, nodes, n_buckets)

            proportions = rng.dirichlet(np.ones(5))
            boundaries = np.cumsum((proportions * n).astype(int))[:-1]
            order = rng.permutation(n)
            parts = np.split(order, boundaries)
            merged = None
            for rows in parts:
                rows = np.sort(rows)
                part = build_histograms(
                    binned[rows], g[rows], h[rows], assignment[rows], nodes, n_buckets
                )
                if merged is None:
                    merged = part
                else:
                    for nid in nodes:
                        merged[nid].merge_from(part[nid])
            for nid in nodes:
                for f in range(m):
                    assert np.array_equal(merged[nid].count[f], whole[nid].count[f])
                    np.testing.assert_allclose(
                        merged[nid].grad[f], whole[nid].grad[f], atol=1e-9
                    )
                    np.testing.assert_allclose(
                        merged[nid].hess[f], whole[nid].hess[f], atol=1e-9
                    )


# -- criterion 6: exact-greedy oracle -----------------------------------------------


def _brute_force_best_split(features, g, h, params):
    def score(gs, hs):
        denom = hs + params.reg_lambda
        return gs * gs / denom if denom > 0 else 0.0

    g_total, h_total = g.sum(), h.sum()
    parent = score(g_total, h_total)
    best, best_gain = None, 0.0
    for f in range(features.shape[1]):
        for t in np.unique(features[:, f]):
            left = features[:, f] <= t
            gl, hl = g[left].sum(), h[left].sum()
            gain = 0.5 * (score(gl, hl) + score(g_total - gl, h_total - hl) - parent)
            gain -= params.gamma
            if gain > best_gain:
                best_gain, best = gain, (f, float(t), float(gain))
    return best


def test_criterion_6_exact_greedy_oracle():
    with criterion("6 find_best_split == brute force on 20 random datasets"):
        rng = np.random.default_rng(6)
        checked = 0
        for seed in range(20):
            local = np.random.default_rng(seed)
            n = int(local.integers(20, 201))
            m = int(local.integers(2, 7))
            features = local.normal(size=(n, m))
            margins = local.normal(size=n)
            labels = local.integers(0, 2, size=n)
            g, h = grad_hess(LossFunction("binary_logistic"), margins, labels)
            params = Hyperparameters(
                reg_lambda=float(local.choice([0.0, 0.1, 1.0])),
                gamma=float(local.choice([0.0, 0.2])),
            )
            candidates = [np.unique(features[:, f]) for f in range(m)]
            binned = bin_features(features, candidates)
            hists = build_histograms(
                binned, g, h, np.zeros(n, dtype=np.int64), [0], bucket_counts(candidates)
            )
            decision = find_best_split(hists[0], candidates, params)
            expected = _brute_force_best_split(features, g, h, params)
            if expected is None:
                assert decision is None
            else:
                assert decision is not None
                assert decision.feature == expected[0]
                assert decision.threshold == expected[1]
                assert abs(decision.gain - expected[2]) <= 1e-9
            checked += 1
        assert checked >= 20


# -- criterion 7: sketch guarantee ----------------------------------------------------


def test_criterion_7_sketch_guarantee():
    with criterion("7 sketch deciles within 0.01 over 100 columns; merges match"):
        rng = np.random.default_rng(7)
        delta = 0.01
        deciles = np.arange(0.1, 1.0, 0.1)
        for column_index in range(100):
            kind = column_index % 3
            n = int(rng.integers(500, 3000))
            if kind == 0:
                values = rng.uniform(-100.0, 100.0, size=n)
            elif kind == 1:
                values = rng.lognormal(mean=0.5, sigma=1.5, size=n)
            else:
                values = rng.zipf(2.0, size=n).astype(np.float64)
            sketch = QuantileSketch(delta)
            sketch.insert_many(values)
            for q in deciles:
                truth = exact_quantile(values, q)
                estimate = sketch.quantile(q)
                assert abs(estimate - truth) <= delta * abs(truth) + 1e-9, (
                    column_index, q, estimate, truth
                )
            if column_index % 10 == 0:
                merged = QuantileSketch(delta)
                for part in np.array_split(values, 5):
                    piece = QuantileSketch(delta)
                    piece.insert_many(part)
                    merged.merge_from(piece)
                assert merged == sketch
                for q in deciles:
                    single = sketch.quantile(q)
                    assert abs(merged.quantile(q) - single) <= delta * abs(single)


# -- criterion 8: gradient/Hessian finite differences -----------------------------------


def test_criterion_8_finite_difference_checks():
    with criterion("8 grad/hess finite differences: 1e-6 / 1e-4, 1000 probes each"):
        rng = np.random.default_rng(8)
        eps = 1e-5

        # Binary logistic: 1000 probes.
        margins = rng.uniform(-5, 5, size=1000)
        labels = rng.integers(0, 2, size=1000)
        loss = LossFunction("binary_logistic")
        g, h = grad_hess(loss, margins, labels)

        def binary_loss(m, y):
            return np.logaddexp(0.0, m) - y * m

        for i in range(1000):
            up = binary_loss(margins[i] + eps, labels[i])
            down = binary_loss(margins[i] - eps, labels[i])
            mid = binary_loss(margins[i], labels[i])
            assert abs(g[i] - (up - down) / (2 * eps)) < 1e-6
            assert abs(h[i] - (up - 2 * mid + down) / eps**2) < 1e-4

        # Multiclass softmax: 250 rows x 4 classes = 1000 probes. The stored
        # Hessian is the GBDT convention 2*p*(1-p), twice the true diagonal.
        k = 4
        margins_mc = rng.uniform(-4, 4, size=(250, k))
        labels_mc = rng.integers(0, k, size=250)
        loss_mc = LossFunction("multiclass_softmax")
        g_mc, h_mc = grad_hess(loss_mc, margins_mc, labels_mc)

        def softmax_loss(m, y):
            shifted = m - m.max()
            return float(np.log(np.exp(shifted).sum()) + m.max() - m[y])

        for i in range(250):
            for c in range(k):
                bump = np.zeros(k)
                bump[c] = eps
                up = softmax_loss(margins_mc[i] + bump, labels_mc[i])
                down = softmax_loss(margins_mc[i] - bump, labels_mc[i])
                mid = softmax_loss(margins_mc[i], labels_mc[i])
                assert abs(g_mc[i, c] - (up - down) / (2 * eps)) < 1e-6
                assert abs(h_mc[i, c] - 2.0 * (up - 2 * mid + down) / eps**2) < 1e-4
