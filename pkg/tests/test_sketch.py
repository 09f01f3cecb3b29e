import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedboost.errors import EmptySketchError, IncompatibleSketchError, InvalidValueError
from fedboost.sketch import FeatureSketchSet, QuantileSketch, merge

DELTA = 0.01


def exact_quantile(values, q):
    """Sort oracle: rank = floor(q * (n - 1)) into the ascending order."""
    ordered = np.sort(np.asarray(values, dtype=np.float64))
    rank = int(np.floor(q * (len(ordered) - 1)))
    return ordered[rank]


def rel_err(estimate, truth):
    if truth == 0:
        return abs(estimate)
    return abs(estimate - truth) / abs(truth)


def build(values, delta=DELTA, max_bins=None):
    s = QuantileSketch(delta, max_bins=max_bins)
    s.insert_many(np.asarray(values, dtype=np.float64))
    return s


class TestInsert:
    def test_zero_routes_to_zero_count(self):
        s = QuantileSketch(DELTA)
        s.insert(0.0)
        assert s.zero_count == 1
        assert s.total_count == 1
        assert not s.positive_bins and not s.negative_bins

    def test_single_element_quantile(self):
        s = QuantileSketch(DELTA)
        s.insert(1.0)
        assert rel_err(s.quantile(0.5), 1.0) <= DELTA

    def test_insert_rejects_non_finite(self):
        s = QuantileSketch(DELTA)
        for bad in (float("nan"), float("inf"), float("-inf")):
            with pytest.raises(InvalidValueError):
                s.insert(bad)

    def test_total_count_matches_bucket_sums(self):
        rng = np.random.default_rng(0)
        values = rng.normal(size=500)
        values[:20] = 0.0
        s = build(values)
        assert s.total_count == sum(s.positive_bins.values()) + sum(
            s.negative_bins.values()
        ) + s.zero_count
        assert all(c > 0 for c in s.positive_bins.values())
        assert all(c > 0 for c in s.negative_bins.values())

    def test_p99_of_1_to_10000(self):
        values = np.arange(1, 10001, dtype=np.float64)
        s = build(values)
        truth = exact_quantile(values, 0.99)
        assert rel_err(s.quantile(0.99), truth) <= DELTA + 1e-9


class TestQuantile:
    def test_negative_single_value(self):
        s = build([-5.0])
        assert rel_err(s.quantile(0.5), -5.0) <= DELTA + 1e-9

    def test_all_zero_median_is_exact(self):
        s = build([0.0, 0.0, 0.0])
        assert s.quantile(0.5) == 0.0

    def test_empty_sketch_raises(self):
        with pytest.raises(EmptySketchError):
            QuantileSketch(DELTA).quantile(0.5)

    def test_out_of_range_fraction_raises(self):
        s = build([1.0])
        with pytest.raises(ValueError):
            s.quantile(1.5)
        with pytest.raises(ValueError):
            s.quantile(-0.1)

    def test_uniform_deciles_within_delta(self):
        rng = np.random.default_rng(7)
        values = rng.uniform(0.0, 1.0, size=1000)
        s = build(values)
        for q in np.arange(0.1, 1.0, 0.1):
            truth = exact_quantile(values, q)
            assert rel_err(s.quantile(q), truth) <= DELTA + 1e-9

    def test_mixed_sign_order(self):
        values = [-100.0, -1.0, 0.0, 1.0, 100.0]
        s = build(values)
        estimates = [s.quantile(q) for q in (0.0, 0.25, 0.5, 0.75, 1.0)]
        assert estimates == sorted(estimates)
        assert rel_err(estimates[0], -100.0) <= DELTA + 1e-9
        assert estimates[2] == 0.0
        assert rel_err(estimates[-1], 100.0) <= DELTA + 1e-9


class TestMerge:
    def test_merge_with_empty_is_identity(self):
        rng = np.random.default_rng(3)
        s = build(rng.lognormal(size=200))
        merged = merge(QuantileSketch(DELTA), s)
        assert merged == s

    def test_count_additivity(self):
        rng = np.random.default_rng(4)
        a = build(rng.normal(size=157))
        b = build(rng.normal(size=311))
        assert merge(a, b).total_count == a.total_count + b.total_count

    def test_mismatched_relative_error_rejected(self):
        with pytest.raises(IncompatibleSketchError):
            merge(build([1.0], delta=0.01), build([1.0], delta=0.02))

    def test_five_way_partition_matches_whole(self):
        rng = np.random.default_rng(5)
        values = rng.lognormal(size=2000)
        whole = build(values)
        parts = np.array_split(values, 5)
        merged = QuantileSketch(DELTA)
        for part in parts:
            merged.merge_from(build(part))
        # Bucket maps are identical, so quantiles agree not just within
        # delta but exactly.
        assert merged == whole
        for q in np.arange(0.1, 1.0, 0.1):
            assert rel_err(merged.quantile(q), exact_quantile(values, q)) <= DELTA + 1e-9

    @given(st.lists(st.integers(0, 2), min_size=3, max_size=3), st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_merge_commutative_associative(self, sizes, seed):
        rng = np.random.default_rng(seed)
        sketches = [
            build(rng.normal(scale=10.0, size=50 + 40 * k)) for k in sizes
        ]
        a, b, c = sketches
        assert merge(a, b) == merge(b, a)
        assert merge(merge(a, b), c) == merge(a, merge(b, c))


class TestSplitCandidates:
    def test_constant_feature_single_candidate(self):
        s = build(np.full(400, 5.0))
        candidates = s.split_candidates(255)
        assert len(candidates) == 1
        assert rel_err(candidates[0], 5.0) <= DELTA + 1e-9

    def test_three_distinct_values_at_most_three(self):
        s = build(np.asarray([1.0, 10.0, 100.0] * 50))
        candidates = s.split_candidates(255)
        assert 1 <= len(candidates) <= 3
        assert candidates == sorted(candidates)

    def test_uniform_deciles(self):
        rng = np.random.default_rng(11)
        values = rng.uniform(0.0, 100.0, size=20000)
        s = build(values)
        candidates = s.split_candidates(9)
        assert len(candidates) == 9
        for k, cand in enumerate(candidates, start=1):
            truth = exact_quantile(values, k / 10)
            assert rel_err(cand, truth) <= DELTA + 1e-9

    def test_empty_sketch_yields_no_candidates(self):
        assert QuantileSketch(DELTA).split_candidates(255) == []

    def test_strictly_increasing(self):
        rng = np.random.default_rng(12)
        s = build(rng.integers(0, 10, size=300).astype(float))
        candidates = s.split_candidates(255)
        assert all(a < b for a, b in zip(candidates, candidates[1:]))


@given(
    st.sampled_from(["uniform", "lognormal", "integers"]),
    st.integers(10, 400),
    st.integers(0, 2**32 - 1),
)
@settings(max_examples=40, deadline=None)
def test_relative_error_guarantee_property(kind, n, seed):
    rng = np.random.default_rng(seed)
    if kind == "uniform":
        values = rng.uniform(-50.0, 50.0, size=n)
    elif kind == "lognormal":
        values = rng.lognormal(mean=1.0, sigma=2.0, size=n)
    else:
        values = rng.integers(-1000, 1000, size=n).astype(np.float64)
    s = build(values)
    for q in (0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0):
        truth = exact_quantile(values, q)
        estimate = s.quantile(q)
        if truth == 0.0:
            assert estimate == 0.0
        else:
            assert rel_err(estimate, truth) <= DELTA + 1e-9


def test_serialization_round_trip():
    rng = np.random.default_rng(13)
    values = np.concatenate([rng.normal(size=300), np.zeros(17)])
    s = build(values)
    restored = QuantileSketch.from_json(s.to_json())
    assert restored == s
    assert restored.total_count == s.total_count


def test_serialization_rejects_unknown_format():
    record = build([1.0]).to_dict()
    record["format"] = "something-else/9"
    with pytest.raises(InvalidValueError):
        QuantileSketch.from_dict(record)


def test_max_bins_bound_holds_after_collapse():
    rng = np.random.default_rng(14)
    values = rng.lognormal(mean=0.0, sigma=4.0, size=5000)
    s = build(values, max_bins=64)
    assert len(s.positive_bins) + len(s.negative_bins) <= 64
    assert s.total_count == 5000
    # Collapsing folds low-magnitude buckets, so the upper tail stays sharp.
    truth = exact_quantile(values, 0.99)
    assert rel_err(s.quantile(0.99), truth) <= DELTA + 1e-9


def test_feature_sketch_set_roundtrip_and_merge():
    rng = np.random.default_rng(15)
    features = rng.normal(size=(200, 4))
    whole = FeatureSketchSet.from_matrix(features, DELTA)
    parts = np.array_split(np.arange(200), 3)
    merged = FeatureSketchSet.from_matrix(features[parts[0]], DELTA)
    for rows in parts[1:]:
        merged.merge_from(FeatureSketchSet.from_matrix(features[rows], DELTA))
    assert merged.num_features == whole.num_features
    for a, b in zip(merged.sketches, whole.sketches):
        assert a == b
    restored = FeatureSketchSet.from_dicts(whole.to_dicts())
    for a, b in zip(restored.sketches, whole.sketches):
        assert a == b


def test_feature_sketch_set_feature_count_mismatch():
    rng = np.random.default_rng(16)
    a = FeatureSketchSet.from_matrix(rng.normal(size=(10, 3)), DELTA)
    b = FeatureSketchSet.from_matrix(rng.normal(size=(10, 4)), DELTA)
    with pytest.raises(IncompatibleSketchError):
        a.merge_from(b)
