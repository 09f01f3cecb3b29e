"""Mergeable quantile sketches with a relative-error guarantee.

A sketch maps each value to a logarithmically spaced bucket and only keeps
bucket counts, so it answers quantile queries within a configurable relative
error while staying small and cheap to ship over the wire. Because bucket
boundaries depend only on the error parameter, two sketches built with the
same parameter merge by adding counts bucket-for-bucket; the merge of
sketches over a partitioned column is identical to the sketch of the whole
column. That property is what lets parties summarize local feature
distributions once and an aggregator fuse them into one surrogate
representation without ever seeing raw rows.

For a value x > 0 with error parameter d, the bucket index is
ceil(log_gamma(x)) with gamma = (1 + d) / (1 - d); bucket i covers
(gamma**(i-1), gamma**i] and is reported as its geometric midpoint
2 * gamma**i / (gamma + 1), which keeps the worst-case relative error at d.
Negative values go to a mirrored bucket store keyed on |x|, and exact zeros
are counted separately.
"""

import json
import math

import numpy as np

from .errors import EmptySketchError, IncompatibleSketchError, InvalidValueError

SKETCH_FORMAT = "fedboost-sketch/1"


class QuantileSketch:
    """Log-bucketed histogram of one numeric column.

    Attributes:
        relative_error: guaranteed bound on |estimate - x| / |x| for any
            inserted x != 0, as long as no bucket collapsing occurred.
        log_base: the bucket growth factor gamma = (1 + d) / (1 - d).
        positive_bins: sparse map bucket index -> count for values > 0.
        negative_bins: sparse map bucket index -> count for values < 0,
            keyed by the bucket index of |x|.
        zero_count: number of exactly-zero insertions.
        total_count: total insertions across all buckets plus zeros.
        max_bins: optional cap on stored buckets; when exceeded, the
            lowest-magnitude buckets are folded into their neighbors so
            accuracy is preserved at the distribution tails.
    """

    def __init__(self, relative_error: float = 0.01, max_bins: int | None = None):
        if not 0.0 < relative_error < 1.0:
            raise ValueError(f"relative_error must be in (0, 1), got {relative_error}")
        if max_bins is not None and max_bins < 1:
            raise ValueError(f"max_bins must be >= 1, got {max_bins}")
        self.relative_error = relative_error
        self.log_base = (1.0 + relative_error) / (1.0 - relative_error)
        self._ln_gamma = math.log(self.log_base)
        self.positive_bins: dict[int, int] = {}
        self.negative_bins: dict[int, int] = {}
        self.zero_count = 0
        self.total_count = 0
        self.max_bins = max_bins

    # -- bucket mapping -----------------------------------------------------

    def bucket_index(self, value: float) -> int:
        """Bucket index of a strictly positive value."""
        return math.ceil(math.log(value) / self._ln_gamma)

    def bucket_midpoint(self, index: int) -> float:
        """Geometric midpoint of bucket ``index`` on the positive axis."""
        return 2.0 * self.log_base**index / (self.log_base + 1.0)

    # -- construction -------------------------------------------------------

    def insert(self, value: float) -> None:
        """Insert one value, routing by sign; rejects non-finite input."""
        if not (isinstance(value, (int, float)) and math.isfinite(value)):
            raise InvalidValueError(f"cannot insert non-finite value {value!r}")
        self.insert_many(np.asarray([value], dtype=np.float64))

    def insert_many(self, values: np.ndarray) -> None:
        """Insert a column of values in one vectorized pass."""
        values = np.asarray(values, dtype=np.float64).ravel()
        if values.size == 0:
            return
        if not np.isfinite(values).all():
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise InvalidValueError(
                f"cannot insert non-finite value {values[bad]!r} at position {bad}"
            )
        zeros = int(np.count_nonzero(values == 0.0))
        for bins, group in (
            (self.positive_bins, values[values > 0.0]),
            (self.negative_bins, -values[values < 0.0]),
        ):
            if group.size == 0:
                continue
            indexes = np.ceil(np.log(group) / self._ln_gamma).astype(np.int64)
            uniq, counts = np.unique(indexes, return_counts=True)
            for i, c in zip(uniq.tolist(), counts.tolist()):
                bins[i] = bins.get(i, 0) + c
        self.zero_count += zeros
        self.total_count += int(values.size)
        self._collapse_if_needed()

    def _collapse_if_needed(self) -> None:
        if self.max_bins is None:
            return
        while len(self.positive_bins) + len(self.negative_bins) > self.max_bins:
            # Collapse the lowest-magnitude stored bucket (closest to zero),
            # folding it into the next-lowest index of its own store.
            candidates = []
            if len(self.positive_bins) >= 2:
                candidates.append((min(self.positive_bins), self.positive_bins))
            if len(self.negative_bins) >= 2:
                candidates.append((min(self.negative_bins), self.negative_bins))
            if not candidates:
                break
            low, bins = min(candidates, key=lambda item: item[0])
            count = bins.pop(low)
            target = min(bins)
            bins[target] += count

    # -- queries ------------------------------------------------------------

    def quantile(self, q: float) -> float:
        """Estimate the q-quantile.

        Uses the rank convention rank = floor(q * (count - 1)) and scans
        buckets in ascending value order: negatives from the most negative,
        then zeros, then positives.
        """
        if not 0.0 <= q <= 1.0:
            raise ValueError(f"quantile fraction must be in [0, 1], got {q}")
        if self.total_count == 0:
            raise EmptySketchError("cannot query an empty sketch")
        rank = math.floor(q * (self.total_count - 1))
        cumulative = 0
        for index in sorted(self.negative_bins, reverse=True):
            cumulative += self.negative_bins[index]
            if rank < cumulative:
                return -self.bucket_midpoint(index)
        cumulative += self.zero_count
        if rank < cumulative:
            return 0.0
        for index in sorted(self.positive_bins):
            cumulative += self.positive_bins[index]
            if rank < cumulative:
                return self.bucket_midpoint(index)
        # Unreachable unless counts were corrupted; return the largest value.
        return self.bucket_midpoint(max(self.positive_bins))

    def split_candidates(self, max_candidates: int) -> list[float]:
        """Deduplicated, strictly increasing quantiles at k / (max + 1).

        These become the per-feature bucket boundaries for gradient binning.
        An empty sketch yields an empty list (the feature carries no split
        candidates).
        """
        if max_candidates < 1:
            raise ValueError(f"max_candidates must be >= 1, got {max_candidates}")
        if self.total_count == 0:
            return []
        candidates: list[float] = []
        for k in range(1, max_candidates + 1):
            value = self.quantile(k / (max_candidates + 1))
            if not candidates or value > candidates[-1]:
                candidates.append(value)
        return candidates

    # -- merge & serialization ----------------------------------------------

    def merge_from(self, other: "QuantileSketch") -> None:
        """Add another sketch's buckets into this one (index-wise sums)."""
        if other.relative_error != self.relative_error:
            raise IncompatibleSketchError(
                "cannot merge sketches with relative errors "
                f"{self.relative_error} and {other.relative_error}"
            )
        for index, count in other.positive_bins.items():
            self.positive_bins[index] = self.positive_bins.get(index, 0) + count
        for index, count in other.negative_bins.items():
            self.negative_bins[index] = self.negative_bins.get(index, 0) + count
        self.zero_count += other.zero_count
        self.total_count += other.total_count
        self._collapse_if_needed()

    def to_dict(self) -> dict:
        return {
            "format": SKETCH_FORMAT,
            "relative_error": self.relative_error,
            "zero_count": self.zero_count,
            "positive_bins": sorted(self.positive_bins.items()),
            "negative_bins": sorted(self.negative_bins.items()),
            "max_bins": self.max_bins,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "QuantileSketch":
        if record.get("format") != SKETCH_FORMAT:
            raise InvalidValueError(
                f"unknown sketch format tag {record.get('format')!r}"
            )
        sketch = cls(record["relative_error"], max_bins=record.get("max_bins"))
        sketch.positive_bins = {int(i): int(c) for i, c in record["positive_bins"]}
        sketch.negative_bins = {int(i): int(c) for i, c in record["negative_bins"]}
        sketch.zero_count = int(record["zero_count"])
        sketch.total_count = (
            sum(sketch.positive_bins.values())
            + sum(sketch.negative_bins.values())
            + sketch.zero_count
        )
        return sketch

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, payload: str) -> "QuantileSketch":
        return cls.from_dict(json.loads(payload))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, QuantileSketch)
            and self.relative_error == other.relative_error
            and self.positive_bins == other.positive_bins
            and self.negative_bins == other.negative_bins
            and self.zero_count == other.zero_count
            and self.total_count == other.total_count
        )

    def __repr__(self) -> str:
        return (
            f"QuantileSketch(relative_error={self.relative_error}, "
            f"total_count={self.total_count}, "
            f"bins={len(self.positive_bins) + len(self.negative_bins)})"
        )


def merge(a: QuantileSketch, b: QuantileSketch) -> QuantileSketch:
    """Merge two sketches into a new one; inputs stay untouched."""
    merged = QuantileSketch(a.relative_error, max_bins=a.max_bins)
    merged.merge_from(a)
    merged.merge_from(b)
    return merged


class FeatureSketchSet:
    """One sketch per feature column, all sharing the same relative error."""

    def __init__(self, sketches: list[QuantileSketch]):
        if sketches:
            errors = {s.relative_error for s in sketches}
            if len(errors) > 1:
                raise IncompatibleSketchError(
                    f"feature sketches disagree on relative error: {sorted(errors)}"
                )
        self.sketches = sketches

    @classmethod
    def from_matrix(
        cls,
        features: np.ndarray,
        relative_error: float = 0.01,
        max_bins: int | None = None,
    ) -> "FeatureSketchSet":
        """Build one sketch per column of a dense feature matrix."""
        features = np.asarray(features, dtype=np.float64)
        sketches = []
        for column in range(features.shape[1]):
            sketch = QuantileSketch(relative_error, max_bins=max_bins)
            sketch.insert_many(features[:, column])
            sketches.append(sketch)
        return cls(sketches)

    @property
    def num_features(self) -> int:
        return len(self.sketches)

    @property
    def relative_error(self) -> float:
        if not self.sketches:
            raise EmptySketchError("sketch set has no features")
        return self.sketches[0].relative_error

    def merge_from(self, other: "FeatureSketchSet") -> None:
        if other.num_features != self.num_features:
            raise IncompatibleSketchError(
                f"feature counts differ: {self.num_features} vs {other.num_features}"
            )
        for mine, theirs in zip(self.sketches, other.sketches):
            mine.merge_from(theirs)

    def split_candidates(self, max_candidates: int) -> list[list[float]]:
        return [s.split_candidates(max_candidates) for s in self.sketches]

    def to_dicts(self) -> list[dict]:
        return [s.to_dict() for s in self.sketches]

    @classmethod
    def from_dicts(cls, records: list[dict]) -> "FeatureSketchSet":
        return cls([QuantileSketch.from_dict(r) for r in records])
