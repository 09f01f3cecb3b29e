"""Tabular data ingestion, holdout splitting, and the sample-skew partitioner.

The partitioner reproduces the five-party imbalance schemes exactly: starting
from an even deal, each reallocation round moves a fixed fraction of party
j+1's rows to party j, with fractions (1/2, 3/4, 5/8, 9/16) applied top-down
and every moved count computed from the donor's size at the start of the
round via round-half-to-even. Those conventions were locked in arithmetically
against the published per-party counts for all seven benchmark datasets.
"""

import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

from .errors import (
    DatasetLoadError,
    InfeasiblePartitionError,
    PreparationError,
    UnsupportedSchemeError,
)
from .seeding import derive_seed

PARTITION_FORMAT = "fedboost-partition/1"
MANIFEST_FORMAT = "fedboost-dataset/1"

# Fractions of the donor party moved per reallocation step, top-down:
# party 2 -> 1, then 3 -> 2, then 4 -> 3, then 5 -> 4.
REALLOCATION_FRACTIONS = (Fraction(1, 2), Fraction(3, 4), Fraction(5, 8), Fraction(9, 16))

SCHEMES = ("even", "A", "B", "C", "D")
_REALLOCATION_ROUNDS = {"even": 0, "A": 1, "B": 2, "C": 3, "D": 4}


@dataclass
class DatasetMatrix:
    """Dense tabular dataset: rows x features plus integer class labels."""

    features: np.ndarray
    labels: np.ndarray
    feature_names: list[str]
    task: str
    num_class: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DatasetLoadError("features must be a 2-d matrix")
        if len(self.labels) != self.features.shape[0]:
            raise DatasetLoadError(
                f"label count {len(self.labels)} != row count {self.features.shape[0]}"
            )
        if len(self.feature_names) != self.features.shape[1]:
            raise DatasetLoadError("feature_names length must match feature columns")
        if self.task not in ("binary", "multiclass"):
            raise DatasetLoadError(f"unknown task {self.task!r}")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_class):
            raise DatasetLoadError("labels must lie in [0, num_class)")
        if self.features.size and bool(np.isnan(self.features).all(axis=0).any()):
            raise DatasetLoadError("a feature column is entirely missing")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, rows: np.ndarray) -> "DatasetMatrix":
        return DatasetMatrix(
            self.features[rows],
            self.labels[rows],
            self.feature_names,
            self.task,
            self.num_class,
        )

    def label_histogram(self) -> list[int]:
        return np.bincount(self.labels, minlength=self.num_class).astype(int).tolist()


@dataclass
class ColumnSchema:
    """How to interpret a raw CSV: label column, categoricals, drop rules."""

    label_column: str
    categorical_columns: list[str] = field(default_factory=list)
    drop_columns: list[str] = field(default_factory=list)
    drop_duplicate_rows: bool = False
    dedup_key: str | None = None
    keep_top_label_classes: int | None = None
    separator: str = ","
    has_header: bool = True
    column_names: list[str] | None = None
    skip_rows: int = 0


def _encode_labels(raw: pd.Series) -> tuple[np.ndarray, list]:
    """Map raw label values to 0-based codes, ordered by sorted value."""
    classes = sorted(raw.unique(), key=str)
    mapping = {value: code for code, value in enumerate(classes)}
    return raw.map(mapping).to_numpy(dtype=np.int64), classes


def load_csv(path: str | Path, schema: ColumnSchema) -> DatasetMatrix:
    """Load a CSV into a dense numeric matrix with label-encoded categoricals."""
    path = Path(path)
    if not path.exists():
        raise DatasetLoadError(f"no such file: {path}")
    frame = pd.read_csv(
        path,
        sep=schema.separator,
        header=0 if schema.has_header else None,
        names=schema.column_names,
        skiprows=schema.skip_rows,
    )
    if not schema.has_header and schema.column_names is None:
        frame.columns = [f"f{i}" for i in range(frame.shape[1] - 1)] + ["label"]
    if schema.label_column not in frame.columns:
        raise DatasetLoadError(
            f"label column {schema.label_column!r} not present in {path.name} "
            f"(columns: {list(frame.columns)[:8]}...)"
        )

    if schema.dedup_key is not None:
        if schema.dedup_key not in frame.columns:
            raise DatasetLoadError(f"dedup key column {schema.dedup_key!r} missing")
        frame = frame.drop_duplicates(subset=schema.dedup_key, keep="first")
    if schema.drop_duplicate_rows:
        frame = frame.drop_duplicates()
    if schema.keep_top_label_classes is not None:
        top = (
            frame[schema.label_column]
            .value_counts()
            .nlargest(schema.keep_top_label_classes)
            .index
        )
        frame = frame[frame[schema.label_column].isin(top)]
    frame = frame.drop(columns=[c for c in schema.drop_columns if c in frame.columns])
    frame = frame.reset_index(drop=True)

    labels, classes = _encode_labels(frame[schema.label_column])
    num_class = len(classes)
    if num_class < 2:
        raise DatasetLoadError(f"need at least 2 label classes, found {num_class}")
    task = "binary" if num_class == 2 else "multiclass"

    feature_frame = frame.drop(columns=[schema.label_column])
    feature_names = [str(c) for c in feature_frame.columns]
    columns = []
    for name in feature_frame.columns:
        col = feature_frame[name]
        if name in schema.categorical_columns:
            codes, _ = _encode_labels(col.astype(str))
            columns.append(codes.astype(np.float64))
        else:
            numeric = pd.to_numeric(col, errors="coerce")
            bad = numeric.isna() & col.notna()
            if bad.any():
                row = int(bad.idxmax())
                raise DatasetLoadError(
                    f"unparseable value {col.iloc[row]!r} in column {name!r} at row "
                    f"{row}; declare the column categorical if it holds strings"
                )
            if numeric.isna().any():
                row = int(numeric.isna().idxmax())
                raise DatasetLoadError(f"missing value in column {name!r} at row {row}")
            columns.append(numeric.to_numpy(dtype=np.float64))
    features = np.column_stack(columns) if columns else np.empty((len(frame), 0))
    if features.shape[1] == 0:
        raise DatasetLoadError("dataset has no feature columns")
    return DatasetMatrix(features, labels, feature_names, task, num_class)


def holdout_split(
    data: DatasetMatrix, fraction: float, seed: int
) -> tuple[DatasetMatrix, DatasetMatrix]:
    """Split off a holdout set of roughly ``fraction`` of the rows.

    The training side gets exactly floor((1 - fraction) * n) rows, computed
    in exact rational arithmetic so sizes never drift off by one from float
    noise; that convention matches the published per-dataset training sizes.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"holdout fraction must be in (0, 1), got {fraction}")
    n = data.n_rows
    train_size = int((1 - Fraction(str(fraction))) * n)
    rng = np.random.default_rng(derive_seed(seed, "holdout"))
    order = rng.permutation(n)
    train_rows = np.sort(order[:train_size])
    test_rows = np.sort(order[train_size:])
    return data.subset(train_rows), data.subset(test_rows)


@dataclass(frozen=True)
class PartitionSpec:
    scheme: str
    num_parties: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise UnsupportedSchemeError(
                f"scheme must be one of {SCHEMES}, got {self.scheme!r}"
            )
        if self.scheme != "even" and self.num_parties != 5:
            raise UnsupportedSchemeError(
                f"scheme {self.scheme} is defined for 5 parties, got {self.num_parties}"
            )


@dataclass
class PartitionResult:
    """Per-party row-index lists over a training set."""

    party_indices: list[np.ndarray]

    @property
    def counts(self) -> list[int]:
        return [len(rows) for rows in self.party_indices]

    @property
    def num_parties(self) -> int:
        return len(self.party_indices)

    def to_manifest(self, scheme: str, seed: int) -> dict:
        return {
            "format": PARTITION_FORMAT,
            "scheme": scheme,
            "seed": seed,
            "num_parties": self.num_parties,
            "party_counts": self.counts,
            "party_indices": [rows.tolist() for rows in self.party_indices],
        }

    @classmethod
    def from_manifest(cls, manifest: dict) -> "PartitionResult":
        if manifest.get("format") != PARTITION_FORMAT:
            raise DatasetLoadError(
                f"unknown partition manifest format {manifest.get('format')!r}"
            )
        return cls([np.asarray(rows, dtype=np.int64) for rows in manifest["party_indices"]])


def round_half_even_product(count: int, fraction: Fraction) -> int:
    """round-half-to-even of count * fraction, in exact integer arithmetic."""
    scaled = count * fraction
    floor = scaled.numerator // scaled.denominator
    remainder = scaled - floor
    if remainder > Fraction(1, 2):
        return floor + 1
    if remainder < Fraction(1, 2):
        return floor
    return floor if floor % 2 == 0 else floor + 1


def partition_even(train: DatasetMatrix, parties: int, seed: int) -> PartitionResult:
    """Deal shuffled rows so the first (n mod parties) parties get one extra."""
    if parties < 1:
        raise UnsupportedSchemeError(f"need at least 1 party, got {parties}")
    n = train.n_rows
    if parties > n:
        raise InfeasiblePartitionError(f"cannot split {n} rows across {parties} parties")
    rng = np.random.default_rng(derive_seed(seed, "partition"))
    order = rng.permutation(n)
    quotient, remainder = divmod(n, parties)
    slices = []
    start = 0
    for i in range(parties):
        size = quotient + (1 if i < remainder else 0)
        slices.append(np.sort(order[start : start + size]))
        start += size
    return PartitionResult(slices)


def reallocate_once(
    partition: PartitionResult, rng: np.random.Generator
) -> PartitionResult:
    """Apply one skew round: move f_j of party j+1's rows to party j, top-down.

    Each moved count uses the donor's size at the start of the round; a donor
    hands rows away before it receives any, so its pool at its turn is exactly
    its pre-round membership.
    """
    if partition.num_parties != 5:
        raise UnsupportedSchemeError(
            f"reallocation is defined for 5 parties, got {partition.num_parties}"
        )
    pools = [rows.copy() for rows in partition.party_indices]
    pre_round_counts = [len(rows) for rows in pools]
    for j, frac in enumerate(REALLOCATION_FRACTIONS):
        moved_count = round_half_even_product(pre_round_counts[j + 1], frac)
        donor = pools[j + 1]
        chosen = rng.choice(len(donor), size=moved_count, replace=False)
        mask = np.zeros(len(donor), dtype=bool)
        mask[chosen] = True
        pools[j] = np.sort(np.concatenate([pools[j], donor[mask]]))
        pools[j + 1] = donor[~mask]
    return PartitionResult([np.sort(rows) for rows in pools])


def make_partition(
    train: DatasetMatrix,
    spec: PartitionSpec,
    check_label_coverage: bool = True,
) -> PartitionResult:
    """Materialize a partition scheme: even, or even plus 1-4 skew rounds.

    Raises InfeasiblePartitionError when any party slice could not join
    training: fewer rows than classes, or (for multiclass tasks, when
    checked) a class entirely missing from some party, which is what rules
    out the most extreme scheme on datasets with very rare classes. Binary
    slices missing a class only log a warning; a single-class binary slice
    still produces valid gradient aggregates.
    """
    result = partition_even(train, spec.num_parties, spec.seed)
    rng = np.random.default_rng(derive_seed(spec.seed, "reallocate"))
    for _ in range(_REALLOCATION_ROUNDS[spec.scheme]):
        result = reallocate_once(result, rng)
    for party, rows in enumerate(result.party_indices, start=1):
        if len(rows) < train.num_class:
            raise InfeasiblePartitionError(
                f"scheme {spec.scheme}: party {party} would hold {len(rows)} rows, "
                f"fewer than the {train.num_class} label classes"
            )
        if check_label_coverage:
            present = np.unique(train.labels[rows])
            if len(present) < train.num_class:
                missing = sorted(set(range(train.num_class)) - set(present.tolist()))
                if train.task == "multiclass":
                    raise InfeasiblePartitionError(
                        f"scheme {spec.scheme}: party {party} would hold no rows of "
                        f"class(es) {missing}; every party needs all "
                        f"{train.num_class} labels"
                    )
                logger.warning(
                    "scheme %s: party %s holds no rows of class(es) %s",
                    spec.scheme, party, missing,
                )
    return result


# -- dataset recipes and preparation ----------------------------------------


def load_recipe(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DatasetLoadError(f"no such recipe: {path}")
    with open(path) as handle:
        recipe = json.load(handle)
    for key in ("name", "label_column", "source_url", "raw_file"):
        if key not in recipe:
            raise DatasetLoadError(f"recipe {path.name} is missing {key!r}")
    return recipe


def schema_from_recipe(recipe: dict) -> ColumnSchema:
    return ColumnSchema(
        label_column=recipe["label_column"],
        categorical_columns=recipe.get("categorical_columns", []),
        drop_columns=recipe.get("drop_columns", []),
        drop_duplicate_rows=recipe.get("drop_duplicate_rows", False),
        dedup_key=recipe.get("dedup_key"),
        keep_top_label_classes=recipe.get("keep_top_label_classes"),
        separator=recipe.get("separator", ","),
        has_header=recipe.get("has_header", True),
        column_names=recipe.get("column_names"),
        skip_rows=recipe.get("skip_rows", 0),
    )


def write_matrix_csv(data: DatasetMatrix, path: Path) -> None:
    frame = pd.DataFrame(data.features, columns=data.feature_names)
    frame["label"] = data.labels
    frame.to_csv(path, index=False)


def read_matrix_csv(path: str | Path, task: str, num_class: int) -> DatasetMatrix:
    frame = pd.read_csv(path)
    labels = frame.pop("label").to_numpy(dtype=np.int64)
    return DatasetMatrix(
        frame.to_numpy(dtype=np.float64), labels, [str(c) for c in frame.columns],
        task, num_class,
    )


def prepare_dataset(
    recipe: dict,
    raw_path: str | Path,
    out_dir: str | Path,
    holdout_fraction: float = 0.2,
    seed: int = 0,
) -> dict:
    """Encode a raw CSV per its recipe, split off the holdout, write both.

    Produces ``train.csv``, ``test.csv`` and a ``manifest.json`` recording row
    counts and the label histogram. Mismatches against the recipe's expected
    shape raise PreparationError.
    """
    raw_path = Path(raw_path)
    if not raw_path.exists():
        raise PreparationError(
            f"raw file {raw_path} not found; fetch it from {recipe['source_url']} "
            f"(expected file name: {recipe['raw_file']})"
        )
    data = load_csv(raw_path, schema_from_recipe(recipe))
    for key, actual in (
        ("expected_rows", data.n_rows),
        ("expected_features", data.n_features),
        ("expected_classes", data.num_class),
    ):
        expected = recipe.get(key)
        if expected is not None and expected != actual:
            raise PreparationError(
                f"{recipe['name']}: {key}={expected} but prepared data has {actual}"
            )
    train, test = holdout_split(data, holdout_fraction, seed)
    expected_train = recipe.get("expected_train_rows")
    if expected_train is not None and expected_train != train.n_rows:
        raise PreparationError(
            f"{recipe['name']}: expected_train_rows={expected_train} "
            f"but split produced {train.n_rows}"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(train, out_dir / "train.csv")
    write_matrix_csv(test, out_dir / "test.csv")
    manifest = {
        "format": MANIFEST_FORMAT,
        "name": recipe["name"],
        "task": data.task,
        "num_class": data.num_class,
        "rows": data.n_rows,
        "train_rows": train.n_rows,
        "test_rows": test.n_rows,
        "holdout_fraction": holdout_fraction,
        "seed": seed,
        "feature_names": data.feature_names,
        "label_histogram": data.label_histogram(),
        "train_label_histogram": train.label_histogram(),
    }
    with open(out_dir / "manifest.json", "w") as handle:
        json.dump(manifest, handle, indent=2)
    return manifest


def load_prepared(prepared_dir: str | Path) -> tuple[DatasetMatrix, DatasetMatrix, dict]:
    """Load the train/test pair written by prepare_dataset."""
    prepared_dir = Path(prepared_dir)
    manifest_path = prepared_dir / "manifest.json"
    if not manifest_path.exists():
        raise DatasetLoadError(f"no manifest.json under {prepared_dir}")
    with open(manifest_path) as handle:
        manifest = json.load(handle)
    train = read_matrix_csv(prepared_dir / "train.csv", manifest["task"], manifest["num_class"])
    test = read_matrix_csv(prepared_dir / "test.csv", manifest["task"], manifest["num_class"])
    return train, test, manifest
