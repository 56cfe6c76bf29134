"""Tabular data ingestion and synthetic bias benchmarks.

CSV loading is schema-driven: the caller declares feature columns
(numeric or categorical), one label column and any sensitive-attribute
columns.  Categorical features are one-hot encoded over their observed
levels; numeric features are standardized.  Standardization statistics
always come from the training portion: ``split`` recomputes them on the
train side and applies them to both sides (standardizing an already
standardized column is an affine map, so composing with the
whole-file statistics used at load time is exact).

The synthetic generator plants a controlled majority/minority conflict:
a shared linear ground truth that the minority deviates from.  For
regression the minority's targets are shifted additively.  For the
classification tasks the minority's label-generating logit is
interpolated away from the shared rule: shift 0 keeps the shared
boundary, shift 1 degenerates to coin flips, shift 2 is the exactly
flipped boundary (labels anti-correlated with the majority's at every
point), which no single model can serve well on both sides.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataError
from .nnet import TASKS, Batch

logger = logging.getLogger(__name__)

COLUMN_KINDS = ("numeric", "categorical")
SYNTH_TASKS = ("regression_mse", "binary_bce", "logistic_regression_mse")


@dataclass(frozen=True)
class DatasetSchema:
    feature_columns: tuple
    label_column: str
    sensitive_columns: tuple
    task: str

    def __post_init__(self):
        object.__setattr__(self, "feature_columns", tuple((str(n), str(k)) for n, k in self.feature_columns))
        object.__setattr__(self, "sensitive_columns", tuple(str(s) for s in self.sensitive_columns))
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if not self.feature_columns:
            raise ConfigError("schema needs at least one feature column")
        names = [n for n, _ in self.feature_columns]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate feature column names")
        for n, k in self.feature_columns:
            if k not in COLUMN_KINDS:
                raise ConfigError(f"column {n!r} has unknown kind {k!r}")
        if self.label_column in names:
            raise ConfigError("label column cannot also be a feature")


@dataclass(frozen=True)
class EncodedColumn:
    """Where one schema column landed in the encoded feature matrix."""

    name: str
    kind: str
    start: int
    width: int
    levels: tuple = ()


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # [n, d] float64, encoded
    targets: np.ndarray   # [n] float64
    sensitive: dict       # name -> raw value array [n]
    columns: tuple        # EncodedColumn per schema feature column
    task: str
    norm_stats: dict | None = None   # numeric column name -> (mean, std) used
    rejected_rows: int = 0

    def __post_init__(self):
        if self.features.ndim != 2 or len(self.features) != len(self.targets):
            raise DataError("features/targets misaligned")
        for name, vals in self.sensitive.items():
            if len(vals) != len(self.targets):
                raise DataError(f"sensitive column {name!r} misaligned")

    @property
    def n(self) -> int:
        return len(self.targets)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


def take_batch(dataset: Dataset, indices) -> Batch:
    """Row subset as a training batch; example ids are the row indices."""
    idx = np.asarray(indices, dtype=np.int64)
    return Batch(
        features=dataset.features[idx],
        targets=dataset.targets[idx],
        example_ids=idx,
    )


def decode_categorical(dataset: Dataset, name: str) -> np.ndarray:
    """Recover the original level of a one-hot encoded column per example."""
    for col in dataset.columns:
        if col.name == name:
            if col.kind != "categorical":
                raise ConfigError(f"column {name!r} is not categorical")
            block = dataset.features[:, col.start : col.start + col.width]
            return np.asarray(col.levels, dtype=object)[block.argmax(axis=1)]
    raise ConfigError(f"no encoded column named {name!r}")


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def _parse_label(raw_labels: list, task: str) -> np.ndarray:
    """Labels as float targets; non-numeric classification labels are
    mapped onto sorted distinct levels."""
    try:
        vals = np.array([float(v) for v in raw_labels], dtype=np.float64)
    except ValueError:
        if task == "regression_mse":
            raise DataError("regression labels must be numeric")
        levels = sorted(set(raw_labels))
        lookup = {lv: i for i, lv in enumerate(levels)}
        vals = np.array([lookup[v] for v in raw_labels], dtype=np.float64)
    if task in ("binary_bce", "logistic_regression_mse"):
        if not np.all((vals == 0.0) | (vals == 1.0)):
            raise DataError(f"{task} labels must encode to exactly {{0, 1}}")
    if task == "multiclass_ce":
        if np.any(vals != np.round(vals)) or vals.min() < 0:
            raise DataError("multiclass labels must be non-negative integers")
    return vals


def load_csv(path, schema: DatasetSchema) -> Dataset:
    """Read a UTF-8 comma-separated file against the schema.

    Rows with a missing value, or a non-numeric entry in a numeric
    column, are dropped (and counted on the returned dataset).  Numeric
    features are standardized with the file's own population statistics;
    ``split`` later re-anchors them to the train side.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        needed = [n for n, _ in schema.feature_columns]
        needed.append(schema.label_column)
        needed.extend(schema.sensitive_columns)
        missing = [c for c in needed if c not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")

        kept_raw = []
        rejected = 0
        for row in reader:
            cells = {c: (row[c] or "").strip() for c in needed}
            if any(v == "" for v in cells.values()):
                rejected += 1
                continue
            ok = True
            for name, kind in schema.feature_columns:
                if kind == "numeric":
                    try:
                        float(cells[name])
                    except ValueError:
                        ok = False
                        break
            if ok:
                kept_raw.append(cells)
            else:
                rejected += 1

    if rejected:
        logger.warning("%s: dropped %d malformed/incomplete rows", path, rejected)
    if not kept_raw:
        raise DataError(f"{path}: no usable rows")

    # column layout: numeric -> one standardized column, categorical -> one-hot
    columns = []
    blocks = []
    stats = {}
    offset = 0
    for name, kind in schema.feature_columns:
        if kind == "numeric":
            vals = np.array([float(r[name]) for r in kept_raw], dtype=np.float64)
            mean = float(vals.mean())
            std = float(np.sqrt(np.mean((vals - mean) ** 2)))
            if std == 0.0:
                std = 1.0  # constant column -> all zeros after centering
            stats[name] = (mean, std)
            blocks.append(((vals - mean) / std)[:, None])
            columns.append(EncodedColumn(name, kind, offset, 1))
            offset += 1
        else:
            raw = [r[name] for r in kept_raw]
            levels = sorted(set(raw))
            lookup = {lv: i for i, lv in enumerate(levels)}
            hot = np.zeros((len(raw), len(levels)), dtype=np.float64)
            hot[np.arange(len(raw)), [lookup[v] for v in raw]] = 1.0
            blocks.append(hot)
            columns.append(EncodedColumn(name, kind, offset, len(levels), tuple(levels)))
            offset += len(levels)

    targets = _parse_label([r[schema.label_column] for r in kept_raw], schema.task)
    sensitive = {
        s: np.array([r[s] for r in kept_raw], dtype=object) for s in schema.sensitive_columns
    }
    return Dataset(
        features=np.hstack(blocks),
        targets=targets,
        sensitive=sensitive,
        columns=tuple(columns),
        task=schema.task,
        norm_stats=stats,
        rejected_rows=rejected,
    )


# ---------------------------------------------------------------------------
# Split + normalization
# ---------------------------------------------------------------------------


def _numeric_slices(dataset: Dataset):
    return [c for c in dataset.columns if c.kind == "numeric"]


def _standardize_pair(train: Dataset, test: Dataset):
    """Re-anchor numeric columns to the train split's population stats."""
    stats = {}
    tr = train.features.copy()
    te = test.features.copy()
    for col in _numeric_slices(train):
        vals = tr[:, col.start]
        mean = float(vals.mean())
        std = float(np.sqrt(np.mean((vals - mean) ** 2)))
        if std == 0.0:
            std = 1.0
        stats[col.name] = (mean, std)
        tr[:, col.start] = (tr[:, col.start] - mean) / std
        te[:, col.start] = (te[:, col.start] - mean) / std
    return (
        replace(train, features=tr, norm_stats=stats),
        replace(test, features=te, norm_stats=stats),
    )


def split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle split; numeric features standardized by train stats."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test_fraction must be in (0, 1)")
    n = dataset.n
    n_test = int(round(n * test_fraction))
    if n_test < 1 or n - n_test < 1:
        raise ConfigError(f"split of {n} rows at {test_fraction} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(n)
    test_idx, train_idx = perm[:n_test], perm[n_test:]

    def subset(idx):
        return replace(
            dataset,
            features=dataset.features[idx],
            targets=dataset.targets[idx],
            sensitive={k: v[idx] for k, v in dataset.sensitive.items()},
            rejected_rows=0,
        )

    return _standardize_pair(subset(train_idx), subset(test_idx))


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    n: int
    group_ratio: float
    feature_dim: int
    minority_shift: float
    noise_std: float
    task: str = "regression_mse"

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError("n must be >= 2")
        if not 0.0 < self.group_ratio < 1.0:
            raise ConfigError("group_ratio must be in (0, 1)")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be >= 1")
        if self.noise_std < 0.0:
            raise ConfigError("noise_std cannot be negative")
        if self.task not in SYNTH_TASKS:
            raise ConfigError(
                f"synthetic task must be one of {SYNTH_TASKS} (got {self.task!r})"
            )


def synthesize(spec: SyntheticSpec, seed: int) -> Dataset:
    """Deterministic biased sample: minority examples deviate from the
    shared linear rule by ``minority_shift`` (see module docstring)."""
    rng = np.random.default_rng(seed)
    w_true = rng.normal(size=spec.feature_dim)
    x = rng.normal(size=(spec.n, spec.feature_dim))
    noise = rng.normal(size=spec.n) * spec.noise_std
    n_min = int(round(spec.n * spec.group_ratio))
    if n_min < 1 or n_min >= spec.n:
        raise ConfigError("group_ratio leaves one group empty at this n")
    group = np.zeros(spec.n, dtype=np.int64)
    group[rng.permutation(spec.n)[:n_min]] = 1  # 1 = minority

    base = x @ w_true
    if spec.task == "regression_mse":
        y = base + spec.minority_shift * group + noise
    else:
        logit = (1.0 - spec.minority_shift * group) * base + noise
        y = (logit > 0.0).astype(np.float64)

    columns = tuple(
        EncodedColumn(f"f{j}", "numeric", j, 1) for j in range(spec.feature_dim)
    )
    return Dataset(
        features=x,
        targets=y,
        sensitive={"group": group.copy()},
        columns=columns,
        task=spec.task,
        norm_stats=None,
    )
