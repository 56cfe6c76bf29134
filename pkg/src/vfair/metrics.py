"""Group fairness metrics over arbitrary example partitions.

Utilities are computed per group of a partition; the spread statistics
(worst-group utility, max utility difference, total utility deviation)
quantify how unevenly a model serves the groups, and the variance of
per-example losses is the partition-free analogue the training method
actually optimizes.  The random-partition ranking protocol compares
methods on partitions drawn uniformly at random, where a method can
only do well by being uniformly good.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ConfigError, DataError

UTILITY_KINDS = ("accuracy", "f1", "mse", "prediction_error")
RANK_METRICS = ("utility", "wu", "mud", "tud")


def _canonical_kind(kind: str) -> str:
    if kind not in UTILITY_KINDS:
        raise ConfigError(f"unknown utility kind {kind!r}; expected one of {UTILITY_KINDS}")
    return "mse" if kind == "prediction_error" else kind


def higher_is_better(kind: str) -> bool:
    return _canonical_kind(kind) in ("accuracy", "f1")


# ---------------------------------------------------------------------------
# Partitions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupPartition:
    """Assignment of n examples to k non-empty groups 0..k-1."""

    group_of: np.ndarray
    k: int
    label: str = ""

    def __post_init__(self):
        g = np.asarray(self.group_of)
        if g.ndim != 1 or len(g) == 0:
            raise DataError("group_of must be a non-empty 1-d array")
        g = g.astype(np.int64)
        if self.k < 1:
            raise DataError("k must be >= 1")
        if g.min() < 0 or g.max() >= self.k:
            raise DataError("group ids must lie in [0, k)")
        if len(np.unique(g)) != self.k:
            raise DataError("every group must be non-empty")
        object.__setattr__(self, "group_of", g)

    def __len__(self) -> int:
        return len(self.group_of)

    @classmethod
    def from_values(cls, values, label: str = "") -> "GroupPartition":
        """Partition by the distinct values of a raw attribute column."""
        values = np.asarray(values)
        uniq, inverse = np.unique(values, return_inverse=True)
        return cls(group_of=inverse, k=len(uniq), label=label)


# ---------------------------------------------------------------------------
# Utilities
# ---------------------------------------------------------------------------


def f1_utility(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Binary F1 with positive class 1; 0/0 cases score 0."""
    predictions = np.asarray(predictions)
    targets = np.asarray(targets)
    tp = float(np.sum((predictions == 1) & (targets == 1)))
    fp = float(np.sum((predictions == 1) & (targets == 0)))
    fn = float(np.sum((predictions == 0) & (targets == 1)))
    denom = 2.0 * tp + fp + fn
    if denom == 0.0:
        return 0.0
    return 2.0 * tp / denom


def overall_utility(predictions: np.ndarray, targets: np.ndarray, kind: str) -> float:
    """Utility over all examples: accuracy / F1 on hard labels, or mean
    squared error on point predictions."""
    kind = _canonical_kind(kind)
    predictions = np.asarray(predictions)
    targets = np.asarray(targets)
    if predictions.shape != targets.shape:
        raise DataError("predictions and targets must be aligned 1-d arrays")
    if kind == "accuracy":
        return float(np.mean(predictions == targets))
    if kind == "f1":
        return f1_utility(predictions, targets)
    return float(np.mean((predictions.astype(float) - targets.astype(float)) ** 2))


def group_utilities(predictions, targets, partition: GroupPartition, kind: str) -> np.ndarray:
    """Per-group utility, index k of the result belonging to group k."""
    predictions = np.asarray(predictions)
    targets = np.asarray(targets)
    if len(predictions) != len(partition) or len(targets) != len(partition):
        raise DataError("predictions/targets must align with the partition")
    out = np.empty(partition.k, dtype=np.float64)
    for g in range(partition.k):
        mask = partition.group_of == g
        out[g] = overall_utility(predictions[mask], targets[mask], kind)
    return out


def worst_utility(utilities: np.ndarray, kind: str) -> float:
    """The unluckiest group: min for higher-is-better kinds, max for mse."""
    utilities = np.asarray(utilities, dtype=np.float64)
    return float(utilities.min() if higher_is_better(kind) else utilities.max())


def mud(utilities) -> float:
    """Max utility difference across groups."""
    utilities = np.asarray(utilities, dtype=np.float64)
    if utilities.ndim != 1 or len(utilities) == 0:
        raise DataError("utilities must be a non-empty 1-d array")
    return float(utilities.max() - utilities.min())


def tud(utilities, center: float | None = None) -> float:
    """Total absolute deviation of group utilities from a center.

    The center defaults to the unweighted mean of the group utilities
    (which makes tud == mud for two groups); pass an explicitly
    computed global utility to deviate from that instead.
    """
    utilities = np.asarray(utilities, dtype=np.float64)
    if utilities.ndim != 1 or len(utilities) == 0:
        raise DataError("utilities must be a non-empty 1-d array")
    if center is None:
        center = float(utilities.mean())
    return float(np.abs(utilities - center).sum())


def var_pred_error(per_example_errors) -> float:
    """Population variance of the per-example errors (task losses)."""
    e = np.asarray(per_example_errors, dtype=np.float64)
    if e.ndim != 1 or len(e) == 0:
        raise DataError("per-example errors must be a non-empty 1-d array")
    return float(np.mean((e - e.mean()) ** 2))


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    """One evaluation of one model against one partition."""

    utility_kind: str
    utility: float
    per_group_utility: list[float]
    wu: float
    mud: float
    tud: float
    var: float
    n_examples: int
    partition_label: str = ""

    def to_dict(self) -> dict:
        return {
            "utility_kind": self.utility_kind,
            "utility": self.utility,
            "per_group_utility": list(self.per_group_utility),
            "wu": self.wu,
            "mud": self.mud,
            "tud": self.tud,
            "var": self.var,
            "n_examples": self.n_examples,
            "partition_label": self.partition_label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)

    # names of the scalar metric fields, in report order
    SCALARS = ("utility", "wu", "mud", "tud", "var")


def build_report(
    predictions, targets, per_example_errors, partition: GroupPartition, kind: str
) -> MetricsReport:
    """Assemble the full metric set for one model on one partition."""
    kind = _canonical_kind(kind)
    per_group = group_utilities(predictions, targets, partition, kind)
    return MetricsReport(
        utility_kind=kind,
        utility=overall_utility(np.asarray(predictions), np.asarray(targets), kind),
        per_group_utility=[float(u) for u in per_group],
        wu=worst_utility(per_group, kind),
        mud=mud(per_group),
        tud=tud(per_group),
        var=var_pred_error(per_example_errors),
        n_examples=len(np.asarray(targets)),
        partition_label=partition.label,
    )


# ---------------------------------------------------------------------------
# Random-partition ranking
# ---------------------------------------------------------------------------


@dataclass
class RankTable:
    """Average ranks (1 = best) per method over random partitions."""

    methods: list[str]
    avg_rank: np.ndarray  # [n_methods, len(RANK_METRICS)]
    k: int
    trials: int
    utility_kind: str

    def rank_of(self, method: str, metric: str) -> float:
        return float(self.avg_rank[self.methods.index(method), RANK_METRICS.index(metric)])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", *RANK_METRICS])
            for i, name in enumerate(self.methods):
                writer.writerow([name, *(f"{v:.6g}" for v in self.avg_rank[i])])


def random_partition(rng: np.random.Generator, n: int, k: int) -> GroupPartition:
    """Uniform group assignment, resampled until every group is hit."""
    if k > n:
        raise ConfigError(f"cannot split {n} examples into {k} non-empty groups")
    while True:
        g = rng.integers(0, k, size=n)
        if len(np.unique(g)) == k:
            return GroupPartition(group_of=g, k=k)


def random_partition_rank(
    per_method_predictions: dict,
    targets,
    k: int,
    trials: int,
    seed: int,
    kind: str,
) -> RankTable:
    """Rank methods on utility/wu/mud/tud over random k-group partitions.

    Every trial draws one partition, applies it to every method's stored
    predictions, and ranks the methods per metric (ties share the mean
    rank).  Ranks are averaged over trials.
    """
    kind = _canonical_kind(kind)
    methods = list(per_method_predictions)
    if len(methods) < 2:
        raise ConfigError("ranking needs at least two methods")
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    targets = np.asarray(targets)
    n = len(targets)
    preds = {m: np.asarray(per_method_predictions[m]) for m in methods}
    for m, p in preds.items():
        if p.shape != targets.shape:
            raise DataError(f"predictions for {m!r} do not align with targets")

    # overall utility is partition-free; rank it once
    util = np.array([overall_utility(preds[m], targets, kind) for m in methods])
    rng = np.random.default_rng(seed)
    rank_sum = np.zeros((len(methods), len(RANK_METRICS)))

    util_oriented = util if not higher_is_better(kind) else -util
    util_ranks = stats.rankdata(util_oriented, method="average")

    for _ in range(trials):
        part = random_partition(rng, n, k)
        per_metric = {"utility": util_ranks}
        wu_v, mud_v, tud_v = [], [], []
        for m in methods:
            gu = group_utilities(preds[m], targets, part, kind)
            wu_v.append(worst_utility(gu, kind))
            mud_v.append(mud(gu))
            tud_v.append(tud(gu))
        wu_arr = np.asarray(wu_v)
        per_metric["wu"] = stats.rankdata(wu_arr if not higher_is_better(kind) else -wu_arr, method="average")
        per_metric["mud"] = stats.rankdata(mud_v, method="average")
        per_metric["tud"] = stats.rankdata(tud_v, method="average")
        for j, name in enumerate(RANK_METRICS):
            rank_sum[:, j] += per_metric[name]

    return RankTable(
        methods=methods,
        avg_rank=rank_sum / trials,
        k=k,
        trials=trials,
        utility_kind=kind,
    )


# ---------------------------------------------------------------------------
# Significance and similarity
# ---------------------------------------------------------------------------


def significance_test(a, b) -> float:
    """Two-sided Welch's t-test p-value between two metric samples."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ConfigError("significance needs at least two values per side")
    if np.ptp(a) == 0.0 and np.ptp(b) == 0.0:
        # degenerate: every repetition produced the identical value, so the
        # usual test statistic is undefined
        return 1.0 if a[0] == b[0] else 0.0
    return float(stats.ttest_ind(a, b, equal_var=False).pvalue)


def model_similarity(params_a, params_b) -> float:
    """Cosine similarity of two flat parameter vectors."""
    a = np.asarray(params_a, dtype=np.float64)
    b = np.asarray(params_b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError("parameter vectors must have the same shape")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DataError("cosine similarity undefined for a zero parameter vector")
    return float(a @ b / (na * nb))


def prediction_similarity(outputs_a, outputs_b, task: str) -> float:
    """Fraction of test examples on which two models emit the same hard
    label.  Classification tasks only (outputs are logits)."""
    a = np.asarray(outputs_a, dtype=np.float64)
    b = np.asarray(outputs_b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape != b.shape:
        raise DataError("output arrays must have the same shape")
    if task in ("binary_bce", "logistic_regression_mse"):
        return float(np.mean((a[:, 0] > 0.0) == (b[:, 0] > 0.0)))
    if task == "multiclass_ce":
        return float(np.mean(a.argmax(axis=1) == b.argmax(axis=1)))
    raise ConfigError("prediction agreement is defined for classification tasks only")
