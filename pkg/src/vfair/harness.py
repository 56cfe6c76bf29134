"""Experiment orchestration: configs, training loops, records, aggregation.

A config describes one dataset, one model shape, and a set of (method,
seed) runs.  Each run trains with per-epoch parameter snapshots, picks
an epoch (final, or the one whose training loss is nearest a converged
mean-loss reference), evaluates the full metric suite on the test split
per sensitive attribute, and is saved as a self-describing JSON record.
Runs are deterministic in (config, seed): identical inputs produce
byte-identical records.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import DroConfig, dro_direction
from .data import (
    Dataset,
    DatasetSchema,
    SyntheticSpec,
    load_csv,
    split,
    synthesize,
    take_batch,
)
from .errors import ConfigError, DataError
from .metrics import (
    GroupPartition,
    MetricsReport,
    build_report,
    higher_is_better,
    significance_test,
)
from .nnet import (
    Batch,
    ModelSpec,
    forward,
    init_params,
    per_example_losses,
    predicted_labels,
    predicted_values,
)
from .update import UpdateState, grad_mu, vfair_direction

METHODS = ("erm", "vfair_std", "vfair_var", "vfair_pairwise", "dro")
OPTIMIZERS = ("sgd", "adagrad")
EPOCH_SELECTION = ("final", "harmless")
UTILITY_CHOICES = ("auto", "accuracy", "f1", "mse", "prediction_error")

_VFAIR_OBJECTIVE = {"vfair_std": "std_dev", "vfair_var": "variance", "vfair_pairwise": "pairwise"}

TRACE_COLUMNS = (
    "step", "mu", "sigma", "lambda1", "lambda2", "lambda",
    "grad_mu_norm", "grad_dot", "weights_min", "eta",
)


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict = field(repr=False)

    # dataset
    dataset_kind: str = "synthetic"
    synthetic: SyntheticSpec | None = None
    csv_path: str | None = None
    schema: DatasetSchema | None = None
    data_seed: int = 0
    test_fraction: float = 0.3
    split_seed: int = 0

    # model
    hidden_dims: tuple = (64, 32)
    activation: str = "relu"

    # training
    methods: tuple = ("erm",)
    optimizer: str = "sgd"
    step_size: float = 0.01
    batch_size: int = 128
    epochs: int = 50
    decay: float = 0.99
    lambda2_cap: float = 3.0
    dro_alpha_min: float = 0.2
    seeds: tuple = (0,)
    epoch_selection: str = "final"
    utility: str = "auto"
    erm_reference_loss: float | None = None

    def __post_init__(self):
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; expected one of {METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("duplicate methods in config")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.epoch_selection not in EPOCH_SELECTION:
            raise ConfigError(f"unknown epoch_selection {self.epoch_selection!r}")
        if self.utility not in UTILITY_CHOICES:
            raise ConfigError(f"unknown utility {self.utility!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.step_size <= 0.0:
            raise ConfigError("step_size must be positive")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("duplicate seeds in config")


def config_from_dict(d: dict) -> ExperimentConfig:
    """Validate and type a parsed config mapping (see README for the schema)."""
    if not isinstance(d, dict):
        raise ConfigError("config root must be a JSON object")
    known = {
        "dataset", "model", "methods", "method", "optimizer", "step_size",
        "batch_size", "epochs", "decay", "lambda2_cap", "dro_alpha_min",
        "seeds", "epoch_selection", "utility", "erm_reference_loss",
    }
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    ds = d.get("dataset")
    if not isinstance(ds, dict) or "kind" not in ds:
        raise ConfigError("config needs a dataset section with a 'kind'")
    kind = ds["kind"]
    synthetic = None
    csv_path = None
    schema = None
    if kind == "synthetic":
        try:
            synthetic = SyntheticSpec(
                n=int(ds["n"]),
                group_ratio=float(ds["group_ratio"]),
                feature_dim=int(ds["feature_dim"]),
                minority_shift=float(ds["minority_shift"]),
                noise_std=float(ds["noise_std"]),
                task=str(ds.get("task", "regression_mse")),
            )
        except KeyError as exc:
            raise ConfigError(f"synthetic dataset section is missing {exc}") from None
    elif kind == "csv":
        if "path" not in ds or "schema" not in ds:
            raise ConfigError("csv dataset section needs 'path' and 'schema'")
        csv_path = str(ds["path"])
        sc = ds["schema"]
        try:
            schema = DatasetSchema(
                feature_columns=tuple((str(n), str(k)) for n, k in sc["features"]),
                label_column=str(sc["label"]),
                sensitive_columns=tuple(sc.get("sensitive", ())),
                task=str(sc["task"]),
            )
        except KeyError as exc:
            raise ConfigError(f"csv schema section is missing {exc}") from None
    else:
        raise ConfigError(f"dataset kind must be 'synthetic' or 'csv', got {kind!r}")

    model = d.get("model", {})
    methods = d.get("methods")
    if methods is None:
        methods = [d["method"]] if "method" in d else ["erm"]

    cfg = ExperimentConfig(
        raw=d,
        dataset_kind=kind,
        synthetic=synthetic,
        csv_path=csv_path,
        schema=schema,
        data_seed=int(ds.get("seed", 0)),
        test_fraction=float(ds.get("test_fraction", 0.3)),
        split_seed=int(ds.get("split_seed", 0)),
        hidden_dims=tuple(int(h) for h in model.get("hidden_dims", (64, 32))),
        activation=str(model.get("activation", "relu")),
        methods=tuple(str(m) for m in methods),
        optimizer=str(d.get("optimizer", "sgd")),
        step_size=float(d.get("step_size", 0.01)),
        batch_size=int(d.get("batch_size", 128)),
        epochs=int(d.get("epochs", 50)),
        decay=float(d.get("decay", 0.99)),
        lambda2_cap=float(d.get("lambda2_cap", 3.0)),
        dro_alpha_min=float(d.get("dro_alpha_min", 0.2)),
        seeds=tuple(int(s) for s in d.get("seeds", (0,))),
        epoch_selection=str(d.get("epoch_selection", "final")),
        utility=str(d.get("utility", "auto")),
        erm_reference_loss=(
            float(d["erm_reference_loss"]) if d.get("erm_reference_loss") is not None else None
        ),
    )
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return config_from_dict(d)


def build_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    if cfg.dataset_kind == "synthetic":
        full = synthesize(cfg.synthetic, seed=cfg.data_seed)
    else:
        full = load_csv(cfg.csv_path, cfg.schema)
    return split(full, test_fraction=cfg.test_fraction, seed=cfg.split_seed)


def build_model_spec(cfg: ExperimentConfig, train: Dataset) -> ModelSpec:
    if train.task == "multiclass_ce":
        out = int(train.targets.max()) + 1
    else:
        out = 1
    return ModelSpec(
        input_dim=train.feature_dim,
        hidden_dims=cfg.hidden_dims,
        output_dim=out,
        task=train.task,
        activation=cfg.activation,
    )


def resolve_utility(utility: str, task: str) -> str:
    """Map the configured utility to a concrete kind valid for the task."""
    if utility == "auto":
        return "mse" if task in ("regression_mse", "logistic_regression_mse") else "accuracy"
    kind = "mse" if utility == "prediction_error" else utility
    valid = {
        "accuracy": ("binary_bce", "logistic_regression_mse", "multiclass_ce"),
        "f1": ("binary_bce", "logistic_regression_mse"),
        "mse": ("regression_mse", "logistic_regression_mse", "binary_bce"),
    }[kind]
    if task not in valid:
        raise ConfigError(f"utility {utility!r} is not defined for task {task!r}")
    return kind


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------


class Sgd:
    def __init__(self, step_size: float):
        self.step_size = step_size

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return params - self.step_size * grad


class Adagrad:
    """Per-coordinate scaling by accumulated squared gradients."""

    def __init__(self, step_size: float, dim: int, eps: float = 1e-10):
        self.step_size = step_size
        self.eps = eps
        self.accum = np.zeros(dim)

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.accum += grad * grad
        return params - self.step_size * grad / (np.sqrt(self.accum) + self.eps)


def make_optimizer(name: str, step_size: float, dim: int):
    if name == "sgd":
        return Sgd(step_size)
    if name == "adagrad":
        return Adagrad(step_size, dim)
    raise ConfigError(f"unknown optimizer {name!r}")


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    method: str
    seed: int
    per_epoch_loss: list
    selected_epoch: int
    params: np.ndarray
    metrics: dict            # partition label -> MetricsReport
    utility_kind: str
    test_outputs: np.ndarray      # raw model outputs on the test split
    test_predictions: np.ndarray  # decoded per utility kind
    test_targets: np.ndarray
    trace: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "per_epoch_loss": [float(x) for x in self.per_epoch_loss],
            "selected_epoch": int(self.selected_epoch),
            "params": [float(x) for x in self.params],
            "metrics": {k: v.to_dict() for k, v in self.metrics.items()},
            "utility_kind": self.utility_kind,
            "test_outputs": np.asarray(self.test_outputs).tolist(),
            "test_predictions": np.asarray(self.test_predictions).tolist(),
            "test_targets": np.asarray(self.test_targets).tolist(),
            "config": self.config,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "RunRecord":
        return cls(
            method=d["method"],
            seed=int(d["seed"]),
            per_epoch_loss=[float(x) for x in d["per_epoch_loss"]],
            selected_epoch=int(d["selected_epoch"]),
            params=np.asarray(d["params"], dtype=np.float64),
            metrics={k: MetricsReport.from_dict(v) for k, v in d["metrics"].items()},
            utility_kind=d["utility_kind"],
            test_outputs=np.asarray(d["test_outputs"], dtype=np.float64),
            test_predictions=np.asarray(d["test_predictions"], dtype=np.float64),
            test_targets=np.asarray(d["test_targets"], dtype=np.float64),
            trace=[],
            config=d.get("config", {}),
        )

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_dict(), indent=2, sort_keys=True), encoding="utf-8"
        )

    @classmethod
    def load(cls, path) -> "RunRecord":
        try:
            return cls.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"{path} is not a run record: {exc}") from None


def write_trace(rows, path) -> None:
    """Step-trace CSV; methods fill only the columns they produce."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS, restval="")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _train_one(cfg: ExperimentConfig, spec: ModelSpec, train: Dataset, method: str, seed: int):
    """Train one (method, seed); returns (epoch snapshots, per-epoch loss, trace)."""
    params = init_params(spec, seed)
    optimizer = make_optimizer(cfg.optimizer, cfg.step_size, len(params))
    state = UpdateState(
        decay=cfg.decay, step_size=cfg.step_size, lambda2_cap=cfg.lambda2_cap
    )
    dro_cfg = DroConfig(alpha_min=cfg.dro_alpha_min)
    objective = _VFAIR_OBJECTIVE.get(method)
    rng = np.random.default_rng(seed)

    full = take_batch(train, np.arange(train.n))
    snapshots = []
    per_epoch_loss = []
    trace = []
    step = 0
    for _epoch in range(cfg.epochs):
        order = rng.permutation(train.n)
        for start in range(0, train.n, cfg.batch_size):
            batch = take_batch(train, order[start : start + cfg.batch_size])
            if method == "erm":
                grad = grad_mu(spec, params, batch)
            elif method == "dro":
                grad, eta = dro_direction(spec, params, batch, dro_cfg)
                trace.append({"step": step, "eta": eta})
            else:
                grad, state, report = vfair_direction(state, spec, params, batch, objective)
                trace.append(report.to_row())
            params = optimizer.step(params, grad)
            step += 1
        snapshots.append(params.copy())
        losses = per_example_losses(spec, forward(spec, params, full), full.targets)
        per_epoch_loss.append(float(losses.mean()))
    return snapshots, per_epoch_loss, trace


def select_epoch(per_epoch_loss, selection: str, reference_loss: float | None) -> int:
    """'final' takes the last epoch; 'harmless' the epoch whose training
    loss lands nearest the reference (earliest wins ties)."""
    if selection == "final":
        return len(per_epoch_loss) - 1
    if reference_loss is None:
        raise ConfigError(
            "harmless epoch selection needs an erm run in the same invocation "
            "or an explicit erm_reference_loss"
        )
    dist = np.abs(np.asarray(per_epoch_loss) - reference_loss)
    return int(np.argmin(dist))


def evaluate(cfg, spec, test: Dataset, params, method: str, seed: int) -> RunRecord:
    """Full test-split evaluation of fixed parameters into a RunRecord."""
    full = take_batch(test, np.arange(test.n))
    outputs = forward(spec, params, full)
    losses = per_example_losses(spec, outputs, full.targets)
    kind = resolve_utility(cfg.utility, spec.task)
    if kind in ("accuracy", "f1"):
        preds = predicted_labels(spec, outputs).astype(np.float64)
    else:
        preds = predicted_values(spec, outputs)

    reports = {}
    overall = GroupPartition(group_of=np.zeros(test.n, dtype=np.int64), k=1, label="overall")
    reports["overall"] = build_report(preds, full.targets, losses, overall, kind)
    for name, values in test.sensitive.items():
        part = GroupPartition.from_values(values, label=name)
        reports[name] = build_report(preds, full.targets, losses, part, kind)

    return RunRecord(
        method=method,
        seed=seed,
        per_epoch_loss=[],
        selected_epoch=0,
        params=np.asarray(params, dtype=np.float64),
        metrics=reports,
        utility_kind=kind,
        test_outputs=outputs,
        test_predictions=preds,
        test_targets=full.targets,
        config=cfg.raw,
    )


def run_experiment(cfg: ExperimentConfig) -> list:
    """Train and evaluate every (method, seed) pair of the config.

    The mean-loss baseline trains first within each seed so the harmless
    epoch selection of the other methods can reference its final
    training loss for that same seed.
    """
    train, test = build_datasets(cfg)
    spec = build_model_spec(cfg, train)
    ordered = sorted(cfg.methods, key=lambda m: m != "erm")  # erm first if present

    records = []
    for seed in cfg.seeds:
        erm_ref = cfg.erm_reference_loss
        for method in ordered:
            snapshots, per_epoch_loss, trace = _train_one(cfg, spec, train, method, seed)
            if method == "erm" and cfg.erm_reference_loss is None:
                erm_ref = per_epoch_loss[-1]
            if cfg.epoch_selection == "harmless":
                chosen = select_epoch(per_epoch_loss, "harmless", erm_ref)
            else:
                chosen = select_epoch(per_epoch_loss, "final", None)
            record = evaluate(cfg, spec, test, snapshots[chosen], method, seed)
            record.per_epoch_loss = per_epoch_loss
            record.selected_epoch = chosen
            record.trace = trace
            records.append(record)
    return records


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


def _improvement(kind: str, metric: str, method_mean: float, erm_mean: float) -> float:
    """Signed so that positive always means the method beats the baseline."""
    if metric in ("utility", "wu") and higher_is_better(kind):
        return method_mean - erm_mean
    return erm_mean - method_mean


@dataclass
class AggregateTable:
    rows: list

    COLUMNS = ["partition", "method", "n_runs"] + [
        f"{m}_{s}"
        for m in MetricsReport.SCALARS
        for s in ("mean", "std", "p_vs_erm", "impr_vs_erm")
    ]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=self.COLUMNS, restval="")
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: v for k, v in row.items() if v is not None})


def aggregate(records) -> AggregateTable:
    """Per (partition, method) mean/std over seeds, Welch p and signed
    improvement against the mean-loss baseline where available."""
    if not records:
        raise ConfigError("no records to aggregate")
    partitions = []
    methods = []
    for r in records:
        for p in r.metrics:
            if p not in partitions:
                partitions.append(p)
        if r.method not in methods:
            methods.append(r.method)

    def values(method, partition, metric):
        vals = [
            getattr(r.metrics[partition], metric)
            for r in records
            if r.method == method and partition in r.metrics
        ]
        return np.asarray(vals, dtype=np.float64)

    rows = []
    for partition in partitions:
        for method in methods:
            kinds = [
                r.utility_kind for r in records if r.method == method and partition in r.metrics
            ]
            if not kinds:
                continue
            kind = kinds[0]
            row = {"partition": partition, "method": method, "n_runs": len(kinds)}
            for metric in MetricsReport.SCALARS:
                vals = values(method, partition, metric)
                row[f"{metric}_mean"] = float(vals.mean())
                row[f"{metric}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else None
                p = None
                impr = None
                if method != "erm" and "erm" in methods:
                    erm_vals = values("erm", partition, metric)
                    impr = _improvement(kind, metric, float(vals.mean()), float(erm_vals.mean()))
                    if len(vals) > 1 and len(erm_vals) > 1:
                        p = significance_test(erm_vals, vals)
                row[f"{metric}_p_vs_erm"] = p
                row[f"{metric}_impr_vs_erm"] = impr
            rows.append(row)
    return AggregateTable(rows=rows)


# ---------------------------------------------------------------------------
# Loss curves
# ---------------------------------------------------------------------------


def emit_loss_curve(spec: ModelSpec, params, dataset: Dataset, path=None) -> np.ndarray:
    """Sorted per-example losses of a model over a dataset; optionally
    written as CSV of (rank, loss) with a final mean row."""
    full = take_batch(dataset, np.arange(dataset.n))
    losses = np.sort(per_example_losses(spec, forward(spec, params, full), full.targets))
    if path is not None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rank", "loss"])
            for i, v in enumerate(losses, start=1):
                writer.writerow([i, repr(float(v))])
            writer.writerow(["mean", repr(float(losses.mean()))])
    return losses
