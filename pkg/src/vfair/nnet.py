"""Small dense networks with per-example losses and weighted gradients.

Everything trains through one primitive: ``weighted_gradient`` computes
the parameter gradient of (1/b) * sum_i w_i * loss_i with the weight
vector treated as constants.  The plain mean gradient, the spread
(std/variance/pairwise) gradients and the robust baseline all reduce to
calls of this primitive with different weights, so the backprop code
below is the only place derivatives are taken.

Parameters live in a single flat float64 vector.  The layout is a
deterministic function of the model spec (layer by layer, weight matrix
then bias), which keeps gradient vectors, parameter vectors and
finite-difference probes trivially interchangeable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DataError, NumericError

TASKS = ("regression_mse", "binary_bce", "multiclass_ce", "logistic_regression_mse")
ACTIVATIONS = ("relu", "sigmoid", "identity")

# Tasks whose network output is a logit (loss applies the link itself).
_LOGIT_TASKS = ("binary_bce", "multiclass_ce", "logistic_regression_mse")


# ---------------------------------------------------------------------------
# Specs and batches
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    """Architecture + task description for a fully-connected network."""

    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    task: str
    activation: str = "relu"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(
                f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}"
            )
        if self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError("hidden layer sizes must be >= 1")
        if self.task == "multiclass_ce":
            if self.output_dim < 2:
                raise ConfigError("multiclass_ce needs output_dim >= 2 (one per class)")
        elif self.output_dim != 1:
            raise ConfigError(f"task {self.task!r} requires output_dim = 1")
        # hidden_dims arrives as a list from configs often enough to be worth fixing
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))

    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.output_dim]


@dataclass(frozen=True)
class Batch:
    """A minibatch: features [b, d], targets [b], unique example ids [b]."""

    features: np.ndarray
    targets: np.ndarray
    example_ids: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        t = np.asarray(self.targets, dtype=np.float64)
        ids = np.asarray(self.example_ids)
        if f.ndim != 2:
            raise DataError("features must be a 2-d array [batch, input_dim]")
        if t.ndim != 1 or t.shape[0] != f.shape[0]:
            raise DataError("targets must be 1-d and aligned with features")
        if ids.shape != (f.shape[0],):
            raise DataError("example_ids must be 1-d and aligned with features")
        if f.shape[0] == 0:
            raise DataError("empty batch")
        if len(np.unique(ids)) != len(ids):
            raise DataError("example_ids must be unique within a batch")
        if not np.all(np.isfinite(f)):
            raise DataError("non-finite feature values")
        if not np.all(np.isfinite(t)):
            raise DataError("non-finite target values")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "targets", t)
        object.__setattr__(self, "example_ids", ids)

    def __len__(self) -> int:
        return self.features.shape[0]


# ---------------------------------------------------------------------------
# Parameter layout
# ---------------------------------------------------------------------------


def layer_slices(spec: ModelSpec) -> list[tuple[slice, tuple[int, int], slice, int]]:
    """Deterministic flat layout: per layer (W slice, W shape, b slice, b size)."""
    dims = spec.layer_dims()
    out = []
    offset = 0
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        w_n = d_in * d_out
        out.append((slice(offset, offset + w_n), (d_in, d_out), slice(offset + w_n, offset + w_n + d_out), d_out))
        offset += w_n + d_out
    return out


def parameter_count(spec: ModelSpec) -> int:
    dims = spec.layer_dims()
    return sum(i * o + o for i, o in zip(dims[:-1], dims[1:]))


def unpack(spec: ModelSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views (no copies) of the flat vector as per-layer (W, b) pairs."""
    params = np.asarray(params)
    if params.shape != (parameter_count(spec),):
        raise DataError(
            f"parameter vector has shape {params.shape}, expected ({parameter_count(spec)},)"
        )
    return [
        (params[ws].reshape(shape), params[bs])
        for ws, shape, bs, _ in layer_slices(spec)
    ]


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer."""
    rng = np.random.default_rng(seed)
    params = np.empty(parameter_count(spec), dtype=np.float64)
    for (ws, shape, bs, b_n) in layer_slices(spec):
        limit = 1.0 / math.sqrt(shape[0])
        params[ws] = rng.uniform(-limit, limit, shape[0] * shape[1])
        params[bs] = rng.uniform(-limit, limit, b_n)
    return params


# ---------------------------------------------------------------------------
# Forward / losses
# ---------------------------------------------------------------------------


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return expit(z)
    return z


def _activate_grad(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "sigmoid":
        s = expit(z)
        return s * (1.0 - s)
    return np.ones_like(z)


def _forward_cached(spec, params, features):
    """Forward pass keeping layer inputs and pre-activations for backprop."""
    layers = unpack(spec, params)
    inputs = []   # a_{l-1}: input to layer l
    preacts = []  # z_l
    h = features
    for idx, (w, b) in enumerate(layers):
        inputs.append(h)
        z = h @ w + b
        preacts.append(z)
        h = z if idx == len(layers) - 1 else _activate(spec.activation, z)
    return inputs, preacts, h


def forward(spec: ModelSpec, params: np.ndarray, batch: Batch) -> np.ndarray:
    """Network outputs [b, output_dim]; classification tasks return logits."""
    if batch.features.shape[1] != spec.input_dim:
        raise DataError(
            f"batch has {batch.features.shape[1]} features, spec expects {spec.input_dim}"
        )
    _, _, out = _forward_cached(spec, params, batch.features)
    return out


def _check_targets(spec: ModelSpec, targets: np.ndarray) -> np.ndarray:
    if spec.task == "multiclass_ce":
        idx = targets.astype(np.int64)
        if np.any(idx != targets):
            raise DataError("multiclass targets must be integer class indices")
        if idx.min() < 0 or idx.max() >= spec.output_dim:
            raise DataError(
                f"class index out of range [0, {spec.output_dim}) in targets"
            )
        return idx
    if spec.task in ("binary_bce", "logistic_regression_mse"):
        if not np.all((targets == 0.0) | (targets == 1.0)):
            raise DataError(f"{spec.task} targets must be 0 or 1")
    return targets


def per_example_losses(spec: ModelSpec, predictions: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-example task losses, always finite and >= 0.

    regression_mse          (y_hat - y)^2
    binary_bce              log(1 + e^z) - y*z        (z = logit)
    multiclass_ce           logsumexp(z) - z[y]
    logistic_regression_mse (sigmoid(z) - y)^2
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = _check_targets(spec, np.asarray(targets, dtype=np.float64))
    if predictions.ndim != 2 or predictions.shape[1] != spec.output_dim:
        raise DataError("predictions must be [batch, output_dim]")
    if predictions.shape[0] != targets.shape[0]:
        raise DataError("predictions and targets disagree on batch size")

    if spec.task == "regression_mse":
        losses = (predictions[:, 0] - targets) ** 2
    elif spec.task == "binary_bce":
        z = predictions[:, 0]
        losses = np.logaddexp(0.0, z) - targets * z
    elif spec.task == "logistic_regression_mse":
        losses = (expit(predictions[:, 0]) - targets) ** 2
    else:  # multiclass_ce
        z = predictions
        m = z.max(axis=1)
        lse = m + np.log(np.exp(z - m[:, None]).sum(axis=1))
        losses = lse - z[np.arange(len(z)), targets.astype(np.int64)]
    # exact zeros are fine; tiny negatives from cancellation are not expected,
    # but clamp defensively so downstream sqrt/ratio logic keeps its contract
    losses = np.maximum(losses, 0.0)
    if not np.all(np.isfinite(losses)):
        raise NumericError("non-finite per-example loss")
    return losses


def _loss_output_grad(spec: ModelSpec, outputs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """d loss_i / d output_i, shape [b, output_dim]."""
    targets = _check_targets(spec, np.asarray(targets, dtype=np.float64))
    if spec.task == "regression_mse":
        return 2.0 * (outputs - targets[:, None])
    if spec.task == "binary_bce":
        return expit(outputs) - targets[:, None]
    if spec.task == "logistic_regression_mse":
        p = expit(outputs)
        return 2.0 * (p - targets[:, None]) * p * (1.0 - p)
    # multiclass_ce: softmax minus one-hot
    z = outputs - outputs.max(axis=1, keepdims=True)
    e = np.exp(z)
    soft = e / e.sum(axis=1, keepdims=True)
    grad = soft.copy()
    grad[np.arange(len(grad)), targets.astype(np.int64)] -= 1.0
    return grad


def weighted_gradient(spec: ModelSpec, params: np.ndarray, batch: Batch, weights: np.ndarray) -> np.ndarray:
    """Gradient of (1/b) * sum_i weights_i * loss_i, weights held constant.

    One manual reverse pass; returns a flat vector with the same layout
    as ``params``.
    """
    weights = np.asarray(weights, dtype=np.float64)
    b = len(batch)
    if weights.shape != (b,):
        raise DataError("weights must be 1-d and aligned with the batch")
    if not np.all(np.isfinite(weights)):
        raise DataError("non-finite weights")

    inputs, preacts, out = _forward_cached(spec, params, batch.features)
    layers = unpack(spec, params)
    grad = np.zeros_like(np.asarray(params, dtype=np.float64))
    g_layers = unpack(spec, grad)

    delta = _loss_output_grad(spec, out, batch.targets) * (weights / b)[:, None]
    for l in range(len(layers) - 1, -1, -1):
        g_w, g_b = g_layers[l]
        g_w += inputs[l].T @ delta
        g_b += delta.sum(axis=0)
        if l > 0:
            w, _ = layers[l]
            delta = (delta @ w.T) * _activate_grad(spec.activation, preacts[l - 1])
    return grad


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------


def directional_derivative_fd(
    spec: ModelSpec,
    params: np.ndarray,
    batch: Batch,
    objective: str,
    direction: np.ndarray,
    h: float = 1e-6,
    weights: np.ndarray | None = None,
) -> float:
    """Central-difference directional derivative of a scalar batch objective.

    objective: "mean"      mean of per-example losses
               "sigma"     std-dev of per-example losses about the batch mean
               "weighted"  (1/b) * sum_i weights_i * loss_i (weights required)

    Used as an independent check of the analytic gradients; never called
    by training code.
    """
    if objective not in ("mean", "sigma", "weighted"):
        raise ConfigError(f"unknown fd objective {objective!r}")
    if objective == "weighted":
        if weights is None:
            raise ConfigError("objective 'weighted' needs a weights vector")
        weights = np.asarray(weights, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    if direction.shape != np.asarray(params).shape:
        raise DataError("direction must match the parameter vector shape")

    def value(p):
        losses = per_example_losses(spec, forward(spec, p, batch), batch.targets)
        if objective == "mean":
            return float(losses.mean())
        if objective == "sigma":
            return float(np.sqrt(np.mean((losses - losses.mean()) ** 2)))
        return float(np.mean(weights * losses))

    return (value(params + h * direction) - value(params - h * direction)) / (2.0 * h)


# ---------------------------------------------------------------------------
# Prediction decoding (used by evaluation, not by training)
# ---------------------------------------------------------------------------


def predicted_values(spec: ModelSpec, outputs: np.ndarray) -> np.ndarray:
    """Point predictions on the target scale: raw for regression, probability
    for the sigmoid tasks."""
    outputs = np.asarray(outputs, dtype=np.float64)
    if spec.task == "regression_mse":
        return outputs[:, 0]
    if spec.task in ("binary_bce", "logistic_regression_mse"):
        return expit(outputs[:, 0])
    raise ConfigError("point predictions are undefined for multiclass_ce")


def predicted_labels(spec: ModelSpec, outputs: np.ndarray) -> np.ndarray:
    """Hard labels for classification outputs (0.5 probability threshold)."""
    outputs = np.asarray(outputs, dtype=np.float64)
    if spec.task in ("binary_bce", "logistic_regression_mse"):
        return (outputs[:, 0] > 0.0).astype(np.int64)
    if spec.task == "multiclass_ce":
        return outputs.argmax(axis=1)
    raise ConfigError("hard labels are undefined for regression_mse")
