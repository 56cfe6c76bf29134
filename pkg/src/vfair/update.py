"""Harmless variance-suppressing update.

The training objective is: minimize the spread of per-example losses
without leaving the set of parameters that are (near-)optimal for the
mean loss.  Each step combines the mean-loss gradient g_mu and a
secondary spread gradient g_sec as

    step = lam * g_mu + g_sec,       lam = max(lam1, lam2)

where lam1 keeps the combined step a descent direction for the mean
loss (projection bound: the combined step's inner product with g_mu
stays >= epsilon * ||g_mu||^2) and lam2 keeps every per-example weight
in the equivalent reweighted form non-negative.

Three secondary objectives are supported, differing only in their
per-example weight vector and in the closed form of lam2:

    std_dev    weights (l_i - mu) / sigma            lam2 = mu / sigma (capped)
    variance   weights 2 * (l_i - mu)                lam2 = 2 * (mu - min_i l_i)
    pairwise   signed coefficients of the sorted     lam2 = 2
               consecutive-difference sum

The running mean mu is an exponential moving average across batches
(bias left uncorrected, mu_0 = 0); sigma is computed per batch around
that running mean.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataError
from .nnet import Batch, ModelSpec, forward, per_example_losses, weighted_gradient

OBJECTIVES = ("std_dev", "variance", "pairwise")

# below this squared norm the mean-loss gradient is treated as zero and
# the projection term lam1 is skipped
GRAD_NORM_FLOOR = 1e-18


@dataclass(frozen=True)
class UpdateState:
    """Cross-batch state of the fair update (immutable; steps return a new one)."""

    ema_mean: float = 0.0
    decay: float = 0.99
    step_size: float = 0.01
    epsilon_projection: float = 1.0
    lambda2_cap: float = 3.0
    sigma_floor: float = 1e-12
    step_count: int = 0

    def __post_init__(self):
        if not 0.0 <= self.decay < 1.0:
            raise ConfigError("decay must be in [0, 1)")
        if self.step_size <= 0.0:
            raise ConfigError("step_size must be positive")
        if self.sigma_floor <= 0.0:
            raise ConfigError("sigma_floor must be positive")
        if self.ema_mean < 0.0:
            raise ConfigError("ema_mean cannot be negative for non-negative losses")


@dataclass(frozen=True)
class StepReport:
    """Diagnostics of a single update, one row of the step trace."""

    step: int
    mu: float
    sigma: float
    lambda1: float
    lambda2: float
    lam: float
    grad_mu_norm: float
    grad_dot: float
    weights_min: float

    def to_row(self) -> dict:
        return {
            "step": self.step,
            "mu": self.mu,
            "sigma": self.sigma,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "lambda": self.lam,
            "grad_mu_norm": self.grad_mu_norm,
            "grad_dot": self.grad_dot,
            "weights_min": self.weights_min,
        }


# ---------------------------------------------------------------------------
# Scalar pieces
# ---------------------------------------------------------------------------


def ema_update(mu_prev: float, losses: np.ndarray, decay: float) -> float:
    """mu_t = decay * mu_{t-1} + (1 - decay) * mean(losses)."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.ndim != 1 or len(losses) == 0:
        raise DataError("losses must be a non-empty 1-d array")
    if not 0.0 <= decay < 1.0:
        raise ConfigError("decay must be in [0, 1)")
    return float(decay * mu_prev + (1.0 - decay) * losses.mean())


def batch_sigma(losses: np.ndarray, mu: float, floor: float = 1e-12) -> float:
    """Root mean squared deviation of the batch losses around mu, floored.

    mu is the running mean, not necessarily the batch mean, so this is
    not the batch standard deviation in general.
    """
    losses = np.asarray(losses, dtype=np.float64)
    if losses.ndim != 1 or len(losses) == 0:
        raise DataError("losses must be a non-empty 1-d array")
    return max(float(floor), float(np.sqrt(np.mean((losses - mu) ** 2))))


def lambda1(grad_mu_vec: np.ndarray, grad_secondary_vec: np.ndarray, epsilon: float = 1.0) -> float:
    """Projection bound: smallest non-negative lam keeping
    (lam * g_mu + g_sec) . g_mu >= epsilon * ||g_mu||^2.

    Returns 0 when the mean-loss gradient is numerically zero.
    """
    norm_sq = float(grad_mu_vec @ grad_mu_vec)
    if norm_sq < GRAD_NORM_FLOOR:
        return 0.0
    return max(0.0, epsilon - float(grad_mu_vec @ grad_secondary_vec) / norm_sq)


def lambda2(mu: float, sigma: float, cap: float = 3.0) -> float:
    """Weight-positivity bound for the std-dev objective: mu/sigma, capped.

    For non-negative losses the most negative z-score is -mu/sigma, so
    lam >= mu/sigma keeps every reweighting coefficient non-negative.
    The cap bounds the mean-loss emphasis when sigma is tiny relative
    to mu (a z-score beyond the cap is treated as an outlier tail).
    """
    if sigma <= 0.0:
        raise ConfigError("sigma must be positive (apply the floor first)")
    return min(float(cap), mu / sigma)


def combined_weights(losses: np.ndarray, mu: float, sigma: float, lam: float) -> np.ndarray:
    """Per-example weights lam + (l_i - mu)/sigma of the reweighted form."""
    losses = np.asarray(losses, dtype=np.float64)
    if sigma <= 0.0:
        raise ConfigError("sigma must be positive (apply the floor first)")
    return lam + (losses - mu) / sigma


def pairwise_coefficients(losses: np.ndarray) -> np.ndarray:
    """Signed coefficients of sum_i |l_(i) - l_(i+1)| over ascending order.

    Sorting first makes the consecutive-difference sum collapse to
    max - min, so interior coefficients are -1/0/+1 (ties contribute 0,
    using sign(0) = 0).  Returned in original example order.
    """
    losses = np.asarray(losses, dtype=np.float64)
    b = len(losses)
    phi_sorted = np.zeros(b)
    if b > 1:
        order = np.argsort(losses, kind="stable")
        s = losses[order]
        d = np.sign(s[1:] - s[:-1])
        phi_sorted[:-1] -= d
        phi_sorted[1:] += d
        phi = np.zeros(b)
        phi[order] = phi_sorted
        return phi
    return phi_sorted


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------


def grad_mu(spec: ModelSpec, params: np.ndarray, batch: Batch) -> np.ndarray:
    """Gradient of the batch mean loss (uniform weights)."""
    return weighted_gradient(spec, params, batch, np.ones(len(batch)))


def grad_sigma(spec: ModelSpec, params: np.ndarray, batch: Batch, mu: float, sigma: float) -> np.ndarray:
    """Gradient of the loss std-dev: weights (l_i - mu)/sigma.

    Exact when mu is the batch mean (the d mu/d theta term cancels);
    with a running mean it is the update direction the method uses,
    not the exact derivative.
    """
    losses = per_example_losses(spec, forward(spec, params, batch), batch.targets)
    if sigma <= 0.0:
        raise ConfigError("sigma must be positive (apply the floor first)")
    return weighted_gradient(spec, params, batch, (losses - mu) / sigma)


# ---------------------------------------------------------------------------
# The update itself
# ---------------------------------------------------------------------------


def _secondary(objective, losses, mu, sigma, floored):
    """Per-example weight vector of the secondary objective and its lam2."""
    if objective == "std_dev":
        if floored:
            # spread already (numerically) zero: nothing to suppress
            sw = np.zeros_like(losses)
        else:
            sw = (losses - mu) / sigma
        lam2 = None  # needs the cap, filled by caller
    elif objective == "variance":
        sw = 2.0 * (losses - mu)
        lam2 = 2.0 * (mu - float(losses.min()))
    elif objective == "pairwise":
        sw = pairwise_coefficients(losses)
        lam2 = 2.0
    else:
        raise ConfigError(f"unknown objective {objective!r}; expected one of {OBJECTIVES}")
    return sw, lam2


def vfair_direction(
    state: UpdateState,
    spec: ModelSpec,
    params: np.ndarray,
    batch: Batch,
    objective: str = "std_dev",
) -> tuple[np.ndarray, UpdateState, StepReport]:
    """One update direction lam * g_mu + g_sec (not yet applied).

    Order of operations per batch: losses -> refresh running mean ->
    sigma around it -> both gradients -> lam1, lam2 -> combined
    direction.  Returns (direction, advanced state, report).
    """
    losses = per_example_losses(spec, forward(spec, params, batch), batch.targets)
    mu = ema_update(state.ema_mean, losses, state.decay)
    sigma_raw = float(np.sqrt(np.mean((losses - mu) ** 2)))
    sigma = max(state.sigma_floor, sigma_raw)
    floored = sigma_raw <= state.sigma_floor

    sw, lam2 = _secondary(objective, losses, mu, sigma, floored)
    if lam2 is None:
        lam2 = lambda2(mu, sigma, state.lambda2_cap)

    g_mu = grad_mu(spec, params, batch)
    if np.any(sw):
        g_sec = weighted_gradient(spec, params, batch, sw)
    else:
        g_sec = np.zeros_like(g_mu)

    lam1 = lambda1(g_mu, g_sec, state.epsilon_projection)
    lam = max(lam1, lam2)
    direction = lam * g_mu + g_sec

    report = StepReport(
        step=state.step_count,
        mu=mu,
        sigma=sigma,
        lambda1=lam1,
        lambda2=lam2,
        lam=lam,
        grad_mu_norm=float(np.linalg.norm(g_mu)),
        grad_dot=float(g_mu @ g_sec),
        weights_min=float((lam + sw).min()),
    )
    new_state = replace(state, ema_mean=mu, step_count=state.step_count + 1)
    return direction, new_state, report


def vfair_step(
    state: UpdateState,
    spec: ModelSpec,
    params: np.ndarray,
    batch: Batch,
    objective: str = "std_dev",
) -> tuple[np.ndarray, UpdateState, StepReport]:
    """Plain gradient step along the combined direction:
    params - step_size * (lam * g_mu + g_sec)."""
    direction, new_state, report = vfair_direction(state, spec, params, batch, objective)
    return params - state.step_size * direction, new_state, report
