"""Reference training rules: plain mean-loss descent and a worst-case
reweighting baseline.

The robust baseline minimizes, per batch, the dual form

    F(theta; eta) = C * sqrt(mean_i (l_i - eta)_+^2) + eta,
    C = sqrt(2 * (1/alpha_min - 1)^2 + 1)

over eta (a 1-d convex problem solved by ternary search) and then takes
the gradient at the optimal eta, which reduces to a weighted gradient
with per-example weights (l_i - eta*)_+.  alpha_min is the smallest
subpopulation fraction the adversary may reweight onto; smaller values
mean a harder adversary (larger C).

At the positive-part kink (l_i == eta*) the subgradient is taken as 0;
in particular a batch whose losses are all <= eta* produces a zero
step.  Note that with C >= sqrt(batch size) the dual optimum sits at
eta* = max l and every step degenerates this way, so alpha_min and the
batch size have to be chosen together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .nnet import Batch, ModelSpec, forward, per_example_losses, weighted_gradient
from .update import grad_mu


@dataclass(frozen=True)
class DroConfig:
    alpha_min: float = 0.2
    eta_search_tol: float = 1e-6
    eta_bracket_pad: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha_min < 1.0:
            raise ConfigError("alpha_min must be in (0, 1)")
        if self.eta_search_tol <= 0.0:
            raise ConfigError("eta_search_tol must be positive")
        if self.eta_bracket_pad < 0.0:
            raise ConfigError("eta_bracket_pad cannot be negative")

    @property
    def scale(self) -> float:
        """C = sqrt(2 * (1/alpha_min - 1)^2 + 1)."""
        return math.sqrt(2.0 * (1.0 / self.alpha_min - 1.0) ** 2 + 1.0)


def erm_step(spec: ModelSpec, params: np.ndarray, batch: Batch, step_size: float) -> np.ndarray:
    """One plain gradient step on the batch mean loss."""
    if step_size <= 0.0:
        raise ConfigError("step_size must be positive")
    return params - step_size * grad_mu(spec, params, batch)


def dro_objective(losses: np.ndarray, eta: float, cfg: DroConfig) -> float:
    """Dual value C * sqrt(mean (l - eta)_+^2) + eta."""
    losses = np.asarray(losses, dtype=np.float64)
    pos = np.maximum(losses - eta, 0.0)
    return float(cfg.scale * math.sqrt(float(np.mean(pos**2))) + eta)


def dro_eta(losses: np.ndarray, cfg: DroConfig) -> float:
    """Minimize the dual objective over eta by ternary search.

    The objective is convex in eta (Euclidean norm of componentwise
    hinge functions plus a linear term), so ternary search on the
    padded bracket [min l - pad, max l + pad] converges.
    """
    losses = np.asarray(losses, dtype=np.float64)
    if losses.ndim != 1 or len(losses) == 0:
        raise DataError("losses must be a non-empty 1-d array")
    if not np.all(np.isfinite(losses)) or np.any(losses < 0.0):
        raise DataError("losses must be finite and non-negative")
    lo = float(losses.min()) - cfg.eta_bracket_pad
    hi = float(losses.max()) + cfg.eta_bracket_pad
    for _ in range(200):
        if hi - lo <= cfg.eta_search_tol:
            break
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if dro_objective(losses, m1, cfg) < dro_objective(losses, m2, cfg):
            hi = m2
        else:
            lo = m1
    return 0.5 * (lo + hi)


def dro_direction(
    spec: ModelSpec, params: np.ndarray, batch: Batch, cfg: DroConfig
) -> tuple[np.ndarray, float]:
    """Gradient of the eta-minimized dual objective, plus eta* itself.

    Weights (l_i - eta*)_+ vanish for every example at or below eta*
    (zero subgradient at the kink); if that kills the whole batch the
    returned direction is exactly zero.
    """
    losses = per_example_losses(spec, forward(spec, params, batch), batch.targets)
    eta = dro_eta(losses, cfg)
    pos = np.maximum(losses - eta, 0.0)
    denom = math.sqrt(float(np.mean(pos**2)))
    if denom == 0.0:
        return np.zeros_like(np.asarray(params, dtype=np.float64)), eta
    grad = (cfg.scale / denom) * weighted_gradient(spec, params, batch, pos)
    return grad, eta


def dro_step(
    spec: ModelSpec, params: np.ndarray, batch: Batch, cfg: DroConfig, step_size: float
) -> np.ndarray:
    """One descent step on the eta-minimized dual objective."""
    if step_size <= 0.0:
        raise ConfigError("step_size must be positive")
    grad, _ = dro_direction(spec, params, batch, cfg)
    return params - step_size * grad
