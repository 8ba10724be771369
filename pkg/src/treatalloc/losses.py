"""Decision-aware training losses and their full-information counterparts.

Observed data reveal one treatment per individual, so squared error over the
full outcome matrix cannot be computed directly. The losses here reweight
the observed column by inverse assignment propensity, which makes them
unbiased for their full-information counterparts under randomized
assignment. The two smooth decision surrogates score a row-softmax policy
over ``revenue - lam * cost`` for every multiplier in a grid.

All surrogate values are reported per individual (divided by N) so that
magnitudes are comparable across dataset sizes; the gradient direction is
unchanged by this uniform rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CounterfactualMatrix, RctDataset
from .exceptions import ConfigError, ValidationError
from .solver import PredictionMatrix


@dataclass(frozen=True)
class LambdaGrid:
    """Strictly increasing, nonnegative multiplier values."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValidationError("multiplier grid must be nonempty")
        if any(v < 0 for v in vals):
            raise ValidationError("multipliers must be >= 0")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValidationError("multipliers must be strictly increasing")
        object.__setattr__(self, "values", vals)

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class BudgetGrid:
    """Nondecreasing, nonnegative budget values."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValidationError("budget grid must be nonempty")
        if any(v < 0 for v in vals):
            raise ValidationError("budgets must be >= 0")
        if any(b < a for a, b in zip(vals, vals[1:])):
            raise ValidationError("budgets must be sorted ascending")
        object.__setattr__(self, "values", vals)

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class LossBreakdown:
    """Prediction and decision parts of one composite loss evaluation."""

    prediction: float
    decision: float
    total: float
    alpha: float

    @classmethod
    def combine(cls, alpha: float, prediction: float, decision: float) -> "LossBreakdown":
        return cls(prediction=prediction, decision=decision,
                   total=alpha * prediction + decision, alpha=alpha)


def _check_cover(data: RctDataset, pred) -> None:
    if pred.revenue.shape != (data.n, data.num_treatments):
        raise ValidationError(
            f"prediction shape {pred.revenue.shape} does not cover dataset "
            f"({data.n}, {data.num_treatments})"
        )


def row_softmax(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; large logits do not overflow."""
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def prediction_loss(data: RctDataset, pred: PredictionMatrix) -> float:
    """Propensity-weighted squared error on the observed treatment column.

    Equals ``(1/M) sum_i (1/N_{t_i}) [(r_i - rhat_i)^2 + (c_i - chat_i)^2]``
    when propensities are empirical; explicit propensities are honored via
    the weight ``1 / (N * p_{t_i})``.
    """
    _check_cover(data, pred)
    rows = np.arange(data.n)
    w = 1.0 / (data.n * data.num_treatments * data.sample_propensity())
    dr = data.revenue - pred.revenue[rows, data.treatment]
    dc = data.cost - pred.cost[rows, data.treatment]
    return float(np.sum(w * (dr * dr + dc * dc)))


def prediction_loss_grad(data: RctDataset, pred: PredictionMatrix
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of `prediction_loss` with respect to the prediction matrices."""
    _check_cover(data, pred)
    rows = np.arange(data.n)
    w = 2.0 / (data.n * data.num_treatments * data.sample_propensity())
    d_rev = np.zeros_like(pred.revenue)
    d_cost = np.zeros_like(pred.cost)
    d_rev[rows, data.treatment] = w * (pred.revenue[rows, data.treatment] - data.revenue)
    d_cost[rows, data.treatment] = w * (pred.cost[rows, data.treatment] - data.cost)
    return d_rev, d_cost


def full_mse(truth: CounterfactualMatrix, pred: PredictionMatrix) -> float:
    """Mean squared error over the whole outcome matrix (synthetic only)."""
    if truth.revenue.shape != pred.revenue.shape:
        raise ValidationError("truth and prediction shapes differ")
    dr = truth.revenue - pred.revenue
    dc = truth.cost - pred.cost
    return float(np.mean(dr * dr + dc * dc))


def tempered_policy_loss(data: RctDataset, pred: PredictionMatrix,
                         grid: LambdaGrid, tau: float) -> float:
    """Entropy-regularized policy surrogate, summed over the multiplier grid.

    Per multiplier: the negative propensity-weighted observed reward
    ``r - lam * c`` under the temperature-``tau`` softmax policy over
    predicted scores, divided by N.
    """
    if tau <= 0:
        raise ConfigError("temperature must be > 0")
    _check_cover(data, pred)
    rows = np.arange(data.n)
    weight = 1.0 / (data.n * data.sample_propensity())
    total = 0.0
    for lam in grid:
        w = row_softmax((pred.revenue - lam * pred.cost) / tau)[rows, data.treatment]
        total += -float(np.sum(weight * (data.revenue - lam * data.cost) * w))
    return total


def policy_learning_loss(data: RctDataset, pred: PredictionMatrix,
                         grid: LambdaGrid) -> float:
    """Softmax policy surrogate; the temperature-1 case of the tempered loss."""
    return tempered_policy_loss(data, pred, grid, tau=1.0)


def max_entropy_loss(data: RctDataset, pred: PredictionMatrix,
                     grid: LambdaGrid, tau: float) -> float:
    """Alias following the entropy-regularizer derivation of the surrogate."""
    return tempered_policy_loss(data, pred, grid, tau)


def tempered_policy_loss_grad(data: RctDataset, pred: PredictionMatrix,
                              grid: LambdaGrid, tau: float
                              ) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss plus its exact gradient with respect to the prediction matrices.

    The per-row loss is ``-beta_i * w[i, t_i]`` with softmax weights w, so
    ``d/ds_ij = -beta_i * w[i, t_i] * (1[j = t_i] - w_ij)`` and the chain
    rule maps scores back through ``s = (revenue - lam * cost) / tau``.
    """
    if tau <= 0:
        raise ConfigError("temperature must be > 0")
    _check_cover(data, pred)
    rows = np.arange(data.n)
    weight = 1.0 / (data.n * data.sample_propensity())
    d_rev = np.zeros_like(pred.revenue)
    d_cost = np.zeros_like(pred.cost)
    total = 0.0
    for lam in grid:
        w = row_softmax((pred.revenue - lam * pred.cost) / tau)
        w_obs = w[rows, data.treatment]
        beta = weight * (data.revenue - lam * data.cost)
        total += -float(np.sum(beta * w_obs))
        ds = (beta * w_obs)[:, None] * w
        ds[rows, data.treatment] -= beta * w_obs
        d_rev += ds / tau
        d_cost += ds * (-lam / tau)
    return total, d_rev, d_cost


def oracle_dual_losses(truth: CounterfactualMatrix, pred: PredictionMatrix,
                       grid: LambdaGrid, tau: float) -> tuple[float, float, float]:
    """Full-information decision losses (synthetic verification references).

    Returns, per-individual and summed over the grid:
    - hard: negative true reward of the per-row argmax of predicted scores;
    - soft: negative true reward under the softmax policy of those scores;
    - tempered: the same with scores divided by ``tau``.
    """
    if tau <= 0:
        raise ConfigError("temperature must be > 0")
    if truth.revenue.shape != pred.revenue.shape:
        raise ValidationError("truth and prediction shapes differ")
    n = truth.n
    rows = np.arange(n)
    hard = soft = tempered = 0.0
    for lam in grid:
        scores = pred.revenue - lam * pred.cost
        reward = truth.revenue - lam * truth.cost
        choice = np.argmax(scores, axis=1)
        hard += -float(reward[rows, choice].sum()) / n
        soft += -float(np.sum(reward * row_softmax(scores))) / n
        tempered += -float(np.sum(reward * row_softmax(scores / tau))) / n
    return hard, soft, tempered
