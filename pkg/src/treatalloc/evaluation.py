"""Counterfactual policy evaluation on randomized data.

A deterministic policy (one treatment per individual) is scored by matching:
samples whose observed treatment agrees with the policy contribute their
observed outcomes, reweighted by inverse assignment propensity. Under
randomized assignment this estimates the policy's true per-capita revenue
and cost without ever observing counterfactual outcomes.

Budgeted evaluation bisects the dual multiplier until the estimated
per-capita cost fits the per-capita budget, mirroring the allocation
solver but on estimated instead of predicted cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import RctDataset
from .exceptions import InfeasibleError, ValidationError
from .losses import BudgetGrid
from .solver import PredictionMatrix, decide_dual, lambda_upper_bound


@dataclass(frozen=True)
class OutcomeEstimate:
    """Inverse-propensity estimate of a policy's per-capita outcomes."""

    per_capita_revenue: float
    per_capita_cost: float
    matched_fraction: float


@dataclass(frozen=True)
class CurvePoint:
    budget: float
    per_capita_cost: float
    per_capita_revenue: float
    matched_fraction: float


@dataclass(frozen=True)
class CostCurve:
    """Cost/revenue pairs swept over budgets, sorted by per-capita cost."""

    points: tuple[CurvePoint, ...]

    def __post_init__(self):
        pts = tuple(sorted(self.points, key=lambda p: p.per_capita_cost))
        object.__setattr__(self, "points", pts)

    def costs(self) -> np.ndarray:
        return np.array([p.per_capita_cost for p in self.points])

    def revenues(self) -> np.ndarray:
        return np.array([p.per_capita_revenue for p in self.points])


def evaluate_policy(data: RctDataset, choice: np.ndarray) -> OutcomeEstimate:
    """Match-and-reweight estimate of a deterministic policy's outcomes."""
    choice = np.asarray(choice, dtype=np.int64)
    if choice.shape != (data.n,):
        raise ValidationError("policy must choose one treatment per sample")
    if choice.size and (choice.min() < 0 or choice.max() >= data.num_treatments):
        raise ValidationError("policy choices outside the treatment range")
    match = choice == data.treatment
    prop = data.sample_propensity()
    if np.any(match & (prop <= 0.0)):
        raise ValidationError("matched sample has zero assignment propensity")
    w = np.where(match, 1.0 / np.where(prop > 0, prop, 1.0), 0.0) / max(data.n, 1)
    return OutcomeEstimate(
        per_capita_revenue=float(np.sum(w * data.revenue)),
        per_capita_cost=float(np.sum(w * data.cost)),
        matched_fraction=float(match.mean()) if data.n else 0.0,
    )


def allocate_at_budget(data: RctDataset, pred: PredictionMatrix,
                       per_capita_budget: float, eps: float = 1e-6,
                       max_iter: int = 100
                       ) -> tuple[float, np.ndarray, OutcomeEstimate]:
    """Multiplier, choice vector, and estimate meeting a per-capita budget.

    Bisects the multiplier against the *estimated* per-capita cost and
    returns the feasible side (never overspending by more than the
    bisection slack ``eps``).
    """
    if per_capita_budget < 0:
        raise ValidationError("budget must be >= 0")
    if eps <= 0 or max_iter < 1:
        raise ValidationError("need eps > 0 and max_iter >= 1")
    if pred.revenue.shape != (data.n, data.num_treatments):
        raise ValidationError("prediction shape does not cover dataset")

    choice0 = decide_dual(pred, 0.0).choice
    est0 = evaluate_policy(data, choice0)
    if est0.per_capita_cost <= per_capita_budget:
        return 0.0, choice0, est0
    hi = lambda_upper_bound(pred)
    choice_hi = decide_dual(pred, hi).choice
    est_hi = evaluate_policy(data, choice_hi)
    if est_hi.per_capita_cost > per_capita_budget:
        raise InfeasibleError(
            f"per-capita budget {per_capita_budget} below estimated floor "
            f"{est_hi.per_capita_cost}",
            floor_cost=est_hi.per_capita_cost,
        )
    # geometric bracket shrink first: the upper bound can be astronomically
    # large when predicted costs pass near zero
    lo = 0.0
    for _ in range(600):
        cand = 0.5 * hi
        if cand == hi or cand == 0.0:
            break
        choice_cand = decide_dual(pred, cand).choice
        est_cand = evaluate_policy(data, choice_cand)
        if est_cand.per_capita_cost <= per_capita_budget:
            hi, choice_hi, est_hi = cand, choice_cand, est_cand
        else:
            lo = cand
            break
    for _ in range(max_iter):
        if per_capita_budget - est_hi.per_capita_cost <= eps:
            break
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        choice_mid = decide_dual(pred, mid).choice
        est_mid = evaluate_policy(data, choice_mid)
        if est_mid.per_capita_cost <= per_capita_budget:
            hi, choice_hi, est_hi = mid, choice_mid, est_mid
        else:
            lo = mid
    return hi, choice_hi, est_hi


def evaluate_at_budget(data: RctDataset, pred: PredictionMatrix,
                       per_capita_budget: float, eps: float = 1e-6,
                       max_iter: int = 100) -> OutcomeEstimate:
    """Estimated outcomes of the dual policy tuned to a per-capita budget."""
    _, _, est = allocate_at_budget(data, pred, per_capita_budget, eps, max_iter)
    return est


def default_budget_grid(data: RctDataset, pred: PredictionMatrix,
                        count: int = 12) -> BudgetGrid:
    """Evenly spaced per-capita budgets between the cost floor and the
    unconstrained cost."""
    floor = evaluate_policy(data, decide_dual(pred, lambda_upper_bound(pred)).choice)
    top = evaluate_policy(data, decide_dual(pred, 0.0).choice)
    lo, hi = floor.per_capita_cost, top.per_capita_cost
    if hi <= lo:
        return BudgetGrid((max(lo, 0.0),))
    return BudgetGrid(tuple(np.linspace(lo, hi, count)))


def cost_curve(data: RctDataset, pred: PredictionMatrix,
               budgets: BudgetGrid) -> CostCurve:
    """One outcome estimate per budget."""
    points = []
    for b in budgets:
        est = evaluate_at_budget(data, pred, b)
        points.append(CurvePoint(
            budget=float(b),
            per_capita_cost=est.per_capita_cost,
            per_capita_revenue=est.per_capita_revenue,
            matched_fraction=est.matched_fraction,
        ))
    return CostCurve(tuple(points))


def _roi_order(pred: PredictionMatrix) -> np.ndarray:
    """Ranking by predicted incremental revenue / incremental cost.

    Nonpositive incremental cost with positive incremental revenue ranks
    first (infinite return); nonpositive incremental revenue and cost ranks
    last. Ties resolve by row index.
    """
    dr = pred.revenue[:, 1] - pred.revenue[:, 0]
    dc = pred.cost[:, 1] - pred.cost[:, 0]
    n = dr.shape[0]
    ratio = np.where(dc > 0, dr / np.where(dc > 0, dc, 1.0), 0.0)
    # class 0 first, then finite ratios descending, then class 2
    klass = np.where(dc > 0, 1, np.where(dr > 0, 0, 2))
    order = np.lexsort((np.arange(n), -ratio, klass))
    return order


def aucc(data: RctDataset, pred: PredictionMatrix) -> float:
    """Normalized area under the incremental cost/revenue curve (binary).

    Individuals are ranked by predicted incremental return; prefixes of the
    ranking receive treatment 1, the rest treatment 0. For each prefix the
    matched estimator yields incremental per-capita revenue and cost against
    the all-control policy. The polyline through these points (linear
    interpolation) is integrated and divided by the rectangle spanned by its
    endpoints, giving ~0.5 for uninformative rankings.
    """
    if data.num_treatments != 2:
        raise ValidationError("this metric applies to binary treatments only")
    if pred.revenue.shape != (data.n, 2):
        raise ValidationError("prediction shape does not cover dataset")
    order = _roi_order(pred)
    prop = data.sample_propensity()
    n = data.n

    t = data.treatment[order]
    r_w = np.where(t == 1, data.revenue[order] / prop[order], 0.0) / n
    r_c = np.where(t == 0, data.revenue[order] / prop[order], 0.0) / n
    c_w = np.where(t == 1, data.cost[order] / prop[order], 0.0) / n
    c_c = np.where(t == 0, data.cost[order] / prop[order], 0.0) / n

    # prefix k treated: treated part accumulates, control part sheds
    rev_k = np.concatenate(([0.0], np.cumsum(r_w))) + (
        float(r_c.sum()) - np.concatenate(([0.0], np.cumsum(r_c)))
    )
    cost_k = np.concatenate(([0.0], np.cumsum(c_w))) + (
        float(c_c.sum()) - np.concatenate(([0.0], np.cumsum(c_c)))
    )
    d_rev = rev_k - rev_k[0]
    d_cost = cost_k - cost_k[0]

    total_r, total_c = d_rev[-1], d_cost[-1]
    if abs(total_r) < 1e-12 or abs(total_c) < 1e-12:
        raise ValidationError(
            "degenerate curve: total incremental revenue or cost is zero"
        )
    area = float(np.trapezoid(d_rev, d_cost))
    return area / (total_r * total_c)


def bootstrap_policy_se(data: RctDataset, choice: np.ndarray,
                        n_boot: int = 200, seed: int = 0) -> float:
    """Bootstrap standard error of the policy's per-capita revenue estimate.

    Samples are resampled with replacement; propensities stay fixed at the
    population values (they describe the assignment mechanism).
    """
    choice = np.asarray(choice, dtype=np.int64)
    match = choice == data.treatment
    contrib = np.where(match, data.revenue / data.sample_propensity(), 0.0)
    rng = np.random.default_rng(seed)
    n = data.n
    reps = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, n, size=n)
        reps[b] = contrib[idx].mean()
    return float(reps.std(ddof=1))
