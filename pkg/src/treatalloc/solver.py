"""Budget allocation over multiple treatments via Lagrangian duality.

The primal problem picks exactly one treatment per individual to maximize
total revenue subject to a global cost budget. Relaxing the budget with a
multiplier decomposes the problem per individual: each row independently
takes ``argmax_j (revenue_ij - lam * cost_ij)``. The multiplier is found by
bisection, exploiting that the cost of the per-row argmax allocation is
nonincreasing in ``lam``. A brute-force enumerator serves as the exact
oracle on small instances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InfeasibleError, SizeError, ValidationError


@dataclass(eq=False)
class PredictionMatrix:
    """Predicted revenue and cost for every individual x treatment."""

    revenue: np.ndarray  # (n, m)
    cost: np.ndarray     # (n, m)

    def __post_init__(self):
        self.revenue = np.asarray(self.revenue, dtype=np.float64)
        self.cost = np.asarray(self.cost, dtype=np.float64)
        if self.revenue.ndim != 2 or self.revenue.shape != self.cost.shape:
            raise ValidationError("revenue and cost must share shape (n, m)")
        if not (np.isfinite(self.revenue).all() and np.isfinite(self.cost).all()):
            raise ValidationError("prediction matrices must be finite")

    @property
    def n(self) -> int:
        return self.revenue.shape[0]

    @property
    def num_treatments(self) -> int:
        return self.revenue.shape[1]


@dataclass(frozen=True)
class Allocation:
    """One chosen treatment per individual plus achieved objective and cost."""

    choice: np.ndarray   # (n,) int64
    objective: float     # sum of revenue at the chosen treatments
    total_cost: float

    @property
    def n(self) -> int:
        return self.choice.shape[0]


@dataclass(frozen=True)
class DualSolution:
    """Multiplier, its allocation, and the dual bound at that multiplier."""

    lam: float
    allocation: Allocation
    dual_value: float
    trace: tuple[tuple[float, float], ...] | None = None  # (lam, cost) per probe

    def __post_init__(self):
        if self.lam < 0:
            raise ValidationError("multiplier must be >= 0")


def _allocation_from_choice(pred: PredictionMatrix, choice: np.ndarray) -> Allocation:
    rows = np.arange(pred.n)
    return Allocation(
        choice=choice.astype(np.int64),
        objective=float(pred.revenue[rows, choice].sum()),
        total_cost=float(pred.cost[rows, choice].sum()),
    )


def decide_dual(pred: PredictionMatrix, lam: float) -> Allocation:
    """Per-row argmax of ``revenue - lam * cost``; ties go to the lowest index."""
    if lam < 0:
        raise ValidationError("multiplier must be >= 0")
    scores = pred.revenue - lam * pred.cost
    return _allocation_from_choice(pred, np.argmax(scores, axis=1))


def dual_value(pred: PredictionMatrix, lam: float, budget: float) -> float:
    """Dual bound ``lam * budget + sum_i max_j (revenue_ij - lam * cost_ij)``."""
    if lam < 0:
        raise ValidationError("multiplier must be >= 0")
    scores = pred.revenue - lam * pred.cost
    return float(lam * budget + scores.max(axis=1).sum())


def lambda_upper_bound(pred: PredictionMatrix) -> float:
    """Largest useful multiplier: max revenue/cost ratio over positive costs.

    Entries with nonpositive cost are excluded from the ratio; if nothing
    positive remains the bound falls back to 1.
    """
    positive = pred.cost > 0
    if not positive.any():
        return 1.0
    ratios = pred.revenue[positive] / pred.cost[positive]
    top = float(ratios.max())
    return top if top > 0 else 1.0


def solve_budget(pred: PredictionMatrix, budget: float, eps: float | None = None,
                 max_iter: int = 100, collect_trace: bool = False) -> DualSolution:
    """Bisect the multiplier until the allocation cost meets the budget.

    Returns the feasible side of the bisection: the reported allocation
    never overspends. ``eps`` is the absolute per-capita cost slack that
    stops the search early; it defaults to 1e-6 times the per-capita cost
    of the unconstrained allocation.

    Raises InfeasibleError when even the cost at the largest useful
    multiplier exceeds the budget; the error carries that floor cost.
    """
    if budget < 0:
        raise ValidationError("budget must be >= 0")
    if max_iter < 1:
        raise ValidationError("max_iter must be >= 1")
    n = max(pred.n, 1)
    trace: list[tuple[float, float]] = []

    alloc0 = decide_dual(pred, 0.0)
    trace.append((0.0, alloc0.total_cost))
    if eps is None:
        eps = 1e-6 * max(alloc0.total_cost / n, 1e-12)
    if eps <= 0:
        raise ValidationError("eps must be > 0")
    if alloc0.total_cost <= budget:
        return DualSolution(0.0, alloc0, dual_value(pred, 0.0, budget),
                            tuple(trace) if collect_trace else None)

    hi = lambda_upper_bound(pred)
    alloc_hi = decide_dual(pred, hi)
    trace.append((hi, alloc_hi.total_cost))
    if alloc_hi.total_cost > budget:
        raise InfeasibleError(
            f"budget {budget} below achievable floor cost {alloc_hi.total_cost}",
            floor_cost=alloc_hi.total_cost,
        )

    # Near-zero predicted costs can push the upper bound many orders of
    # magnitude past the useful range; shrink the bracket geometrically
    # before arithmetic bisection so a fixed iteration budget suffices.
    lo = 0.0
    for _ in range(600):
        cand = 0.5 * hi
        if cand == hi or cand == 0.0:
            break
        alloc_cand = decide_dual(pred, cand)
        trace.append((cand, alloc_cand.total_cost))
        if alloc_cand.total_cost <= budget:
            hi, alloc_hi = cand, alloc_cand
        else:
            lo = cand
            break

    for _ in range(max_iter):
        if budget - alloc_hi.total_cost <= eps * n:
            break
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:  # float interval exhausted
            break
        alloc_mid = decide_dual(pred, mid)
        trace.append((mid, alloc_mid.total_cost))
        if alloc_mid.total_cost <= budget:
            hi, alloc_hi = mid, alloc_mid
        else:
            lo = mid
    return DualSolution(hi, alloc_hi, dual_value(pred, hi, budget),
                        tuple(trace) if collect_trace else None)


def brute_force_oracle(truth, budget: float, max_assignments: int = 2_000_000
                       ) -> Allocation:
    """Exact optimum by enumerating all M^N assignments (tiny instances only).

    ``truth`` is anything with (n, m) ``revenue`` and ``cost`` arrays.
    Assignments costing more than the budget are skipped; the feasible
    assignment with maximum revenue wins. The winning choice is re-scored
    through the same reduction as the dual allocations so objective values
    of identical choices agree bitwise.
    """
    revenue = np.asarray(truth.revenue, dtype=np.float64)
    cost = np.asarray(truth.cost, dtype=np.float64)
    n, m = revenue.shape
    if n == 0:
        return Allocation(choice=np.zeros(0, dtype=np.int64), objective=0.0,
                          total_cost=0.0)
    if n > 15:
        raise SizeError(f"brute force capped at n <= 15, got {n}")
    total = m ** n
    if total > max_assignments:
        raise SizeError(f"{total} assignments exceed cap {max_assignments}")

    # Level-by-level partial sums: after row i the arrays hold the cost and
    # revenue of every assignment of rows 0..i.
    costs = cost[0].copy()
    revs = revenue[0].copy()
    for i in range(1, n):
        costs = (costs[:, None] + cost[i][None, :]).ravel()
        revs = (revs[:, None] + revenue[i][None, :]).ravel()

    feasible = costs <= budget
    if not feasible.any():
        raise InfeasibleError(
            f"no assignment fits budget {budget}; cheapest costs {costs.min()}",
            floor_cost=float(costs.min()),
        )
    masked = np.where(feasible, revs, -np.inf)
    best = int(np.argmax(masked))

    choice = np.zeros(n, dtype=np.int64)
    for i in range(n - 1, -1, -1):
        choice[i] = best % m
        best //= m
    return _allocation_from_choice(PredictionMatrix(revenue, cost), choice)
