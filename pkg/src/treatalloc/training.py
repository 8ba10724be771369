"""Training loop: composite loss, decision backends, logging, checkpoints.

Each epoch combines the prediction loss (weight ``alpha``) with one decision
backend:

- ``two-stage``: no decision term; the pure prediction baseline.
- ``policy``: softmax policy surrogate over the multiplier grid.
- ``entropy``: the temperature-``tau`` generalization of ``policy``.
- ``perturb``: matched-outcome dual loss with flip-point gradients routed
  into the output heads as constants.
- ``perturb-softmax``: same but perturbing row-softmax scores, smoothed
  through the softmax Jacobian.

The softmax backends support mini-batches with batch-local normalization;
the perturbation backends always run full-dataset passes because the
matched-set statistics degrade on small batches.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import RctDataset
from .evaluation import CostCurve, aucc, cost_curve, evaluate_at_budget
from .exceptions import ConfigError, InfeasibleError, NumericError, ValidationError
from .gradients import GradientPair, dual_flip_gradient, ips_dual_loss, \
    softmax_flip_gradient
from .losses import BudgetGrid, LambdaGrid, prediction_loss, prediction_loss_grad, \
    tempered_policy_loss_grad
from .model import ModelConfig, ModelParams, backward, forward, init_params, \
    load_checkpoint, optimizer_step, warm_start

BACKENDS = ("two-stage", "policy", "entropy", "perturb", "perturb-softmax")


@dataclass(frozen=True)
class TrainConfig:
    """Everything one training run needs; all randomness flows from ``seed``."""

    epochs: int
    lambda_grid: LambdaGrid
    backend: str = "two-stage"
    alpha: float = 1.0
    tau: float = 1.0
    warm_start_epochs: int = 0
    warm_start_objective: str = "squared-error"
    lr: float = 1e-3
    batch_size: int | None = None
    seed: int = 0
    hidden_widths: tuple[int, ...] = (64, 32, 32)
    activation: str = "relu"
    eval_every: int = 10
    eval_budgets: tuple[float, ...] = ()
    step_floor: float = 1e-6
    step_cap: float = 0.5

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.tau <= 0:
            raise ConfigError("tau must be > 0")
        if self.epochs < 0 or self.warm_start_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.warm_start_epochs > self.epochs:
            raise ConfigError("warm_start_epochs must not exceed epochs")
        if self.lr <= 0:
            raise ConfigError("learning rate must be > 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1 when set")
        if self.backend in ("perturb", "perturb-softmax") and self.batch_size \
                and self.batch_size < 2048:
            raise ConfigError(
                "perturbation backends need full-dataset passes or large "
                "batches (>= 2048): matched-set statistics degrade on small ones"
            )

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "lambda_grid": list(self.lambda_grid.values),
            "backend": self.backend,
            "alpha": self.alpha,
            "tau": self.tau,
            "warm_start_epochs": self.warm_start_epochs,
            "warm_start_objective": self.warm_start_objective,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "hidden_widths": list(self.hidden_widths),
            "activation": self.activation,
            "eval_every": self.eval_every,
            "eval_budgets": list(self.eval_budgets),
            "step_floor": self.step_floor,
            "step_cap": self.step_cap,
        }


@dataclass(frozen=True)
class EpochRecord:
    """One line of the training log."""

    epoch: int
    prediction: float
    decision: float
    total: float
    wall_seconds: float
    snapshot: tuple[float, ...] | None = None  # per-budget revenue on eval data


def _decision_loss_and_grad(data: RctDataset, pred, config: TrainConfig
                            ) -> tuple[float, np.ndarray, np.ndarray]:
    """Backend dispatch: decision loss value plus gradients wrt predictions."""
    grid = config.lambda_grid
    if config.backend == "two-stage":
        return 0.0, np.zeros_like(pred.revenue), np.zeros_like(pred.cost)
    if config.backend == "policy":
        return tempered_policy_loss_grad(data, pred, grid, tau=1.0)
    if config.backend == "entropy":
        return tempered_policy_loss_grad(data, pred, grid, tau=config.tau)
    if config.backend == "perturb":
        grad = dual_flip_gradient(data, pred, grid, step_floor=config.step_floor)
        value = sum(ips_dual_loss(data, pred, lam) for lam in grid)
        return value, grad.d_revenue, grad.d_cost
    # perturb-softmax: record the same matched dual loss; gradients come
    # from the smoothed score perturbation
    _, grad = softmax_flip_gradient(data, pred, grid,
                                    step_floor=config.step_floor,
                                    step_cap=config.step_cap)
    value = sum(ips_dual_loss(data, pred, lam) for lam in grid)
    return value, grad.d_revenue, grad.d_cost


def train(data: RctDataset, config: TrainConfig,
          eval_data: RctDataset | None = None
          ) -> tuple[ModelParams, list[EpochRecord]]:
    """Run warm start plus decision-aware epochs; returns params and the log.

    When ``eval_data`` and ``eval_budgets`` are given, every ``eval_every``-th
    record carries estimated per-capita revenue at those budgets on the
    held-out data (training data is never used for snapshots).
    """
    if data.n == 0:
        raise ValidationError("training data is empty")
    model_config = ModelConfig(
        layer_widths=config.hidden_widths,
        num_treatments=data.num_treatments,
        input_dim=data.num_features,
        activation=config.activation,
        seed=config.seed,
    )
    params = init_params(model_config)
    rng = np.random.default_rng(config.seed)

    if config.warm_start_epochs:
        warm_start(params, data, config.warm_start_epochs,
                   objective=config.warm_start_objective, lr=config.lr,
                   batch_size=config.batch_size,
                   shuffle_seed=config.seed)

    records: list[EpochRecord] = []
    n = data.n
    for epoch in range(config.epochs - config.warm_start_epochs):
        start = time.perf_counter()
        if config.batch_size:
            order = rng.permutation(n)
            pred_sum = dec_sum = 0.0
            for lo in range(0, n, config.batch_size):
                idx = order[lo:lo + config.batch_size]
                batch = data.take(idx)
                pred = forward(params, batch.features)
                p_loss = prediction_loss(batch, pred)
                pg_rev, pg_cost = prediction_loss_grad(batch, pred)
                d_loss, dg_rev, dg_cost = _decision_loss_and_grad(batch, pred, config)
                upstream = GradientPair(
                    config.alpha * pg_rev + dg_rev,
                    config.alpha * pg_cost + dg_cost,
                )
                total = config.alpha * p_loss + d_loss
                if not np.isfinite(total):
                    raise NumericError(
                        f"non-finite loss at epoch {epoch}: "
                        f"prediction={p_loss} decision={d_loss}"
                    )
                grads = backward(params, batch.features, upstream)
                optimizer_step(params, grads, config.lr)
                pred_sum += idx.size * p_loss
                dec_sum += idx.size * d_loss
            p_epoch, d_epoch = pred_sum / n, dec_sum / n
        else:
            pred = forward(params, data.features)
            p_epoch = prediction_loss(data, pred)
            pg_rev, pg_cost = prediction_loss_grad(data, pred)
            d_epoch, dg_rev, dg_cost = _decision_loss_and_grad(data, pred, config)
            if not np.isfinite(config.alpha * p_epoch + d_epoch):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}: "
                    f"prediction={p_epoch} decision={d_epoch}"
                )
            upstream = GradientPair(
                config.alpha * pg_rev + dg_rev,
                config.alpha * pg_cost + dg_cost,
            )
            grads = backward(params, data.features, upstream)
            optimizer_step(params, grads, config.lr)

        snapshot = None
        if (eval_data is not None and config.eval_budgets
                and (epoch + 1) % max(config.eval_every, 1) == 0):
            eval_pred = forward(params, eval_data.features)
            values = []
            for b in config.eval_budgets:
                try:
                    values.append(
                        evaluate_at_budget(eval_data, eval_pred, b).per_capita_revenue
                    )
                except InfeasibleError:
                    values.append(float("nan"))  # budget below the model's floor
            snapshot = tuple(values)
        records.append(EpochRecord(
            epoch=epoch,
            prediction=p_epoch,
            decision=d_epoch,
            total=config.alpha * p_epoch + d_epoch,
            wall_seconds=time.perf_counter() - start,
            snapshot=snapshot,
        ))
    return params, records


def evaluate_checkpoint(source, data: RctDataset, budgets: BudgetGrid
                        ) -> tuple[CostCurve, float | None]:
    """Cost curve (and the binary ranking metric when M = 2) for a model.

    ``source`` is a ModelParams or a checkpoint path.
    """
    if isinstance(source, ModelParams):
        params = source
    else:
        params, _ = load_checkpoint(source)
    if params.config.num_treatments != data.num_treatments:
        raise ConfigError(
            f"checkpoint has {params.config.num_treatments} treatments, "
            f"dataset has {data.num_treatments}"
        )
    pred = forward(params, data.features)
    curve = cost_curve(data, pred, budgets)
    metric = aucc(data, pred) if data.num_treatments == 2 else None
    return curve, metric


def format_epoch_record(rec: EpochRecord) -> str:
    parts = [
        f"epoch={rec.epoch}",
        f"pred={rec.prediction!r}",
        f"dec={rec.decision!r}",
        f"total={rec.total!r}",
        f"wall={rec.wall_seconds:.3f}",
    ]
    if rec.snapshot is not None:
        parts.append("eval=" + ",".join(repr(v) for v in rec.snapshot))
    return " ".join(parts)


def write_training_log(path: str | Path, records: list[EpochRecord]) -> None:
    lines = [format_epoch_record(r) for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
