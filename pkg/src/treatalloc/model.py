"""Multi-head response model: a small MLP built on plain numpy.

The network maps d features to 2M outputs: M revenue heads followed by M
cost heads. Forward and backward passes are explicit so the trainer can
route externally estimated gradient matrices (which autodiff cannot
produce for piecewise-constant losses) straight into the output layer.
Updates use adaptive moments with bias correction.

Checkpoint layout (versioned flat binary): 8-byte magic ``TACKPT01``, a
4-byte little-endian header length, a JSON header echoing the model config,
layer shapes and any extra metadata, then the raw little-endian float64
parameter arrays in order W0, b0, W1, b1, ... A plain-text manifest with
the same information is written next to the binary.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import RctDataset
from .exceptions import ConfigError, NumericError, ValidationError
from .gradients import GradientPair
from .losses import prediction_loss_grad
from .solver import PredictionMatrix

_MAGIC = b"TACKPT01"

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture: hidden widths, treatment count, input width, seed."""

    layer_widths: tuple[int, ...]
    num_treatments: int
    input_dim: int
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if any(w < 1 for w in self.layer_widths):
            raise ConfigError("hidden widths must be >= 1")
        if self.num_treatments < 1 or self.input_dim < 1:
            raise ConfigError("num_treatments and input_dim must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")

    @property
    def output_dim(self) -> int:
        return 2 * self.num_treatments

    def dims(self) -> list[tuple[int, int]]:
        sizes = [self.input_dim, *self.layer_widths, self.output_dim]
        return list(zip(sizes[:-1], sizes[1:]))


@dataclass(eq=False)
class ModelParams:
    """Weights, biases, and optimizer state (first/second moments, step)."""

    config: ModelConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    step: int = 0
    m_w: list[np.ndarray] = field(default_factory=list)
    v_w: list[np.ndarray] = field(default_factory=list)
    m_b: list[np.ndarray] = field(default_factory=list)
    v_b: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.m_w:
            self.m_w = [np.zeros_like(w) for w in self.weights]
            self.v_w = [np.zeros_like(w) for w in self.weights]
            self.m_b = [np.zeros_like(b) for b in self.biases]
            self.v_b = [np.zeros_like(b) for b in self.biases]

    def num_parameters(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            step=self.step,
            m_w=[a.copy() for a in self.m_w],
            v_w=[a.copy() for a in self.v_w],
            m_b=[a.copy() for a in self.m_b],
            v_b=[a.copy() for a in self.v_b],
        )


@dataclass(eq=False)
class ParamGrads:
    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]

    def is_finite(self) -> bool:
        return all(np.isfinite(g).all() for g in self.d_weights) and \
            all(np.isfinite(g).all() for g in self.d_biases)

    def scaled(self, factor: float) -> "ParamGrads":
        return ParamGrads([factor * g for g in self.d_weights],
                          [factor * g for g in self.d_biases])

    def add(self, other: "ParamGrads") -> "ParamGrads":
        return ParamGrads(
            [a + b for a, b in zip(self.d_weights, other.d_weights)],
            [a + b for a, b in zip(self.d_biases, other.d_biases)],
        )


def init_params(config: ModelConfig) -> ModelParams:
    """Scaled uniform fan-in initialization, seed-controlled."""
    rng = np.random.default_rng(config.seed)
    weights, biases = [], []
    for fan_in, fan_out in config.dims():
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelParams(config=config, weights=weights, biases=biases)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0).astype(np.float64)
    th = np.tanh(z)
    return 1.0 - th * th


def forward_cached(params: ModelParams, features: np.ndarray
                   ) -> tuple[np.ndarray, list[np.ndarray]]:
    """Outputs plus pre-activation caches for the backward pass."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.config.input_dim:
        raise ValidationError(
            f"features must be (n, {params.config.input_dim}), got {x.shape}"
        )
    kind = params.config.activation
    pre: list[np.ndarray] = []
    h = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        if not np.isfinite(z).all():
            raise NumericError(f"non-finite activations in layer {k}")
        pre.append(z)
        h = z if k == last else _activate(z, kind)
    return h, pre


def forward(params: ModelParams, features: np.ndarray) -> PredictionMatrix:
    """Predicted revenue and cost matrices for a feature batch."""
    out, _ = forward_cached(params, features)
    m = params.config.num_treatments
    return PredictionMatrix(revenue=out[:, :m], cost=out[:, m:])


def backward(params: ModelParams, features: np.ndarray,
             upstream: GradientPair) -> ParamGrads:
    """Exact reverse-mode gradients of ``<upstream, outputs>``.

    ``upstream`` holds d(loss)/d(revenue) and d(loss)/d(cost), each (n, M);
    they are concatenated into the 2M-wide output gradient.
    """
    x = np.asarray(features, dtype=np.float64)
    m = params.config.num_treatments
    if upstream.d_revenue.shape != (x.shape[0], m):
        raise ValidationError("upstream shapes must be (n, M) for each head")
    _, pre = forward_cached(params, x)
    kind = params.config.activation

    d_out = np.concatenate([upstream.d_revenue, upstream.d_cost], axis=1)
    d_weights = [np.empty(0)] * len(params.weights)
    d_biases = [np.empty(0)] * len(params.biases)
    delta = d_out
    for k in range(len(params.weights) - 1, -1, -1):
        h_in = x if k == 0 else _activate(pre[k - 1], kind)
        d_weights[k] = h_in.T @ delta
        d_biases[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ params.weights[k].T) * _activate_grad(pre[k - 1], kind)
    return ParamGrads(d_weights, d_biases)


def optimizer_step(params: ModelParams, grads: ParamGrads, lr: float,
                   beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> bool:
    """One adaptive-moment update with bias correction, in place.

    Returns False (and leaves parameters untouched, advancing nothing) when
    the gradients contain non-finite entries.
    """
    if lr <= 0:
        raise ConfigError("learning rate must be > 0")
    if not grads.is_finite():
        return False
    params.step += 1
    t = params.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for w, m, v, g in zip(params.weights, params.m_w, params.v_w, grads.d_weights):
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        w -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    for b, m, v, g in zip(params.biases, params.m_b, params.v_b, grads.d_biases):
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        b -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    for w in params.weights:
        if not np.isfinite(w).all():
            raise NumericError("non-finite parameters after update")
    return True


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def warm_start(params: ModelParams, data: RctDataset, epochs: int,
               objective: str = "squared-error", lr: float = 1e-3,
               batch_size: int | None = None, shuffle_seed: int = 0) -> ModelParams:
    """Train on the prediction objective alone before decision-aware epochs.

    ``squared-error`` descends the propensity-weighted observed-column
    squared error. ``cross-entropy`` treats both heads as logits of binary
    outcomes through a logistic transform; observed revenue and cost must
    then be 0/1 labels.
    """
    if epochs < 0:
        raise ConfigError("epochs must be >= 0")
    if objective not in ("squared-error", "cross-entropy"):
        raise ConfigError(f"unknown warm-start objective {objective!r}")
    if objective == "cross-entropy":
        binary = np.isin(data.revenue, (0.0, 1.0)).all() and \
            np.isin(data.cost, (0.0, 1.0)).all()
        if not binary:
            raise ConfigError("cross-entropy warm start needs 0/1 outcomes")
    rng = np.random.default_rng(shuffle_seed)
    n = data.n
    for _ in range(epochs):
        order = rng.permutation(n) if batch_size else np.arange(n)
        splits = range(0, n, batch_size) if batch_size else [0]
        for start in splits:
            idx = order[start:start + batch_size] if batch_size else order
            batch = data.take(idx) if batch_size else data
            pred = forward(params, batch.features)
            if objective == "squared-error":
                d_rev, d_cost = prediction_loss_grad(batch, pred)
            else:
                rows = np.arange(batch.n)
                w = 1.0 / (batch.n * batch.num_treatments * batch.sample_propensity())
                d_rev = np.zeros_like(pred.revenue)
                d_cost = np.zeros_like(pred.cost)
                d_rev[rows, batch.treatment] = w * (
                    _sigmoid(pred.revenue[rows, batch.treatment]) - batch.revenue
                )
                d_cost[rows, batch.treatment] = w * (
                    _sigmoid(pred.cost[rows, batch.treatment]) - batch.cost
                )
            grads = backward(params, batch.features, GradientPair(d_rev, d_cost))
            optimizer_step(params, grads, lr)
    return params


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path: str | Path, params: ModelParams,
                    extra: dict | None = None) -> None:
    """Atomic write (temp file + rename) of params plus a text manifest."""
    path = Path(path)
    cfg = params.config
    header = {
        "version": 1,
        "config": {
            "layer_widths": list(cfg.layer_widths),
            "num_treatments": cfg.num_treatments,
            "input_dim": cfg.input_dim,
            "activation": cfg.activation,
            "seed": cfg.seed,
        },
        "layers": [
            {"w": list(w.shape), "b": list(b.shape)}
            for w, b in zip(params.weights, params.biases)
        ],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for w, b in zip(params.weights, params.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    os.replace(tmp, path)

    manifest = [f"format: {_MAGIC.decode()}", "version: 1"]
    manifest.append(f"config: {json.dumps(header['config'], sort_keys=True)}")
    for k, layer in enumerate(header["layers"]):
        manifest.append(f"layer {k}: W{tuple(layer['w'])} b{tuple(layer['b'])}")
    if extra:
        manifest.append(f"extra: {json.dumps(extra, sort_keys=True)}")
    path.with_name(path.name + ".manifest").write_text(
        "\n".join(manifest) + "\n", encoding="utf-8"
    )


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    """Read a checkpoint; returns params (fresh optimizer state) and extras."""
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValidationError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    cfg = ModelConfig(
        layer_widths=tuple(header["config"]["layer_widths"]),
        num_treatments=header["config"]["num_treatments"],
        input_dim=header["config"]["input_dim"],
        activation=header["config"]["activation"],
        seed=header["config"]["seed"],
    )
    offset = 12 + hlen
    weights, biases = [], []
    for layer in header["layers"]:
        wn = int(np.prod(layer["w"]))
        weights.append(
            np.frombuffer(raw, dtype="<f8", count=wn, offset=offset)
            .reshape(layer["w"]).copy()
        )
        offset += 8 * wn
        bn = int(np.prod(layer["b"]))
        biases.append(
            np.frombuffer(raw, dtype="<f8", count=bn, offset=offset)
            .reshape(layer["b"]).copy()
        )
        offset += 8 * bn
    return ModelParams(config=cfg, weights=weights, biases=biases), header["extra"]
