"""Gradient-descent training of a recurrent layer plus a 1x1 reconstruction decoder."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .blocks import glorot
from .objectives import (
    LossBreakdown,
    ObjectiveWeights,
    composite_objective,
    laplacian_smoothness,
    reconstruction_loss,
    temporal_consistency,
)
from .store import ParameterStore
from .tensor import ConfigError

LOG_COLUMNS = ["step", "task", "spatial", "temporal", "total"]


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


@dataclass
class TrainSpec:
    steps: int = 120
    learning_rate: float = 0.01
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch: int = 0  # windows per step; 0 = every training window
    window: int = 12
    lambda_s: float = 1e-4
    lambda_t: float = 1e-4
    summary_weight: float = 0.0
    clip_norm: float = 5.0
    holdout_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.window < 1 or self.batch < 0:
            raise ConfigError("window must be >= 1 and batch >= 0")
        if self.summary_weight < 0:
            raise ConfigError("summary_weight must be >= 0")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must lie in [0, 1)")

    @property
    def weights(self) -> ObjectiveWeights:
        return ObjectiveWeights(self.lambda_s, self.lambda_t)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainSpec":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def init_decoder(hidden: int, channels: int, rng: np.random.Generator, embed_dim: int | None = None) -> ParameterStore:
    """1x1 field decoder from H_t; with ``embed_dim`` also a linear summary
    decoder from the per-step embedding to the spatial mean of x_t."""
    s = ParameterStore()
    s.add("decoder/weight", glorot(rng, (hidden, channels), hidden, channels))
    s.add("decoder/bias", np.zeros(channels))
    if embed_dim is not None:
        s.add("summary/weight", glorot(rng, (embed_dim, channels), embed_dim, channels))
        s.add("summary/bias", np.zeros(channels))
    return s


def n_train_steps(T_: int, spec: TrainSpec) -> int:
    return max(1, T_ - int(round(spec.holdout_fraction * T_)))


def training_windows(x: np.ndarray, spec: TrainSpec) -> np.ndarray:
    """Non-overlapping windows of the training portion, shape (n_windows, window, H, W, C)."""
    t_train = n_train_steps(len(x), spec)
    w = min(spec.window, t_train)
    starts = range(0, t_train - w + 1, w)
    return np.stack([x[s : s + w] for s in starts])


class _Adam:
    def __init__(self, params, spec: TrainSpec):
        self.spec = spec
        self.m = {k: np.zeros(p.shape) for k, p in params}
        self.v = {k: np.zeros(p.shape) for k, p in params}
        self.t = 0

    def step(self, params, lr: float):
        s = self.spec
        self.t += 1
        c1, c2 = 1 - s.beta1**self.t, 1 - s.beta2**self.t
        for k, p in params:
            g = p.grad
            self.m[k] = s.beta1 * self.m[k] + (1 - s.beta1) * g
            self.v[k] = s.beta2 * self.v[k] + (1 - s.beta2) * g * g
            p.data = p.data - lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + s.eps)


def summary_loss(xb: np.ndarray, Z, weight, bias):
    """MSE between ``Z @ weight + bias`` and the spatial mean of each input frame."""
    target = xb.mean(axis=(2, 3))  # (n, window, C)
    pred = Z @ weight + bias
    return T.mean(T.square(pred - target))


def loss_terms(model, decoder: ParameterStore, xb: np.ndarray, spec: TrainSpec, training: bool, rng=None) -> LossBreakdown:
    """Composite objective on a batch of windows ``xb`` (n, window, H, W, C)."""
    seq = np.swapaxes(xb, 0, 1)  # (window, n, H, W, C)
    out = model.forward(seq, training=training, rng=rng)
    task = reconstruction_loss(seq, out.hidden, decoder["decoder/weight"], decoder["decoder/bias"])
    if spec.summary_weight > 0:
        task = task + spec.summary_weight * summary_loss(xb, out.Z, decoder["summary/weight"], decoder["summary/bias"])
    spatial = laplacian_smoothness(out.hidden)
    temporal = temporal_consistency(out.S)
    return composite_objective(task, spatial, temporal, spec.weights)


@dataclass
class TrainResult:
    decoder: ParameterStore
    log: list[dict]

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for row in self.log:
            w.writerow([row["step"]] + [repr(row[c]) for c in LOG_COLUMNS[1:]])
        return buf.getvalue()


def train(model, x: np.ndarray, spec: TrainSpec, decoder: ParameterStore | None = None) -> TrainResult:
    """Minimize the composite objective over windows of ``x`` (T, H, W, C).

    Logs one :class:`LossBreakdown` row per step; raises
    :class:`TrainingDiverged` on a non-finite loss.
    """
    rng = np.random.default_rng(spec.seed)
    if decoder is None:
        decoder = init_decoder(model.hidden_channels, x.shape[-1], rng, model.embedding_dim)
    store = model.params.merged(decoder)
    params = list(store.items())
    windows = training_windows(x, spec)
    opt = _Adam(params, spec) if spec.optimizer == "adam" else None
    log = []
    for step in range(spec.steps):
        if spec.batch == 0 or spec.batch >= len(windows):
            xb = windows
        else:
            xb = windows[np.sort(rng.choice(len(windows), spec.batch, replace=False))]
        store.zero_grad()
        parts = loss_terms(model, decoder, xb, spec, training=True, rng=rng)
        if not math.isfinite(parts.total):
            raise TrainingDiverged(step, parts.total)
        T.backward(parts.node)
        log.append({"step": step, "task": parts.task, "spatial": parts.spatial, "temporal": parts.temporal, "total": parts.total})
        norm = math.sqrt(sum(float((p.grad**2).sum()) for _, p in params))
        if spec.clip_norm > 0 and norm > spec.clip_norm:
            for _, p in params:
                p.grad = p.grad * (spec.clip_norm / norm)
        if spec.learning_rate == 0:
            continue
        if opt is not None:
            opt.step(params, spec.learning_rate)
        else:
            for _, p in params:
                p.data = p.data - spec.learning_rate * p.grad
    return TrainResult(decoder, log)
