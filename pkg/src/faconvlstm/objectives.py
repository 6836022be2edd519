"""Task loss, spatial/temporal regularizers and their weighted composite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class ObjectiveWeights:
    lambda_s: float = 1e-4
    lambda_t: float = 1e-4

    def __post_init__(self):
        if self.lambda_s < 0 or self.lambda_t < 0:
            raise ValueError("regularization weights must be non-negative")


@dataclass
class LossBreakdown:
    task: float
    spatial: float
    temporal: float
    total: float
    node: Tensor | None = None  # graph of ``total`` when built from tensors


def laplacian_smoothness(hidden, normalize: bool = True) -> Tensor:
    """Squared differences between vertically and horizontally adjacent sites.

    Sums over timesteps, valid neighbour pairs and channels.  With
    ``normalize`` the sum is divided by the element count T*n*H*W*F so the
    weight transfers across grid sizes.
    """
    total, count = None, 0
    for h in hidden:
        h = T.as_tensor(h)
        parts = []
        if h.shape[1] > 1:
            parts.append(T.square(h[:, 1:, :, :] - h[:, :-1, :, :]).sum())
        if h.shape[2] > 1:
            parts.append(T.square(h[:, :, 1:, :] - h[:, :, :-1, :]).sum())
        for part in parts:
            total = part if total is None else total + part
        count += h.size
    if total is None:
        total = T.mul(T.as_tensor(hidden[0]).sum(), 0.0) if hidden else Tensor(0.0)
    return total * (1.0 / count) if normalize and count else total


def reconstruction_loss(x, hidden, w_dec: Tensor, b_dec: Tensor | None = None) -> Tensor:
    """MSE between a pointwise F->C decoding of each H_t and X_t."""
    if isinstance(x, np.ndarray):
        x = [x[t] for t in range(x.shape[0])]
    total, count = None, 0
    for x_t, h_t in zip(x, hidden):
        diff = T.conv2d_pointwise(h_t, w_dec, b_dec) - x_t
        se = T.square(diff).sum()
        total = se if total is None else total + se
        count += diff.size
    return total * (1.0 / count)


def temporal_consistency(S: Tensor) -> Tensor:
    """Mean first-difference energy ``(1/(T-1)) sum_t ||s_{t+1} - s_t||^2``.

    Accepts (T, D) or batched (n, T, D); the batch is averaged.  Zero for T = 1.
    """
    S = T.as_tensor(S)
    if S.ndim == 2:
        S = S.reshape(1, *S.shape)
    n, steps, _ = S.shape
    if steps < 2:
        return S.sum() * 0.0
    d = S[:, 1:, :] - S[:, :-1, :]
    return T.square(d).sum() * (1.0 / (n * (steps - 1)))


def composite_objective(task, spatial, temporal, weights: ObjectiveWeights) -> LossBreakdown:
    """``total = task + lambda_s * spatial + lambda_t * temporal``."""
    vals = [float(np.asarray(T._as_array(v)).reshape(-1)[0]) for v in (task, spatial, temporal)]
    node = None
    if any(isinstance(v, Tensor) for v in (task, spatial, temporal)):
        node = T.as_tensor(task) + T.as_tensor(spatial) * weights.lambda_s + T.as_tensor(temporal) * weights.lambda_t
    total = vals[0] + weights.lambda_s * vals[1] + weights.lambda_t * vals[2]
    return LossBreakdown(vals[0], vals[1], vals[2], total, node)
