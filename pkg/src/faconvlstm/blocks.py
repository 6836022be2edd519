"""Building blocks of the factorized-attention ConvLSTM layer.

All blocks are plain functions over explicit parameter tensors so they can
be tested and gradient-checked in isolation.  Tensors are channels-last.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .tensor import ConfigError, DimensionError, Tensor


@dataclass
class ModelConfig:
    """Architectural hyperparameters.

    ``in_channels`` is C, ``hidden`` is F, ``bottleneck`` is C_b,
    ``attn_interval`` is the number of timesteps between axial refinements.
    """

    in_channels: int = 4
    hidden: int = 16
    bottleneck: int = 4
    kernel_set: tuple[tuple[int, int], ...] = ((3, 1), (5, 1), (3, 2))
    se_ratio: int = 4
    attn_interval: int = 4
    axial_heads: int = 1
    subspace_dim: int = 8
    temporal_heads: int = 2
    dropout_rate: float = 0.0
    norm_groups: int = 1
    norm_scope: str = "sample"
    season_period: float = 24.0
    pooling: str = "mean"
    mha_residual: bool = True
    share_axial_qkv: bool = True
    peepholes: bool = True
    axial: bool = True
    forget_bias: float = 1.0
    norm_eps: float = 1e-5

    def __post_init__(self):
        self.kernel_set = tuple((int(k), int(d)) for k, d in self.kernel_set)
        if self.in_channels < 1 or self.hidden < 1:
            raise ConfigError("in_channels and hidden must be >= 1")
        if self.bottleneck < 1:
            raise ConfigError(f"bottleneck must be >= 1, got {self.bottleneck}")
        if self.subspace_dim < 1:
            raise ConfigError("subspace_dim must be >= 1")
        if self.attn_interval < 1:
            raise ConfigError("attn_interval must be >= 1")
        if self.se_ratio < 1:
            raise ConfigError("se_ratio must be >= 1")
        if not self.kernel_set:
            raise ConfigError("kernel_set must not be empty")
        for k, d in self.kernel_set:
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"kernel size {k} must be odd")
            if d < 1:
                raise ConfigError(f"dilation {d} must be >= 1")
        if self.norm_groups < 1 or self.hidden % self.norm_groups or self.bottleneck % self.norm_groups:
            raise ConfigError("norm_groups must divide both hidden and bottleneck")
        if self.hidden % self.axial_heads:
            raise ConfigError("hidden must be divisible by axial_heads")
        if self.subspace_dim % self.temporal_heads:
            raise ConfigError("subspace_dim must be divisible by temporal_heads")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if self.norm_scope not in ("sample", "site"):
            raise ConfigError(f"norm_scope must be 'sample' or 'site', got {self.norm_scope!r}")
        if self.pooling not in ("mean", "attn"):
            raise ConfigError(f"unknown pooling {self.pooling!r}")
        if self.season_period <= 0:
            raise ConfigError("season_period must be > 0")

    @property
    def se_inner(self) -> int:
        return max(1, (2 * self.bottleneck) // self.se_ratio)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel_set"] = [list(kd) for kd in self.kernel_set]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def normalize(x: Tensor, gamma: Tensor, beta: Tensor, cfg: ModelConfig) -> Tensor:
    """GroupNorm over (h, w, group) per sample, or per-site channel LayerNorm.

    ``cfg.norm_scope`` picks the statistics; ``norm_groups == 1`` is the
    LayerNorm case of either.
    """
    if cfg.norm_scope == "site":
        return T.layer_norm(x, gamma, beta, cfg.norm_eps, cfg.norm_groups)
    return T.group_norm(x, gamma, beta, cfg.norm_eps, cfg.norm_groups)


# --------------------------------------------------------------------------
# bottleneck projection


def bottleneck_project(
    x: Tensor,
    weight: Tensor,
    gamma: Tensor,
    beta: Tensor,
    cfg: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """1x1 projection to C_b channels, then normalization, then dropout."""
    if weight.shape[1] != cfg.bottleneck:
        raise DimensionError(f"bottleneck weight axis 1 must be {cfg.bottleneck}, got {weight.shape[1]}")
    z = T.conv2d_pointwise(x, weight)
    z = normalize(z, gamma, beta, cfg)
    return T.dropout(z, cfg.dropout_rate, rng, training)


# --------------------------------------------------------------------------
# spatial mixing + channel recalibration


def multiscale_depthwise_mix(u: Tensor, kernels, kernel_set) -> Tensor:
    """Unweighted sum of dilated depthwise convolutions, one per branch."""
    if not kernel_set:
        raise ConfigError("kernel_set must not be empty")
    if len(kernels) != len(kernel_set):
        raise ConfigError("one kernel per (k, dilation) branch required")
    out = None
    for kern, (k, d) in zip(kernels, kernel_set):
        if kern.shape[0] != k:
            raise DimensionError(f"branch kernel axis 0 is {kern.shape[0]}, expected {k}")
        y = T.conv2d_depthwise(u, kern, d)
        out = y if out is None else out + y
    return out


def se_gates(d: Tensor, w1: Tensor, w2: Tensor) -> Tensor:
    """Per-(sample, channel) gate sigma(relu(GAP(d) W1) W2), shape (n, c)."""
    c = d.shape[3]
    if w1.shape[0] != c or w2.shape[1] != c or w1.shape[1] != w2.shape[0]:
        raise DimensionError(f"SE weights {w1.shape}/{w2.shape} do not match {c} channels")
    pooled = T.global_avg_pool(d)
    return T.sigmoid(T.relu(pooled @ w1) @ w2)


def se_recalibrate(d: Tensor, w1: Tensor, w2: Tensor) -> Tensor:
    n, _, _, c = d.shape
    return d * se_gates(d, w1, w2).reshape(n, 1, 1, c)


# --------------------------------------------------------------------------
# attention


def _split_heads(x: Tensor, heads: int) -> Tensor:
    # (..., L, F) -> (..., heads, L, F/heads)
    *lead, L, F = x.shape
    x = x.reshape(*lead, L, heads, F // heads)
    nd = len(lead)
    return x.transpose(*range(nd), nd + 1, nd, nd + 2)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, heads, L, dh = x.shape
    nd = len(lead)
    x = x.transpose(*range(nd), nd + 1, nd, nd + 2)
    return x.reshape(*lead, L, heads * dh)


def attention_core(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, heads: int, weights_out: list | None = None) -> Tensor:
    """Multi-head scaled dot-product self-attention along axis -2.

    Heads are concatenated; no output projection is applied here.
    """
    F = x.shape[-1]
    if F % heads:
        raise DimensionError(f"feature axis {F} not divisible by {heads} heads")
    dh = wq.shape[1] // heads
    q = _split_heads(x @ wq, heads)
    k = _split_heads(x @ wk, heads)
    v = _split_heads(x @ wv, heads)
    nd = q.ndim
    kt = k.transpose(*range(nd - 2), nd - 1, nd - 2)
    attn = T.softmax((q @ kt) * (1.0 / math.sqrt(dh)), axis=-1)
    if weights_out is not None:
        weights_out.append(attn.data)
    return _merge_heads(attn @ v)


@dataclass
class AxialAttnParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    # column-pass projections when not shared with the row pass
    col_wq: Tensor | None = None
    col_wk: Tensor | None = None
    col_wv: Tensor | None = None


def axial_attention(h: Tensor, p: AxialAttnParams, heads: int, weights_out: list | None = None) -> Tensor:
    """Row attention, then column attention on its output, then output projection.

    Returns the refinement only; callers add the residual.
    """
    T._check_rank4(h, "axial_attention")
    row = attention_core(h, p.wq, p.wk, p.wv, heads, weights_out)
    cq = p.col_wq if p.col_wq is not None else p.wq
    ck = p.col_wk if p.col_wk is not None else p.wk
    cv = p.col_wv if p.col_wv is not None else p.wv
    col = attention_core(row.transpose(0, 2, 1, 3), cq, ck, cv, heads, weights_out)
    return col.transpose(0, 2, 1, 3) @ p.wo


def sinusoidal_encoding(length: int, dim: int, season_period: float) -> np.ndarray:
    """Fixed (length, dim) encoding; the fastest frequency completes one cycle per season.

    ``P[t, 2i] = sin(t w_i)``, ``P[t, 2i+1] = cos(t w_i)`` with
    ``w_i = (2 pi / season_period) * 10000 ** (-2 i / dim)``.
    """
    if dim % 2:
        raise ConfigError(f"encoding dim must be even, got {dim}")
    t = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim // 2, dtype=np.float64)[None, :]
    omega = (2.0 * np.pi / season_period) * 10000.0 ** (-2.0 * i / dim)
    P = np.empty((length, dim))
    P[:, 0::2] = np.sin(t * omega)
    P[:, 1::2] = np.cos(t * omega)
    return P


@dataclass
class MHAParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor


def temporal_mha(
    S: Tensor, P: np.ndarray, heads: int, p: MHAParams, residual: bool = True, weights_out: list | None = None
) -> Tensor:
    """Non-causal self-attention over the timestep embeddings (axis -2).

    ``Z = X + MHA(X)`` with ``X = S + P``; ``residual=False`` gives ``MHA(X)``.
    """
    x = S + P
    out = attention_core(x, p.wq, p.wk, p.wv, heads, weights_out) @ p.wo
    return x + out if residual else out


def subspace_embed(
    h: Tensor, w_s: Tensor, pooling: str = "mean", score_w: Tensor | None = None, weights_out: list | None = None
) -> Tensor:
    """1x1 projection F -> D followed by global pooling, giving (n, D).

    ``pooling="attn"`` softmaxes a learned per-site score (``score_w``,
    shape (D, 1)) over all H*W sites.
    """
    proj = T.conv2d_pointwise(h, w_s)
    if pooling == "mean":
        return T.global_avg_pool(proj)
    if pooling != "attn":
        raise ConfigError(f"unknown pooling {pooling!r}")
    if score_w is None:
        raise ConfigError("attn pooling needs score weights")
    n, hh, ww, d = proj.shape
    scores = T.conv2d_pointwise(proj, score_w).reshape(n, hh * ww)
    a = T.softmax(scores, axis=-1)
    if weights_out is not None:
        weights_out.append(a.data)
    return (proj.reshape(n, hh * ww, d) * a.reshape(n, hh * ww, 1)).sum(axis=1)
