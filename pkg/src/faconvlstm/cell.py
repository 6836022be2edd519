"""FAConvLSTM cell and sequence runner, plus the ConvLSTM2D baseline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .blocks import (
    AxialAttnParams,
    MHAParams,
    ModelConfig,
    axial_attention,
    bottleneck_project,
    glorot,
    multiscale_depthwise_mix,
    normalize,
    se_recalibrate,
    sinusoidal_encoding,
    subspace_embed,
    temporal_mha,
)
from .store import ParameterStore
from .tensor import ConfigError, DimensionError, Tensor, mac_scope


@dataclass
class CellState:
    h: Tensor
    c: Tensor

    @classmethod
    def zeros(cls, n: int, height: int, width: int, channels: int) -> "CellState":
        z = np.zeros((n, height, width, channels))
        return cls(Tensor(z), Tensor(z.copy()))


@dataclass
class SequenceOutput:
    hidden: list[Tensor]
    S: Tensor  # (n, T, D)
    Z: Tensor  # (n, T, D)
    axial_steps: list[int] = field(default_factory=list)


def _as_steps(x) -> list[Tensor]:
    """Accept a (T, n, h, w, c) array or a list of (n, h, w, c) tensors."""
    if isinstance(x, np.ndarray):
        if x.ndim != 5:
            raise DimensionError(f"sequence array must be (T,n,h,w,c), got {x.shape}")
        return [Tensor(x[t]) for t in range(x.shape[0])]
    return [T.as_tensor(xt) for xt in x]


# --------------------------------------------------------------------------
# FAConvLSTM


def init_fa_params(cfg: ModelConfig, rng: np.random.Generator) -> ParameterStore:
    C, F, Cb, D = cfg.in_channels, cfg.hidden, cfg.bottleneck, cfg.subspace_dim
    s = ParameterStore()
    s.add("bottleneck_x/weight", glorot(rng, (C, Cb), C, Cb))
    s.add("bottleneck_x/gamma", np.ones(Cb))
    s.add("bottleneck_x/beta", np.zeros(Cb))
    s.add("bottleneck_h/weight", glorot(rng, (F, Cb), F, Cb))
    s.add("bottleneck_h/gamma", np.ones(Cb))
    s.add("bottleneck_h/beta", np.zeros(Cb))
    for b, (k, _d) in enumerate(cfg.kernel_set):
        s.add(f"mix/branch{b}", glorot(rng, (k, k, 2 * Cb), k * k, k * k))
    r = cfg.se_inner
    s.add("se/w1", glorot(rng, (2 * Cb, r), 2 * Cb, r))
    s.add("se/w2", np.zeros((r, 2 * Cb)))
    s.add("mix_norm/gamma", np.ones(2 * Cb))
    s.add("mix_norm/beta", np.zeros(2 * Cb))
    s.add("gates/weight", glorot(rng, (2 * Cb, 4 * F), 2 * Cb, 4 * F))
    bias = np.zeros(4 * F)
    bias[F : 2 * F] = cfg.forget_bias
    s.add("gates/bias", bias)
    if cfg.peepholes:
        s.add("peephole/w_ci", np.zeros(F))
        s.add("peephole/w_cf", np.zeros(F))
    if cfg.axial:
        names = ["wq", "wk", "wv"] if cfg.share_axial_qkv else ["wq", "wk", "wv", "col_wq", "col_wk", "col_wv"]
        for nm in names + ["wo"]:
            s.add(f"axial/{nm}", glorot(rng, (F, F), F, F))
    s.add("subspace/w_s", glorot(rng, (F, D), F, D))
    if cfg.pooling == "attn":
        s.add("subspace/score", glorot(rng, (D, 1), D, 1))
    for nm in ("wq", "wk", "wv", "wo"):
        s.add(f"temporal/{nm}", glorot(rng, (D, D), D, D))
    return s


def _axial_params(p: ParameterStore, cfg: ModelConfig) -> AxialAttnParams:
    extra = {}
    if not cfg.share_axial_qkv:
        extra = {k: p[f"axial/{k}"] for k in ("col_wq", "col_wk", "col_wv")}
    return AxialAttnParams(p["axial/wq"], p["axial/wk"], p["axial/wv"], p["axial/wo"], **extra)


def fa_cell_step(
    x_t: Tensor,
    state: CellState,
    p: ParameterStore,
    cfg: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> CellState:
    """One recurrent update (without axial refinement)."""
    F = cfg.hidden
    if x_t.shape[-1] != cfg.in_channels:
        raise DimensionError(f"input channel axis is {x_t.shape[-1]}, config expects {cfg.in_channels}")
    if state.h.shape[-1] != F or state.h.shape != state.c.shape or state.h.shape[:3] != x_t.shape[:3]:
        raise DimensionError(f"state shape {state.h.shape} does not match input {x_t.shape} / hidden {F}")
    with mac_scope("bottleneck"):
        z = bottleneck_project(x_t, p["bottleneck_x/weight"], p["bottleneck_x/gamma"], p["bottleneck_x/beta"], cfg, training, rng)
        r = bottleneck_project(state.h, p["bottleneck_h/weight"], p["bottleneck_h/gamma"], p["bottleneck_h/beta"], cfg, training, rng)
    u = T.concat([z, r], axis=-1)
    with mac_scope("depthwise"):
        kernels = [p[f"mix/branch{b}"] for b in range(len(cfg.kernel_set))]
        d = multiscale_depthwise_mix(u, kernels, cfg.kernel_set)
    with mac_scope("se"):
        d = se_recalibrate(d, p["se/w1"], p["se/w2"])
    d = normalize(d, p["mix_norm/gamma"], p["mix_norm/beta"], cfg)
    with mac_scope("gates"):
        g = T.conv2d_pointwise(d, p["gates/weight"], p["gates/bias"])
    i, f, o, cand = g[..., :F], g[..., F : 2 * F], g[..., 2 * F : 3 * F], g[..., 3 * F :]
    if cfg.peepholes:
        i = i + p["peephole/w_ci"] * state.c
        f = f + p["peephole/w_cf"] * state.c
    c = T.sigmoid(f) * state.c + T.sigmoid(i) * T.tanh(cand)
    h = T.sigmoid(o) * T.tanh(c)
    return CellState(h, c)


def fa_sequence_forward(
    x,
    p: ParameterStore,
    cfg: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> SequenceOutput:
    """Run the layer over a sequence from zero initial state.

    At 1-indexed steps ``t`` with ``t % attn_interval == 0`` the hidden
    state is refined in place by axial attention before it is carried
    forward and before the subspace head reads it.
    """
    steps = _as_steps(x)
    if not steps:
        raise ValueError("empty input sequence")
    n, hh, ww, _ = steps[0].shape
    state = CellState.zeros(n, hh, ww, cfg.hidden)
    hidden, embeds, axial_steps = [], [], []
    axial = _axial_params(p, cfg) if cfg.axial else None
    score = p["subspace/score"] if cfg.pooling == "attn" else None
    for t, x_t in enumerate(steps, start=1):
        state = fa_cell_step(x_t, state, p, cfg, training, rng)
        if axial is not None and t % cfg.attn_interval == 0:
            with mac_scope("axial"):
                h = state.h + axial_attention(state.h, axial, cfg.axial_heads)
            state = CellState(h, state.c)
            axial_steps.append(t)
        hidden.append(state.h)
        with mac_scope("subspace"):
            embeds.append(subspace_embed(state.h, p["subspace/w_s"], cfg.pooling, score))
    S = T.stack(embeds, axis=1)
    P = sinusoidal_encoding(len(steps), cfg.subspace_dim, cfg.season_period)
    mha = MHAParams(p["temporal/wq"], p["temporal/wk"], p["temporal/wv"], p["temporal/wo"])
    with mac_scope("temporal"):
        Z = temporal_mha(S, P, cfg.temporal_heads, mha, cfg.mha_residual)
    return SequenceOutput(hidden, S, Z, axial_steps)


class FAConvLSTM:
    """Parameters plus config; a drop-in recurrent layer over (T, n, h, w, C) input."""

    arch = "faconvlstm"

    def __init__(self, cfg: ModelConfig, seed: int = 0, params: ParameterStore | None = None):
        self.cfg = cfg
        self.params = params if params is not None else init_fa_params(cfg, np.random.default_rng(seed))

    @property
    def hidden_channels(self) -> int:
        return self.cfg.hidden

    @property
    def embedding_dim(self) -> int:
        return self.cfg.subspace_dim

    def forward(self, x, training: bool = False, rng=None) -> SequenceOutput:
        return fa_sequence_forward(x, self.params, self.cfg, training, rng)


# --------------------------------------------------------------------------
# ConvLSTM2D baseline

GATES = ("i", "f", "o", "g")


@dataclass
class ConvLSTMConfig:
    in_channels: int = 4
    hidden: int = 16
    kernel_size: int = 3
    forget_bias: float = 1.0

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.in_channels < 1 or self.hidden < 1:
            raise ConfigError("in_channels and hidden must be >= 1")


def init_convlstm_params(cfg: ConvLSTMConfig, rng: np.random.Generator) -> ParameterStore:
    k, C, F = cfg.kernel_size, cfg.in_channels, cfg.hidden
    s = ParameterStore()
    for gname in GATES:
        s.add(f"{gname}/w_x", glorot(rng, (k, k, C, F), k * k * C, k * k * F))
        s.add(f"{gname}/w_h", glorot(rng, (k, k, F, F), k * k * F, k * k * F))
        s.add(f"{gname}/bias", np.full(F, cfg.forget_bias if gname == "f" else 0.0))
    return s


def convlstm2d_step(x_t: Tensor, state: CellState, p: ParameterStore, k: int) -> CellState:
    """Classic ConvLSTM update with per-gate full convolutions and no peepholes."""
    F = state.h.shape[-1]
    if p["i/w_x"].shape[0] != k:
        raise DimensionError(f"kernel axis 0 is {p['i/w_x'].shape[0]}, expected {k}")
    if state.h.shape[:3] != x_t.shape[:3]:
        raise DimensionError(f"state shape {state.h.shape} does not match input {x_t.shape}")
    wx = T.concat([p[f"{g}/w_x"] for g in GATES], axis=-1)
    wh = T.concat([p[f"{g}/w_h"] for g in GATES], axis=-1)
    b = T.concat([p[f"{g}/bias"] for g in GATES], axis=-1)
    with mac_scope("conv_x"):
        gx = T.conv2d_full(x_t, wx, b)
    with mac_scope("conv_h"):
        gh = T.conv2d_full(state.h, wh)
    g = gx + gh
    i, f, o, cand = g[..., :F], g[..., F : 2 * F], g[..., 2 * F : 3 * F], g[..., 3 * F :]
    c = T.sigmoid(f) * state.c + T.sigmoid(i) * T.tanh(cand)
    h = T.sigmoid(o) * T.tanh(c)
    return CellState(h, c)


class ConvLSTM2D:
    """Baseline layer; its per-step embedding is the spatial mean of H_t."""

    arch = "convlstm2d"

    def __init__(self, cfg: ConvLSTMConfig, seed: int = 0, params: ParameterStore | None = None):
        self.cfg = cfg
        self.params = params if params is not None else init_convlstm_params(cfg, np.random.default_rng(seed))

    @property
    def hidden_channels(self) -> int:
        return self.cfg.hidden

    @property
    def embedding_dim(self) -> int:
        return self.cfg.hidden

    def forward(self, x, training: bool = False, rng=None) -> SequenceOutput:
        steps = _as_steps(x)
        if not steps:
            raise ValueError("empty input sequence")
        n, hh, ww, _ = steps[0].shape
        state = CellState.zeros(n, hh, ww, self.cfg.hidden)
        hidden, embeds = [], []
        for x_t in steps:
            state = convlstm2d_step(x_t, state, self.params, self.cfg.kernel_size)
            hidden.append(state.h)
            embeds.append(T.global_avg_pool(state.h))
        S = T.stack(embeds, axis=1)
        return SequenceOutput(hidden, S, S)
