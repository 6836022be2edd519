"""Finite-difference gradient suite over every differentiable op and the full cell.

Each case builds fresh random leaves, reduces the op output to a scalar
through a fixed random projection, and compares ``backward`` against
central differences.  Used by the ``gradcheck`` CLI command and the tests.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .blocks import (
    AxialAttnParams,
    MHAParams,
    ModelConfig,
    axial_attention,
    se_recalibrate,
    sinusoidal_encoding,
    subspace_embed,
    temporal_mha,
)
from .cell import ConvLSTM2D, ConvLSTMConfig, FAConvLSTM
from .objectives import laplacian_smoothness, reconstruction_loss, temporal_consistency
from .tensor import Tensor

TOLERANCE = 1e-4
STEP = 1e-5


@dataclass
class CaseResult:
    name: str
    instances: int
    max_error: float
    seconds: float

    @property
    def ok(self) -> bool:
        return self.max_error <= TOLERANCE


def _leaf(rng, *shape, low=None):
    a = rng.normal(size=shape)
    if low is not None:
        # keep values away from kinks / the domain boundary
        a = np.sign(a) * (np.abs(a) + low)
    return Tensor(a, requires_grad=True)


def _project(y: Tensor, rng) -> Callable[[Tensor], Tensor]:
    r = rng.normal(size=y.shape)
    return lambda out: T.tsum(out * r)


def _case(fn):
    """Wrap ``fn(rng) -> (leaves, forward)`` into ``rng -> (leaves, build_loss)``."""

    def build(rng):
        leaves, forward = fn(rng)
        proj = _project(forward(), rng)
        return leaves, lambda: proj(forward())

    build.__name__ = fn.__name__
    return build


def _shape(rng, rank=2, lo=1, hi=4):
    return tuple(int(v) for v in rng.integers(lo, hi + 1, size=rank))


@_case
def add(rng):
    a = _leaf(rng, *_shape(rng, 3))
    b = _leaf(rng, a.shape[-1])  # broadcast along leading axes
    return [a, b], lambda: a + b


@_case
def sub(rng):
    a = _leaf(rng, *_shape(rng, 2))
    b = _leaf(rng, a.shape[0], 1)
    return [a, b], lambda: a - b


@_case
def mul(rng):
    a = _leaf(rng, *_shape(rng, 3))
    b = _leaf(rng, 1, *a.shape[1:])
    return [a, b], lambda: a * b


def _unary(op, low=None, positive=False):
    def fn(rng):
        x = _leaf(rng, *_shape(rng, 2), low=low)
        if positive:
            x.data = np.abs(x.data) + 0.5
        return [x], lambda: op(x)

    fn.__name__ = op.__name__
    return _case(fn)


sigmoid = _unary(T.sigmoid)
tanh = _unary(T.tanh)
relu = _unary(T.relu, low=0.05)
exp = _unary(T.exp)
sin = _unary(T.sin)
square = _unary(T.square)
sqrt = _unary(T.sqrt, positive=True)


@_case
def tsum(rng):
    x = _leaf(rng, *_shape(rng, 3))
    axis, keep = int(rng.integers(3)), bool(rng.integers(2))
    return [x], lambda: T.tsum(x, axis=axis, keepdims=keep)


@_case
def mean(rng):
    x = _leaf(rng, *_shape(rng, 3))
    return [x], lambda: T.mean(x, axis=(0, 2))


@_case
def reshape_transpose(rng):
    x = _leaf(rng, 2, 3, 4)
    return [x], lambda: x.reshape(3, 8).transpose(1, 0)


@_case
def getitem(rng):
    x = _leaf(rng, 4, 5)
    idx = rng.integers(0, 4, size=6)  # repeated rows exercise accumulation
    return [x], lambda: x[1:3, ::2] * 1.0 + T.tsum(x[idx], axis=0)[:3]


@_case
def concat_stack(rng):
    a, b = _leaf(rng, 2, 3), _leaf(rng, 2, 2)
    return [a, b], lambda: T.stack([T.concat([a, b], axis=-1), T.concat([b, a], axis=-1)], axis=1)


@_case
def matmul(rng):
    n, m, k = _shape(rng, 3)
    a, b = _leaf(rng, 2, n, k), _leaf(rng, k, m)
    return [a, b], lambda: a @ b


@_case
def softmax(rng):
    x = _leaf(rng, *_shape(rng, 2, 2, 5))
    return [x], lambda: T.softmax(x, axis=-1)


@_case
def dropout(rng):
    x = _leaf(rng, 3, 4)
    seed = int(rng.integers(1 << 30))
    return [x], lambda: T.dropout(x, 0.3, np.random.default_rng(seed), training=True)


def _img(rng, c=None):
    n, h, w = int(rng.integers(1, 3)), int(rng.integers(1, 5)), int(rng.integers(1, 5))
    return _leaf(rng, n, h, w, c or int(rng.integers(1, 4)))


@_case
def conv2d_pointwise(rng):
    x = _img(rng)
    w, b = _leaf(rng, x.shape[-1], 3), _leaf(rng, 3)
    return [x, w, b], lambda: T.conv2d_pointwise(x, w, b)


@_case
def conv2d_depthwise(rng):
    x = _img(rng)
    k, d = int(rng.choice([1, 3, 5])), int(rng.integers(1, 3))
    kern = _leaf(rng, k, k, x.shape[-1])
    return [x, kern], lambda: T.conv2d_depthwise(x, kern, d)


@_case
def conv2d_full(rng):
    x = _img(rng)
    k, d = int(rng.choice([1, 3])), int(rng.integers(1, 3))
    kern, b = _leaf(rng, k, k, x.shape[-1], 2), _leaf(rng, 2)
    return [x, kern, b], lambda: T.conv2d_full(x, kern, b, d)


@_case
def global_avg_pool(rng):
    x = _img(rng)
    return [x], lambda: T.global_avg_pool(x)


@_case
def layer_norm(rng):
    g = int(rng.integers(1, 3))
    x = _img(rng, c=2 * g)
    gamma, beta = _leaf(rng, x.shape[-1]), _leaf(rng, x.shape[-1])
    return [x, gamma, beta], lambda: T.layer_norm(x, gamma, beta, 1e-5, g)


@_case
def group_norm(rng):
    g = int(rng.integers(1, 3))
    x = _img(rng, c=2 * g)
    gamma, beta = _leaf(rng, x.shape[-1]), _leaf(rng, x.shape[-1])
    return [x, gamma, beta], lambda: T.group_norm(x, gamma, beta, 1e-5, g)


@_case
def se_block(rng):
    x = _img(rng, c=4)
    w1, w2 = _leaf(rng, 4, 2), _leaf(rng, 2, 4)
    return [x, w1, w2], lambda: se_recalibrate(x, w1, w2)


@_case
def axial(rng):
    x = _img(rng, c=4)
    ws = [_leaf(rng, 4, 4) for _ in range(4)]
    heads = int(rng.choice([1, 2]))
    return [x, *ws], lambda: axial_attention(x, AxialAttnParams(*ws), heads)


@_case
def temporal_attention(rng):
    n, t = int(rng.integers(1, 3)), int(rng.integers(1, 6))
    S = _leaf(rng, n, t, 4)
    ws = [_leaf(rng, 4, 4) for _ in range(4)]
    P = sinusoidal_encoding(t, 4, 6.0)
    return [S, *ws], lambda: temporal_mha(S, P, 2, MHAParams(*ws))


@_case
def attn_pooling(rng):
    x = _img(rng, c=3)
    w_s, score = _leaf(rng, 3, 2), _leaf(rng, 2, 1)
    return [x, w_s, score], lambda: subspace_embed(x, w_s, "attn", score)


@_case
def regularizers(rng):
    hs = [_img(rng, c=2)]
    hs.append(_leaf(rng, *hs[0].shape))
    S = _leaf(rng, 4, 3)
    w, b = _leaf(rng, 2, 2), _leaf(rng, 2)
    x = rng.normal(size=(2,) + hs[0].shape)
    return [*hs, S, w, b], lambda: T.stack(
        [laplacian_smoothness(hs), laplacian_smoothness(hs, normalize=False), reconstruction_loss(x, hs, w, b), temporal_consistency(S)]
    )


def _randomize(store, rng):
    # zero-initialized weights (SE W2, peepholes) would hide their gradient paths
    for _, p in store.items():
        p.data = p.data + 0.3 * rng.normal(size=p.shape)
        p.requires_grad = True


def _sequence_case(model, x, rng):
    _randomize(model.params, rng)
    leaves = [p for _, p in model.params.items()]

    def forward():
        out = model.forward(x)
        return T.concat([T.stack(out.hidden).reshape(-1), out.Z.reshape(-1)], axis=0)

    return leaves, forward


@_case
def fa_sequence(rng):
    pooling = str(rng.choice(["mean", "attn"]))
    cfg = ModelConfig(
        in_channels=2, hidden=4, bottleneck=2, kernel_set=((3, 1), (3, 2)), se_ratio=2,
        attn_interval=3, subspace_dim=4, temporal_heads=2, season_period=6.0, pooling=pooling,
    )
    model = FAConvLSTM(cfg, seed=int(rng.integers(1 << 30)))
    x = rng.normal(size=(3, 1, 3, 3, 2))
    return _sequence_case(model, x, rng)


@_case
def convlstm_sequence(rng):
    model = ConvLSTM2D(ConvLSTMConfig(in_channels=2, hidden=2, kernel_size=3), seed=int(rng.integers(1 << 30)))
    x = rng.normal(size=(3, 1, 3, 3, 2))
    return _sequence_case(model, x, rng)


CASES = [
    add, sub, mul, sigmoid, tanh, relu, exp, sin, square, sqrt, tsum, mean, reshape_transpose,
    getitem, concat_stack, matmul, softmax, dropout, conv2d_pointwise, conv2d_depthwise,
    conv2d_full, global_avg_pool, layer_norm, group_norm, se_block, axial, temporal_attention,
    attn_pooling, regularizers, fa_sequence, convlstm_sequence,
]


def run_case(case, seed: int = 0, instances: int = 20) -> CaseResult:
    rng = np.random.default_rng([seed, CASES.index(case)])
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(instances):
        leaves, build_loss = case(rng)
        worst = max(worst, T.check_gradients(leaves, build_loss, STEP))
    return CaseResult(case.__name__, instances, worst, time.perf_counter() - t0)


def run_suite(seed: int = 0, instances: int = 20) -> list[CaseResult]:
    return [run_case(c, seed, instances) for c in CASES]
