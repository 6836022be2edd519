import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from faconvlstm import tensor as T
from faconvlstm.blocks import (
    AxialAttnParams,
    MHAParams,
    ModelConfig,
    axial_attention,
    bottleneck_project,
    multiscale_depthwise_mix,
    se_gates,
    se_recalibrate,
    sinusoidal_encoding,
    subspace_embed,
    temporal_mha,
)
from faconvlstm.tensor import ConfigError, Tensor


def _sig(v):
    return 1.0 / (1.0 + np.exp(-v))


def _softmax_loop(logits):
    m = max(logits)
    e = [math.exp(v - m) for v in logits]
    s = sum(e)
    return [v / s for v in e]


def _attend_loop(seq, wq, wk, wv, heads):
    """Explicit per-head, per-query loop over a list of feature vectors."""
    L, F = seq.shape
    dh = F // heads
    q, k, v = seq @ wq, seq @ wk, seq @ wv
    out = np.zeros((L, F))
    for hd in range(heads):
        sl = slice(hd * dh, (hd + 1) * dh)
        for a in range(L):
            logits = [float(q[a, sl] @ k[b, sl]) / math.sqrt(dh) for b in range(L)]
            w = _softmax_loop(logits)
            for b in range(L):
                out[a, sl] += w[b] * v[b, sl]
    return out


# ---------------------------------------------------------------- config


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(kernel_set=((4, 1),))
    with pytest.raises(ConfigError):
        ModelConfig(kernel_set=((3, 0),))
    with pytest.raises(ConfigError):
        ModelConfig(bottleneck=0)
    with pytest.raises(ConfigError):
        ModelConfig(hidden=6, norm_groups=4)
    with pytest.raises(ConfigError):
        ModelConfig(attn_interval=0)
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"hiden": 3})


def test_config_roundtrip():
    cfg = ModelConfig(hidden=8, bottleneck=2, kernel_set=((3, 1), (3, 3)))
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------- bottleneck


def test_bottleneck_constant_input_normalizes_to_zero():
    cfg = ModelConfig(in_channels=2, bottleneck=2, hidden=4, norm_scope="site")
    x = Tensor(np.full((1, 3, 3, 2), 1.7))
    out = bottleneck_project(x, Tensor(np.eye(2)), Tensor(np.ones(2)), Tensor(np.zeros(2)), cfg)
    np.testing.assert_array_equal(out.data, 0.0)
    cfg = ModelConfig(in_channels=2, bottleneck=2, hidden=4, norm_scope="sample")
    out = bottleneck_project(x, Tensor(np.eye(2)), Tensor(np.ones(2)), Tensor(np.zeros(2)), cfg)
    np.testing.assert_array_equal(out.data, 0.0)


def test_bottleneck_inference_ignores_dropout_seed(rng):
    cfg = ModelConfig(in_channels=3, bottleneck=2, dropout_rate=0.5)
    x, w = Tensor(rng.normal(size=(1, 4, 4, 3))), Tensor(rng.normal(size=(3, 2)))
    g, b = Tensor(np.ones(2)), Tensor(np.zeros(2))
    a = bottleneck_project(x, w, g, b, cfg, training=False, rng=np.random.default_rng(1))
    c = bottleneck_project(x, w, g, b, cfg, training=False, rng=np.random.default_rng(2))
    assert a.data.tobytes() == c.data.tobytes()


def test_bottleneck_dropout_is_unbiased(rng):
    cfg = ModelConfig(in_channels=2, bottleneck=2, dropout_rate=0.5)
    x, w = Tensor(rng.normal(size=(1, 2, 2, 2))), Tensor(rng.normal(size=(2, 2)))
    g, b = Tensor(np.ones(2)), Tensor(np.zeros(2))
    ref = bottleneck_project(x, w, g, b, cfg).data
    draws = np.stack(
        [bottleneck_project(x, w, g, b, cfg, training=True, rng=np.random.default_rng(s)).data for s in range(10_000)]
    )
    se = draws.std(axis=0) / math.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - ref) <= 3 * se + 1e-12)


# ---------------------------------------------------------------- multiscale mix


def test_mix_single_branch_is_plain_depthwise(rng):
    u, k = rng.normal(size=(1, 5, 5, 4)), rng.normal(size=(5, 5, 4))
    a = multiscale_depthwise_mix(Tensor(u), [Tensor(k)], ((5, 1),)).data
    np.testing.assert_array_equal(a, T.conv2d_depthwise(Tensor(u), Tensor(k), 1).data)


def test_mix_opposite_branches_cancel(rng):
    u, k = rng.normal(size=(1, 5, 5, 2)), rng.normal(size=(3, 3, 2))
    out = multiscale_depthwise_mix(Tensor(u), [Tensor(k), Tensor(-k)], ((3, 1), (3, 1))).data
    np.testing.assert_allclose(out, 0.0, atol=1e-15)


def test_mix_default_branches_match_loop_sum(rng):
    ks = ((3, 1), (5, 1), (3, 2))
    u = rng.normal(size=(1, 6, 6, 4))
    kern = [rng.normal(size=(k, k, 4)) for k, _ in ks]
    ref = sum(oracles.depthwise(u, kk, d) for kk, (_, d) in zip(kern, ks))
    out = multiscale_depthwise_mix(Tensor(u), [Tensor(kk) for kk in kern], ks).data
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_mix_empty_kernel_set():
    with pytest.raises(ConfigError):
        multiscale_depthwise_mix(Tensor(np.zeros((1, 2, 2, 2))), [], ())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 3), st.integers(0, 2**31 - 1))
def test_mix_never_mixes_channels(ch, seed):
    r = np.random.default_rng(seed)
    ks = ((3, 1), (5, 1), (3, 2))
    u = r.normal(size=(1, 5, 5, 4))
    kern = [Tensor(r.normal(size=(k, k, 4))) for k, _ in ks]
    base = multiscale_depthwise_mix(Tensor(u), kern, ks).data
    u2 = u.copy()
    u2[..., ch] += r.normal(size=(5, 5))
    moved = multiscale_depthwise_mix(Tensor(u2), kern, ks).data
    others = [c for c in range(4) if c != ch]
    np.testing.assert_array_equal(moved[..., others], base[..., others])


# ---------------------------------------------------------------- SE


def test_se_zero_weights_half_gate(rng):
    d = rng.normal(size=(2, 3, 3, 4))
    out = se_recalibrate(Tensor(d), Tensor(np.zeros((4, 1))), Tensor(np.zeros((1, 4)))).data
    np.testing.assert_array_equal(out, d * 0.5)


def test_se_zero_input_gives_zero(rng):
    out = se_recalibrate(Tensor(np.zeros((1, 2, 2, 4))), Tensor(rng.normal(size=(4, 2))), Tensor(rng.normal(size=(2, 4))))
    np.testing.assert_array_equal(out.data, 0.0)


def test_se_step_by_step(rng):
    d, w1, w2 = rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(4, 2)), rng.normal(size=(2, 4))
    out = se_recalibrate(Tensor(d), Tensor(w1), Tensor(w2)).data
    for n in range(2):
        pooled = d[n].reshape(-1, 4).mean(axis=0)
        gate = _sig(np.maximum(pooled @ w1, 0.0) @ w2)
        np.testing.assert_allclose(out[n], d[n] * gate, atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_se_gates_in_unit_interval_and_shrink(seed):
    r = np.random.default_rng(seed)
    d = Tensor(r.normal(size=(1, 3, 3, 4)))
    w1, w2 = Tensor(r.normal(size=(4, 2))), Tensor(r.normal(size=(2, 4)))
    g = se_gates(d, w1, w2).data
    assert np.all((g > 0) & (g < 1))
    assert np.all(np.abs(se_recalibrate(d, w1, w2).data) <= np.abs(d.data))


# ---------------------------------------------------------------- axial attention


def _axial_params(r, F, zero_out=False):
    ws = [Tensor(r.normal(size=(F, F))) for _ in range(3)]
    wo = Tensor(np.zeros((F, F)) if zero_out else r.normal(size=(F, F)))
    return AxialAttnParams(*ws, wo)


def test_axial_zero_output_projection_is_exact_identity(rng):
    h = Tensor(rng.normal(size=(1, 4, 5, 4)))
    out = h + axial_attention(h, _axial_params(rng, 4, zero_out=True), 2)
    assert out.data.tobytes() == h.data.tobytes()


def test_axial_uniform_attention_gives_mean_of_means(rng):
    F = 3
    h = rng.normal(size=(1, 3, 4, F))
    p = AxialAttnParams(Tensor(np.zeros((F, F))), Tensor(np.zeros((F, F))), Tensor(np.eye(F)), Tensor(np.eye(F)))
    out = axial_attention(Tensor(h), p, 1).data
    expect = h[0].mean(axis=1).mean(axis=0)  # column-mean of the row-means
    np.testing.assert_allclose(out[0], np.broadcast_to(expect, (3, 4, F)), atol=1e-13)


@pytest.mark.parametrize("heads", [1, 2])
def test_axial_matches_double_loop(rng, heads):
    H = W = 3
    F = 4
    h = rng.normal(size=(1, H, W, F))
    p = _axial_params(rng, F)
    wq, wk, wv, wo = (t.data for t in (p.wq, p.wk, p.wv, p.wo))
    rows = np.stack([_attend_loop(h[0, i], wq, wk, wv, heads) for i in range(H)])
    cols = np.stack([_attend_loop(rows[:, j], wq, wk, wv, heads) for j in range(W)], axis=1)
    np.testing.assert_allclose(axial_attention(Tensor(h), p, heads).data[0], cols @ wo, atol=1e-10)


def test_axial_unshared_projections_differ(rng):
    F = 4
    h = Tensor(rng.normal(size=(1, 3, 3, F)))
    p = _axial_params(rng, F)
    p2 = AxialAttnParams(p.wq, p.wk, p.wv, p.wo, *(Tensor(rng.normal(size=(F, F))) for _ in range(3)))
    assert not np.allclose(axial_attention(h, p, 1).data, axial_attention(h, p2, 1).data)


def test_attention_weights_sum_to_one(rng):
    h = Tensor(rng.normal(size=(1, 3, 5, 4)))
    ws = []
    axial_attention(h, _axial_params(rng, 4), 2, weights_out=ws)
    S = Tensor(rng.normal(size=(1, 6, 4)))
    temporal_mha(S, sinusoidal_encoding(6, 4, 12.0), 2, MHAParams(*(Tensor(rng.normal(size=(4, 4))) for _ in range(4))), weights_out=ws)
    subspace_embed(h, Tensor(rng.normal(size=(4, 2))), "attn", Tensor(rng.normal(size=(2, 1))), weights_out=ws)
    assert len(ws) == 4
    for w in ws:
        assert np.abs(w.sum(axis=-1) - 1.0).max() <= 1e-12


# ---------------------------------------------------------------- encoding + temporal MHA


def test_encoding_examples():
    P = sinusoidal_encoding(30, 6, 24.0)
    np.testing.assert_array_equal(P[0], [0, 1, 0, 1, 0, 1])
    assert np.abs(P).max() <= 1.0
    assert abs(P[24, 0]) <= 1e-9
    assert sinusoidal_encoding(30, 6, 24.0).tobytes() == P.tobytes()
    with pytest.raises(ConfigError):
        sinusoidal_encoding(4, 5, 24.0)


def test_encoding_schedule():
    P = sinusoidal_encoding(5, 8, 10.0)
    for i in range(4):
        w = (2 * np.pi / 10.0) * 10000.0 ** (-2 * i / 8)
        np.testing.assert_allclose(P[:, 2 * i], np.sin(np.arange(5) * w), atol=1e-15)
        np.testing.assert_allclose(P[:, 2 * i + 1], np.cos(np.arange(5) * w), atol=1e-15)


def _mha_params(r, D, zero=False):
    return MHAParams(*(Tensor(np.zeros((D, D)) if zero else r.normal(size=(D, D))) for _ in range(4)))


def test_temporal_single_token(rng):
    S = rng.normal(size=(1, 1, 4))
    p = _mha_params(rng, 4)
    P = sinusoidal_encoding(1, 4, 12.0)
    x = S + P
    expect = x + (x @ p.wv.data) @ p.wo.data
    np.testing.assert_allclose(temporal_mha(Tensor(S), P, 2, p).data, expect, atol=1e-13)


def test_temporal_zero_params_is_s_plus_p(rng):
    S = rng.normal(size=(1, 5, 4))
    P = sinusoidal_encoding(5, 4, 12.0)
    out = temporal_mha(Tensor(S), P, 2, _mha_params(rng, 4, zero=True)).data
    np.testing.assert_array_equal(out, S + P)


@pytest.mark.parametrize("residual", [True, False])
def test_temporal_matches_head_loop(rng, residual):
    S = rng.normal(size=(4, 4))
    p = _mha_params(rng, 4)
    P = sinusoidal_encoding(4, 4, 12.0)
    x = S + P
    core = _attend_loop(x, p.wq.data, p.wk.data, p.wv.data, 2) @ p.wo.data
    expect = x + core if residual else core
    out = temporal_mha(Tensor(S[None]), P, 2, p, residual=residual).data[0]
    np.testing.assert_allclose(out, expect, atol=1e-10)


# ---------------------------------------------------------------- subspace head


def test_subspace_constant_field(rng):
    v, w = rng.normal(size=3), rng.normal(size=(3, 2))
    h = np.broadcast_to(v, (1, 4, 4, 3)).copy()
    np.testing.assert_allclose(subspace_embed(Tensor(h), Tensor(w)).data[0], v @ w, atol=1e-14)


def test_subspace_attn_zero_score_equals_mean(rng):
    h, w = Tensor(rng.normal(size=(2, 3, 5, 4))), Tensor(rng.normal(size=(4, 3)))
    a = subspace_embed(h, w, "attn", Tensor(np.zeros((3, 1)))).data
    np.testing.assert_allclose(a, subspace_embed(h, w).data, atol=1e-12)


def test_subspace_mean_is_conv_then_gap(rng):
    h, w = rng.normal(size=(1, 3, 4, 5)), rng.normal(size=(5, 2))
    ref = oracles.pointwise(h, w).mean(axis=(1, 2))
    np.testing.assert_allclose(subspace_embed(Tensor(h), Tensor(w)).data, ref, atol=1e-12)
