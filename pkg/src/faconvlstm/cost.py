"""Exact parameter and multiply-accumulate (MAC) accounting.

One MAC is one FLOP unit.  Only linear operators (1x1, depthwise and dense
convolutions, matrix products) are counted; normalizations, activations,
bias and residual additions are not.  Bias/residual additions are reported
separately in ``extra_adds``.  Dominant terms evaluate the two published
big-O expressions with all constants taken as exact coefficients.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from . import tensor as T
from .blocks import ModelConfig
from .cell import ConvLSTM2D, ConvLSTMConfig, FAConvLSTM

FA_SCOPES = ("bottleneck", "depthwise", "se", "gates", "axial", "subspace", "temporal")
CL_SCOPES = ("conv_x", "conv_h")
RECURRENT_SCOPES = {"bottleneck", "depthwise", "se", "gates", "axial", "conv_x", "conv_h"}


@dataclass
class CostReport:
    arch: str
    params: int
    macs: int
    macs_per_step: Fraction
    components: dict[str, int]
    recurrent_macs: int
    dominant_term: int
    extra_adds: int
    config: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# closed forms


def dominant_term_convlstm(C: int, F: int, k: int) -> int:
    """Per-site, per-step ``k^2 (C + F) F``."""
    return k * k * (C + F) * F


def dominant_term_fa(C: int, F: int, Cb: int, k: int) -> int:
    """Per-site, per-step ``C C_b + F C_b + k^2 C_b^2``."""
    return C * Cb + F * Cb + k * k * Cb * Cb


def dominant_ratio(C: int, F: int, Cb: int, k: int) -> Fraction:
    return Fraction(dominant_term_convlstm(C, F, k), dominant_term_fa(C, F, Cb, k))


def count_params(arch: str, cfg) -> int:
    if arch == "convlstm2d":
        k, C, F = cfg.kernel_size, cfg.in_channels, cfg.hidden
        return 4 * (k * k * C * F + k * k * F * F + F)
    if arch != "faconvlstm":
        raise ValueError(f"unknown architecture {arch!r}")
    C, F, Cb, D, r = cfg.in_channels, cfg.hidden, cfg.bottleneck, cfg.subspace_dim, cfg.se_inner
    n = C * Cb + F * Cb + 4 * Cb  # bottleneck weights + two (gamma, beta) pairs
    n += sum(k * k for k, _ in cfg.kernel_set) * 2 * Cb
    n += 2 * (2 * Cb * r)  # SE
    n += 2 * (2 * Cb)  # post-SE norm
    n += 2 * Cb * 4 * F + 4 * F  # fused gates
    if cfg.peepholes:
        n += 2 * F
    if cfg.axial:
        n += (4 if cfg.share_axial_qkv else 7) * F * F
    n += F * D + (D if cfg.pooling == "attn" else 0)
    n += 4 * D * D
    return n


def closed_form_macs(arch: str, cfg, H: int, W: int, T_: int, n: int = 1) -> dict[str, int]:
    """MACs per component for an ``n``-sequence forward pass of length ``T_``."""
    hw = n * H * W
    if arch == "convlstm2d":
        k, C, F = cfg.kernel_size, cfg.in_channels, cfg.hidden
        return {"conv_x": T_ * hw * k * k * C * 4 * F, "conv_h": T_ * hw * k * k * F * 4 * F}
    C, F, Cb, D = cfg.in_channels, cfg.hidden, cfg.bottleneck, cfg.subspace_dim
    out = {
        "bottleneck": T_ * hw * (C * Cb + F * Cb),
        "depthwise": T_ * hw * 2 * Cb * sum(k * k for k, _ in cfg.kernel_set),
        "se": T_ * n * 2 * (2 * Cb * cfg.se_inner),
        "gates": T_ * hw * 2 * Cb * 4 * F,
        "axial": (T_ // cfg.attn_interval) * axial_macs(H, W, F, n) if cfg.axial else 0,
        "subspace": T_ * hw * (F * D + (D if cfg.pooling == "attn" else 0)),
        "temporal": n * (4 * T_ * D * D + 2 * T_ * T_ * D),
    }
    return out


def axial_macs(H: int, W: int, F: int, n: int = 1) -> int:
    """One axial refinement: 3 projections per pass, row/col logits and mixing, output projection."""
    return n * (7 * H * W * F * F + 2 * H * W * F * (H + W))


def full_attention_macs(H: int, W: int, F: int, n: int = 1) -> int:
    """Single-pass 2-D self-attention over all H*W sites, same projections."""
    return n * (4 * H * W * F * F + 2 * (H * W) ** 2 * F)


def _extra_adds(arch: str, cfg, H: int, W: int, T_: int) -> int:
    hw = H * W
    if arch == "convlstm2d":
        return T_ * hw * 4 * cfg.hidden * 2  # bias + x/h gate sum
    adds = T_ * hw * 4 * cfg.hidden  # gate bias
    adds += T_ * hw * 2 * cfg.bottleneck * (len(cfg.kernel_set) - 1)  # branch sum
    if cfg.axial:
        adds += (T_ // cfg.attn_interval) * hw * cfg.hidden
    if cfg.mha_residual:
        adds += T_ * cfg.subspace_dim
    return adds


def count_flops(arch: str, cfg, H: int, W: int, T_: int, measured: dict[str, int] | None = None) -> CostReport:
    comps = measured if measured is not None else closed_form_macs(arch, cfg, H, W, T_)
    total = sum(comps.values())
    recurrent = sum(v for k, v in comps.items() if k in RECURRENT_SCOPES)
    if arch == "convlstm2d":
        dom = dominant_term_convlstm(cfg.in_channels, cfg.hidden, cfg.kernel_size)
    else:
        kmax = max(k for k, _ in cfg.kernel_set)
        dom = dominant_term_fa(cfg.in_channels, cfg.hidden, cfg.bottleneck, kmax)
    return CostReport(
        arch=arch,
        params=count_params(arch, cfg),
        macs=total,
        macs_per_step=Fraction(total, T_),
        components=dict(comps),
        recurrent_macs=recurrent,
        dominant_term=T_ * H * W * dom,
        extra_adds=_extra_adds(arch, cfg, H, W, T_),
        config={"H": H, "W": W, "T": T_, **_cfg_dict(cfg)},
    )


def _cfg_dict(cfg) -> dict:
    return cfg.to_dict() if hasattr(cfg, "to_dict") else dict(vars(cfg))


# --------------------------------------------------------------------------
# instrumented measurement


def measure_macs(model, H: int, W: int, T_: int, seed: int = 0) -> dict[str, int]:
    """Run one forward pass on random input and return the per-scope MAC tally."""
    C = model.cfg.in_channels
    x = np.random.default_rng(seed).normal(size=(T_, 1, H, W, C))
    with T.no_grad(), T.count_macs() as counter:
        model.forward(x)
    return dict(counter.by_scope)


def build(arch: str, cfg, seed: int = 0):
    return FAConvLSTM(cfg, seed) if arch == "faconvlstm" else ConvLSTM2D(cfg, seed)


# --------------------------------------------------------------------------
# sweep


@dataclass
class SweepRow:
    arch: str
    C: int
    F: int
    C_b: int
    k_set: str
    H: int
    W: int
    T: int
    K_t: int
    params: int
    macs: int
    recurrent_macs: int
    dominant_term: int
    ratio_vs_baseline: float
    closed_form_macs: int


BENCH_COLUMNS = [
    "arch", "C", "F", "C_b", "k_set", "H", "W", "T", "K_t",
    "params", "macs", "dominant_term", "ratio_vs_baseline",
]


def default_sweep() -> list[ModelConfig]:
    """16 configs: C in {4, 8}, F in {16, 32}, C_b in {F/8, F/4, F/2, F}."""
    cfgs = []
    for C, F in itertools.product((4, 8), (16, 32)):
        for Cb in (F // 8, F // 4, F // 2, F):
            cfgs.append(ModelConfig(in_channels=C, hidden=F, bottleneck=Cb, subspace_dim=8, attn_interval=2))
    return cfgs


def sweep(cfgs, H: int = 8, W: int = 8, T_: int = 4, baseline_k: int = 3, measure: bool = True) -> list[SweepRow]:
    """One FA row and one baseline row per config.

    ``ratio_vs_baseline`` is baseline recurrent MACs / this row's recurrent MACs.
    """
    rows = []
    for cfg in cfgs:
        bcfg = ConvLSTMConfig(in_channels=cfg.in_channels, hidden=cfg.hidden, kernel_size=baseline_k)
        reports = {}
        for arch, c in (("faconvlstm", cfg), ("convlstm2d", bcfg)):
            meas = measure_macs(build(arch, c), H, W, T_) if measure else None
            if meas is not None:
                meas = {k: v for k, v in meas.items() if v}
            reports[arch] = (count_flops(arch, c, H, W, T_, meas), sum(closed_form_macs(arch, c, H, W, T_).values()))
        base = reports["convlstm2d"][0].recurrent_macs
        kset = " ".join(f"{k}:{d}" for k, d in cfg.kernel_set)
        for arch, (rep, cf) in reports.items():
            rows.append(
                SweepRow(
                    arch, cfg.in_channels, cfg.hidden, cfg.bottleneck if arch == "faconvlstm" else 0,
                    kset if arch == "faconvlstm" else f"{baseline_k}:1",
                    H, W, T_, cfg.attn_interval if arch == "faconvlstm" else 0,
                    rep.params, rep.macs, rep.recurrent_macs, rep.dominant_term,
                    base / rep.recurrent_macs, cf,
                )
            )
    return rows


def analytic_complexity_check(cfgs, H: int = 8, W: int = 8, T_: int = 4, baseline_k: int = 3) -> dict:
    """Check measured FA recurrent MACs < baseline wherever C_b <= F/2 with 3x3/5x5 kernels.

    Rows outside that regime are reported but not asserted.
    """
    rows = sweep(cfgs, H, W, T_, baseline_k)
    table, ok = [], True
    for fa, base in zip(rows[0::2], rows[1::2]):
        kernels_ok = all(int(kd.split(":")[0]) in (3, 5) for kd in fa.k_set.split())
        asserted = fa.C_b <= fa.F / 2 and kernels_ok
        passed = fa.recurrent_macs < base.recurrent_macs
        if asserted and not passed:
            ok = False
        table.append(
            {
                "C": fa.C, "F": fa.F, "C_b": fa.C_b, "fa_recurrent": fa.recurrent_macs,
                "baseline_recurrent": base.recurrent_macs, "ratio": fa.ratio_vs_baseline,
                "asserted": asserted, "passed": passed,
            }
        )
    att = {
        "axial_per_refinement": axial_macs(H, W, rows[0].F if rows else 1),
        "full_attention": full_attention_macs(H, W, rows[0].F if rows else 1),
    }
    return {"ok": ok, "rows": table, "attention": att}
