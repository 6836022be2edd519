"""Synthetic multi-regime spatiotemporal fields.

Each regime owns a set of advecting Gaussian blobs with its own channel
loadings, and a pair of distant grid sites tied together by a shared
driver signal.  A global seasonal sinusoid rides on channel 0.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .tensor import ConfigError


@dataclass
class SyntheticSpec:
    T: int = 96
    H: int = 16
    W: int = 16
    C: int = 4
    regimes: int = 3
    regime_length: int = 32
    blob_speed: float = 0.5
    teleconnection_gain: float = 0.8
    season_period: float = 24.0
    noise_std: float = 0.05
    seed: int = 0
    blobs_per_regime: int = 3
    season_amplitude: float = 0.25

    def __post_init__(self):
        if min(self.T, self.H, self.W, self.C) < 1:
            raise ConfigError("T, H, W, C must be >= 1")
        if self.regimes < 1 or self.regime_length < 1:
            raise ConfigError("regimes and regime_length must be >= 1")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if self.season_period <= 0:
            raise ConfigError("season_period must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown data config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class _Regime:
    centers: np.ndarray  # (B, 2)
    velocity: np.ndarray  # (B, 2), unit direction
    sigma: np.ndarray  # (B,)
    loading: np.ndarray  # (B, C)
    sites: tuple[tuple[int, int], tuple[int, int]]
    driver: np.ndarray  # (T,)


def _make_regime(spec: SyntheticSpec, rng: np.random.Generator) -> _Regime:
    B = spec.blobs_per_regime
    scale = min(spec.H, spec.W) / 16.0
    centers = rng.uniform(0, 1, size=(B, 2)) * [spec.H, spec.W]
    angle = rng.uniform(0, 2 * np.pi, size=B)
    velocity = np.stack([np.sin(angle), np.cos(angle)], axis=1)
    sigma = rng.uniform(1.5, 3.0, size=B) * scale
    loading = rng.uniform(0.5, 1.5, size=(B, spec.C)) * rng.choice([-1.0, 1.0], size=(B, spec.C))
    p1 = (int(rng.integers(spec.H)), int(rng.integers(spec.W)))
    p2 = ((p1[0] + spec.H // 2) % spec.H, (p1[1] + spec.W // 2) % spec.W)
    driver = np.empty(spec.T)
    a = rng.normal()
    for t in range(spec.T):
        a = 0.9 * a + np.sqrt(1 - 0.81) * rng.normal()
        driver[t] = a
    return _Regime(centers, velocity, sigma, loading, (p1, p2), driver)


def regime_labels(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """Segments of ``regime_length`` steps; the first R segments visit every regime
    once, later ones switch to a random different regime."""
    n_seg = -(-spec.T // spec.regime_length)
    order = list(rng.permutation(spec.regimes))
    while len(order) < n_seg:
        if spec.regimes == 1:
            order.append(order[-1])
            continue
        nxt = int(rng.integers(spec.regimes - 1))
        order.append(nxt if nxt < order[-1] else nxt + 1)
    seg = np.arange(spec.T) // spec.regime_length
    return np.asarray(order)[seg]


def generate_synthetic_sequence(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return ``x`` of shape (T, H, W, C) and per-timestep regime labels (T,)."""
    rng = np.random.default_rng(spec.seed)
    regimes = [_make_regime(spec, rng) for _ in range(spec.regimes)]
    labels = regime_labels(spec, rng)
    noise = rng.normal(size=(spec.T, spec.H, spec.W, spec.C))

    yy, xx = np.meshgrid(np.arange(spec.H), np.arange(spec.W), indexing="ij")
    tele_ch = spec.C - 1
    x = np.zeros((spec.T, spec.H, spec.W, spec.C))
    for t in range(spec.T):
        reg = regimes[labels[t]]
        pos = reg.centers + spec.blob_speed * t * reg.velocity
        for b in range(len(reg.sigma)):
            # periodic (torus) distance so blobs wrap around the domain
            dy = (yy - pos[b, 0] + spec.H / 2) % spec.H - spec.H / 2
            dx = (xx - pos[b, 1] + spec.W / 2) % spec.W - spec.W / 2
            bump = np.exp(-(dy**2 + dx**2) / (2 * reg.sigma[b] ** 2))
            x[t] += bump[:, :, None] * reg.loading[b]
        x[t, :, :, 0] += spec.season_amplitude * np.sin(2 * np.pi * t / spec.season_period)
        (i1, j1), (i2, j2) = reg.sites
        x[t, i1, j1, tele_ch] = reg.driver[t]
        x[t, i2, j2, tele_ch] = spec.teleconnection_gain * reg.driver[t]
    x += spec.noise_std * noise
    return x, labels


def teleconnection_sites(spec: SyntheticSpec) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    """Site pairs per regime, regenerated from the seed (for inspection and tests)."""
    rng = np.random.default_rng(spec.seed)
    return [_make_regime(spec, rng).sites for _ in range(spec.regimes)]
