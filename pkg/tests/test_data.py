import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faconvlstm.data import SyntheticSpec, generate_synthetic_sequence, teleconnection_sites
from faconvlstm.tensor import ConfigError


def test_shapes_and_labels():
    spec = SyntheticSpec(T=30, H=6, W=7, C=3, regimes=3, regime_length=10)
    x, y = generate_synthetic_sequence(spec)
    assert x.shape == (30, 6, 7, 3) and y.shape == (30,)
    assert sorted(set(y.tolist())) == [0, 1, 2]


def test_same_seed_bit_identical():
    spec = SyntheticSpec(T=20, H=8, W=8, C=2, seed=11)
    a, la = generate_synthetic_sequence(spec)
    b, lb = generate_synthetic_sequence(spec)
    assert a.tobytes() == b.tobytes() and la.tobytes() == lb.tobytes()
    c, _ = generate_synthetic_sequence(SyntheticSpec(T=20, H=8, W=8, C=2, seed=12))
    assert c.tobytes() != a.tobytes()


def test_single_static_regime_is_seasonal():
    spec = SyntheticSpec(T=72, H=8, W=8, C=3, regimes=1, regime_length=72, blob_speed=0.0, noise_std=0.0, season_period=24.0)
    x, _ = generate_synthetic_sequence(spec)
    np.testing.assert_allclose(x[24:, ..., 0], x[:-24, ..., 0], atol=1e-12)
    # and not trivially constant
    assert np.abs(x[6, ..., 0] - x[0, ..., 0]).max() > 0.1


def test_teleconnection_pair_fully_correlated():
    spec = SyntheticSpec(T=64, H=8, W=8, C=2, regimes=1, regime_length=64, teleconnection_gain=1.0, noise_std=0.0)
    x, _ = generate_synthetic_sequence(spec)
    (i1, j1), (i2, j2) = teleconnection_sites(spec)[0]
    a, b = x[:, i1, j1, -1], x[:, i2, j2, -1]
    assert abs(np.corrcoef(a, b)[0, 1] - 1.0) <= 1e-9


def test_teleconnection_gain_scales_partner():
    spec = SyntheticSpec(T=32, H=8, W=8, C=2, regimes=1, regime_length=32, teleconnection_gain=0.5, noise_std=0.0)
    x, _ = generate_synthetic_sequence(spec)
    (i1, j1), (i2, j2) = teleconnection_sites(spec)[0]
    np.testing.assert_allclose(x[:, i2, j2, -1], 0.5 * x[:, i1, j1, -1], atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(2, 6), st.integers(0, 1000))
def test_labels_are_contiguous_segments(R, L, seed):
    spec = SyntheticSpec(T=R * L, H=4, W=4, C=1, regimes=R, regime_length=L, seed=seed)
    _, y = generate_synthetic_sequence(spec)
    segs = y.reshape(R, L)
    assert np.all(segs == segs[:, :1])
    assert sorted(segs[:, 0].tolist()) == list(range(R))


def test_longer_sequences_revisit_regimes():
    spec = SyntheticSpec(T=40, H=4, W=4, C=1, regimes=2, regime_length=5)
    _, y = generate_synthetic_sequence(spec)
    seg = y.reshape(8, 5)[:, 0]
    assert np.all(seg[1:] != seg[:-1])


def test_bad_specs():
    with pytest.raises(ConfigError):
        SyntheticSpec(T=0)
    with pytest.raises(ConfigError):
        SyntheticSpec(noise_std=-1.0)
    with pytest.raises(ConfigError):
        SyntheticSpec.from_dict({"TT": 3})
