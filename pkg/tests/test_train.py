from dataclasses import replace

import numpy as np
import pytest

from faconvlstm.data import generate_synthetic_sequence
from faconvlstm.harness import build_model, load_config
from faconvlstm.tensor import ConfigError
from faconvlstm.train import (
    TrainSpec,
    TrainingDiverged,
    init_decoder,
    n_train_steps,
    train,
    training_windows,
)


@pytest.fixture(scope="module")
def default_setup():
    cfg = load_config("default")
    x, _ = generate_synthetic_sequence(cfg.data)
    return cfg, x


@pytest.fixture(scope="module")
def smoke_setup():
    cfg = load_config("smoke")
    x, _ = generate_synthetic_sequence(cfg.data)
    return cfg, x


def test_spec_validation():
    with pytest.raises(ConfigError):
        TrainSpec(optimizer="rmsprop")
    with pytest.raises(ConfigError):
        TrainSpec(learning_rate=-1.0)
    with pytest.raises(ConfigError):
        TrainSpec(holdout_fraction=1.0)
    with pytest.raises(ConfigError):
        TrainSpec.from_dict({"stepz": 3})


def test_windows_cover_training_portion_only():
    x = np.arange(40.0).reshape(40, 1, 1, 1)
    spec = TrainSpec(window=6, holdout_fraction=0.25)
    w = training_windows(x, spec)
    assert n_train_steps(40, spec) == 30
    assert w.shape == (5, 6, 1, 1, 1)
    assert w.max() < 30


@pytest.mark.parametrize("opt", ["adam", "sgd"])
def test_zero_learning_rate_leaves_params(smoke_setup, opt):
    cfg, x = smoke_setup
    m = build_model(cfg, "faconvlstm", 0)
    before = {k: p.data.copy() for k, p in m.params.items()}
    res = train(m, x, replace(cfg.train, learning_rate=0.0, optimizer=opt, steps=3))
    for k, p in m.params.items():
        assert p.data.tobytes() == before[k].tobytes()
    assert len(res.log) == 3 and res.log[0]["total"] == res.log[-1]["total"]


def test_log_rows_compose(smoke_setup):
    cfg, x = smoke_setup
    res = train(build_model(cfg, "faconvlstm", 0), x, cfg.train)
    w = cfg.train.weights
    for row in res.log:
        assert abs(row["total"] - (row["task"] + w.lambda_s * row["spatial"] + w.lambda_t * row["temporal"])) <= 1e-12
    assert res.log_csv().splitlines()[0] == "step,task,spatial,temporal,total"


def test_task_loss_moving_average_decreases(default_setup):
    cfg, x = default_setup
    res = train(build_model(cfg, "faconvlstm", 0), x, replace(cfg.train, steps=200))
    task = np.array([r["task"] for r in res.log])
    ma = np.convolve(task, np.ones(10) / 10, mode="valid")
    assert (np.diff(ma) < 0).mean() >= 0.9


@pytest.mark.parametrize("opt,lr", [("adam", 0.01), ("sgd", 0.1)])
def test_beats_constant_predictor(default_setup, opt, lr):
    cfg, x = default_setup
    res = train(build_model(cfg, "faconvlstm", 0), x, replace(cfg.train, optimizer=opt, learning_rate=lr, steps=60))
    assert res.log[-1]["task"] < x.var()


def test_baseline_trains(smoke_setup):
    cfg, x = smoke_setup
    res = train(build_model(cfg, "convlstm2d", 0), x, replace(cfg.train, steps=10))
    assert res.log[-1]["task"] < res.log[0]["task"]


def test_non_finite_loss_raises_with_step(smoke_setup):
    cfg, x = smoke_setup
    bad = x.copy()
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(TrainingDiverged) as e:
        train(build_model(cfg, "faconvlstm", 0), bad, cfg.train)
    assert e.value.step == 0


def test_training_deterministic(smoke_setup):
    cfg, x = smoke_setup
    a = train(build_model(cfg, "faconvlstm", 3), x, replace(cfg.train, seed=3, batch=1))
    b = train(build_model(cfg, "faconvlstm", 3), x, replace(cfg.train, seed=3, batch=1))
    assert a.log_csv() == b.log_csv()


def test_summary_decoder_shapes(rng):
    d = init_decoder(8, 3, rng, embed_dim=4)
    assert d["summary/weight"].shape == (4, 3) and d["decoder/weight"].shape == (8, 3)
    assert "summary/weight" not in init_decoder(8, 3, rng)


def test_summary_weight_changes_objective(smoke_setup):
    cfg, x = smoke_setup
    a = train(build_model(cfg, "faconvlstm", 0), x, replace(cfg.train, steps=1))
    b = train(build_model(cfg, "faconvlstm", 0), x, replace(cfg.train, steps=1, summary_weight=1.0))
    assert b.log[0]["task"] > a.log[0]["task"]
