"""End-to-end experiment pipeline: data -> model -> train -> embed -> cluster -> metrics."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import tensor as T
from .blocks import ModelConfig
from .cell import ConvLSTM2D, ConvLSTMConfig, FAConvLSTM
from .cluster import clustering_metrics, kmeans_cluster, majority_vote_accuracy
from .data import SyntheticSpec, generate_synthetic_sequence
from .store import ParameterStore
from .tensor import ConfigError
from .train import TrainResult, TrainSpec, init_decoder, n_train_steps, train

SPEC_VERSION = 1

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["spec_version"],
    "additionalProperties": False,
    "properties": {
        "spec_version": {"const": SPEC_VERSION},
        "data": {"type": "object"},
        "model": {"type": "object"},
        "baseline": {"type": "object"},
        "train": {"type": "object"},
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "k": {"type": "integer", "minimum": 2},
                "restarts": {"type": "integer", "minimum": 1},
                "cluster_on": {"enum": ["Z", "S"]},
            },
        },
    },
}

METRIC_COLUMNS = [
    "arch", "seed", "stage", "k", "silhouette", "davies_bouldin", "calinski_harabasz",
    "rmse", "variance", "inter_centroid_distance", "majority_accuracy",
]
CURVE_COLUMNS = ["arch", "seed", "step", "task", "spatial", "temporal", "total"]
ARCHS = ("faconvlstm", "convlstm2d")


@dataclass
class ExperimentConfig:
    data: SyntheticSpec = field(default_factory=SyntheticSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    baseline: ConvLSTMConfig = field(default_factory=ConvLSTMConfig)
    train: TrainSpec = field(default_factory=TrainSpec)
    k: int = 3
    restarts: int = 10
    cluster_on: str = "Z"

    def to_dict(self) -> dict:
        return {
            "spec_version": SPEC_VERSION,
            "data": self.data.to_dict(),
            "model": self.model.to_dict(),
            "baseline": dict(vars(self.baseline)),
            "train": self.train.to_dict(),
            "eval": {"k": self.k, "restarts": self.restarts, "cluster_on": self.cluster_on},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(d, CONFIG_SCHEMA)
        except jsonschema.ValidationError as e:
            raise ConfigError(f"config does not match schema: {e.message}") from e
        data = SyntheticSpec.from_dict(d.get("data", {}))
        model_d = {"in_channels": data.C, "season_period": data.season_period, **d.get("model", {})}
        model = ModelConfig.from_dict(model_d)
        base_d = {"in_channels": model.in_channels, "hidden": model.hidden, **d.get("baseline", {})}
        try:
            baseline = ConvLSTMConfig(**base_d)
        except TypeError as e:
            raise ConfigError(f"bad baseline config: {e}") from e
        if model.in_channels != data.C or baseline.in_channels != data.C:
            raise ConfigError("model in_channels must equal data C")
        ev = d.get("eval", {})
        return cls(data, model, baseline, TrainSpec.from_dict(d.get("train", {})), ev.get("k", 3), ev.get("restarts", 10), ev.get("cluster_on", "Z"))


def builtin_config(name: str) -> dict:
    text = resources.files("faconvlstm").joinpath("configs").joinpath(f"{name}.json").read_text()
    return json.loads(text)


def load_config(spec: str | Path) -> ExperimentConfig:
    """Load a JSON config file, or a packaged one by name (``default``, ``smoke``)."""
    p = Path(spec)
    if p.is_file():
        d = json.loads(p.read_text())
    else:
        name = p.name[:-5] if p.name.endswith(".json") else p.name
        try:
            d = builtin_config(name)
        except FileNotFoundError as e:
            raise ConfigError(f"no config file or builtin config named {spec!r}") from e
    return ExperimentConfig.from_dict(d)


def build_model(cfg: ExperimentConfig, arch: str, seed: int):
    if arch == "faconvlstm":
        return FAConvLSTM(cfg.model, seed)
    if arch == "convlstm2d":
        return ConvLSTM2D(cfg.baseline, seed)
    raise ConfigError(f"unknown architecture {arch!r}")


DECODER_PREFIXES = ("decoder/", "summary/")


def save_checkpoint(path, model, decoder: ParameterStore, cfg: ExperimentConfig, seed: int) -> None:
    meta = {"arch": model.arch, "seed": seed, "config": cfg.to_dict()}
    model.params.merged(decoder).save(path, meta)


def load_checkpoint(path):
    """Return ``(model, decoder, cfg, meta)`` rebuilt from a checkpoint file."""
    store, meta = ParameterStore.load(path)
    try:
        cfg = ExperimentConfig.from_dict(meta["config"])
        arch = meta["arch"]
    except KeyError as e:
        raise ConfigError(f"checkpoint meta lacks {e}") from e
    model = build_model(cfg, arch, int(meta.get("seed", 0)))
    decoder = ParameterStore()
    state = {}
    for k, v in store.items():
        if k.startswith(DECODER_PREFIXES):
            decoder.add(k, v.data)
        else:
            state[k] = v.data
    if set(state) != set(model.params):
        raise ConfigError("checkpoint parameters do not match the model built from its config")
    model.params.load_state(state)
    return model, decoder, cfg, meta


@dataclass
class Embedding:
    Z: np.ndarray  # (T, D)
    recon: np.ndarray  # (T, H, W, C)


def embed(model, decoder: ParameterStore, x: np.ndarray, cluster_on: str = "Z") -> Embedding:
    """Full-sequence inference from zero state; returns embeddings and decoded fields."""
    with T.no_grad():
        out = model.forward(x[:, None])
        Z = (out.Z if cluster_on == "Z" else out.S).data[0]
        recon = np.stack(
            [T.conv2d_pointwise(h, decoder["decoder/weight"], decoder["decoder/bias"]).data[0] for h in out.hidden]
        )
    return Embedding(Z, recon)


def evaluate(cfg: ExperimentConfig, emb: Embedding, x: np.ndarray, labels: np.ndarray, k: int, seed: int, arch: str, stage: str) -> dict:
    pred, cents = kmeans_cluster(emb.Z, k, seed=seed, restarts=cfg.restarts)
    t0 = n_train_steps(len(x), cfg.train)
    held = slice(t0, None) if t0 < len(x) else slice(None)
    rep = clustering_metrics(emb.Z, pred, cents, (emb.recon[held], x[held]), seed=seed, arch=arch)
    row = {"arch": arch, "seed": seed, "stage": stage, **{k_: v for k_, v in rep.to_dict().items() if k_ not in ("seed", "arch")}}
    row["majority_accuracy"] = majority_vote_accuracy(pred, labels)
    return row


@dataclass
class SeedRun:
    rows: list[dict]
    result: TrainResult
    model: object


def run_seed(cfg: ExperimentConfig, arch: str, seed: int, k: int | None = None) -> SeedRun:
    """Untrained and trained metrics for one (architecture, seed) pair."""
    k = k or cfg.k
    x, labels = generate_synthetic_sequence(replace(cfg.data, seed=seed))
    model = build_model(cfg, arch, seed)
    decoder = init_decoder(model.hidden_channels, x.shape[-1], np.random.default_rng(seed), model.embedding_dim)
    rows = [evaluate(cfg, embed(model, decoder, x, cfg.cluster_on), x, labels, k, seed, arch, "untrained")]
    result = train(model, x, replace(cfg.train, seed=seed), decoder=decoder)
    rows.append(evaluate(cfg, embed(model, result.decoder, x, cfg.cluster_on), x, labels, k, seed, arch, "trained"))
    return SeedRun(rows, result, model)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_csv(path: Path, header: str, columns: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    buf.write(f"# {header}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    path.write_text(buf.getvalue())


def compare(cfg: ExperimentConfig, out_dir: str | Path, k: int | None = None, seeds: int = 5, archs=ARCHS) -> list[dict]:
    """Run every architecture over ``seeds`` seeds; write metrics and loss-curve CSVs.

    Files: ``metrics.csv`` (one row per arch/seed/stage), ``summary.csv``
    (seed means) and ``loss_curves.csv`` (plot data).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    k = k or cfg.k
    rows, curves = [], []
    for seed in range(seeds):
        for arch in archs:
            run = run_seed(cfg, arch, seed, k)
            rows.extend(run.rows)
            curves.extend({"arch": arch, "seed": seed, **r} for r in run.result.log)
    resolved = json.dumps(cfg.to_dict(), sort_keys=True)
    header = f"config={resolved} rmse=reconstruction-on-heldout-timesteps variance=pooled-within-cluster"
    _write_csv(out / "metrics.csv", header, METRIC_COLUMNS, rows)
    _write_csv(out / "summary.csv", header, METRIC_COLUMNS, summarize(rows))
    _write_csv(out / "loss_curves.csv", header, CURVE_COLUMNS, curves)
    return rows


def summarize(rows: list[dict]) -> list[dict]:
    out = []
    for arch in dict.fromkeys(r["arch"] for r in rows):
        for stage in ("untrained", "trained"):
            sel = [r for r in rows if r["arch"] == arch and r["stage"] == stage]
            if not sel:
                continue
            agg = {"arch": arch, "seed": "mean", "stage": stage, "k": sel[0]["k"]}
            for c in METRIC_COLUMNS[4:]:
                agg[c] = float(np.mean([r[c] for r in sel]))
            out.append(agg)
    return out
