import json
import logging
import os
import re
from dataclasses import dataclass
from fnmatch import fnmatch

import pandas as pd

from archive import TensorArchive
from errors import ConfigError, EmptyNetwork, MalformedTable, NoProbeableTensors
from probes.correlation import TABLE_COLUMNS, correlate_table
from probes.metrics import measure_network
from reporting import (
    analysis_frame,
    lr_frame,
    metrics_frame,
    plot_accuracy,
    plot_layer_metrics,
    plot_learning_rates,
    write_csv,
)
from trainer.engine import DatasetSpec, OptimizerKind, TrainConfig, stream_training
from trainer.network import Activation, Dense, Init, NetworkSpec

logger = logging.getLogger(__name__)

SAFE_ID = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")
OVERRIDABLE = ("seed", "threads", "alpha", "beta", "zeta", "eta0")

METRICS_CSV = "metrics.csv"
LR_CSV = "lr.csv"
CHECKPOINT = "checkpoint.rptk"
LR_SVG = "lr.svg"
METRICS_SVG = "metrics.svg"
ACCURACY_SVG = "accuracy.svg"


# --- Manifest ---
@dataclass
class ExperimentManifest:
    id: str
    network: NetworkSpec
    train: TrainConfig
    output_dir: str = "runs"

    def __post_init__(self):
        if not self.id or not SAFE_ID.match(self.id):
            raise ConfigError("id", f"must be a non-empty filesystem-safe name, got {self.id!r}")

    @classmethod
    def from_dict(cls, d, overrides=None):
        if not isinstance(d, dict):
            raise ConfigError("manifest", "top level must be a JSON object")
        for key in ("id", "network", "train"):
            if key not in d:
                raise ConfigError(key, "is required")
        train = dict(d["train"])
        network = dict(d["network"])
        for key, value in (overrides or {}).items():
            if key not in OVERRIDABLE:
                raise ConfigError(key, "cannot be overridden from the command line")
            if value is None:
                continue
            train[key] = value
            if key == "seed":
                network["seed"] = value
        return cls(
            id=str(d["id"]),
            network=NetworkSpec.from_dict(network),
            train=TrainConfig.from_dict(train),
            output_dir=str(d.get("output_dir", "runs")),
        )


def load_manifest(path, overrides=None):
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError("manifest", f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError("manifest", f"invalid JSON at line {e.lineno}: {e.msg}") from e
    return ExperimentManifest.from_dict(data, overrides=overrides)


# --- Train ---
def stream_train_experiment(manifest, out_dir=None, callback_handler=None):
    """Train, yielding every engine event, then write the run's tables, checkpoint and charts."""
    out_dir = out_dir or os.path.join(manifest.output_dir, manifest.id)
    os.makedirs(out_dir, exist_ok=True)
    result = None
    for event in stream_training(manifest.network, manifest.train, callback_handler=callback_handler):
        if event["type"] == "done":
            result = event["result"]
        yield event

    state = result.optimizer.state
    metrics = metrics_frame(result.records, result.layer_names)
    rates = lr_frame(state.lr_history, state.raw_lr_history, result.layer_names)
    files = {
        "metrics": os.path.join(out_dir, METRICS_CSV),
        "lr": os.path.join(out_dir, LR_CSV),
        "checkpoint": os.path.join(out_dir, CHECKPOINT),
        "lr_plot": os.path.join(out_dir, LR_SVG),
        "metrics_plot": os.path.join(out_dir, METRICS_SVG),
        "accuracy_plot": os.path.join(out_dir, ACCURACY_SVG),
    }
    write_csv(metrics, files["metrics"])
    write_csv(rates, files["lr"])
    TensorArchive.from_arrays(result.network.params).write(files["checkpoint"])
    plot_learning_rates(rates, files["lr_plot"])
    plot_layer_metrics(metrics, files["metrics_plot"])
    plot_accuracy(result.records, files["accuracy_plot"])
    if state.clamp_count:
        logger.warning("%s: learning rate was clamped %d times", manifest.id, state.clamp_count)
    yield {"type": "files", "files": files, "result": result}


def run_train_experiment(manifest, out_dir=None, callback_handler=None):
    files, result = {}, None
    for event in stream_train_experiment(manifest, out_dir=out_dir, callback_handler=callback_handler):
        if event["type"] == "files":
            files, result = event["files"], event["result"]
    return files, result


# --- Analyze ---
def select_tensors(archive, filters=None):
    selected = {}
    for entry in archive.entries:
        if filters and not any(fnmatch(entry.name, pattern) for pattern in filters):
            continue
        if entry.data.ndim not in (2, 4):
            logger.info("skipping %s with dims %s", entry.name, entry.dims)
            continue
        selected[entry.name] = entry.data
    return selected


def run_analysis(checkpoint, filters=None, out_csv=None, threads=1):
    archive = TensorArchive.read(checkpoint)
    tensors = select_tensors(archive, filters)
    if not tensors:
        raise NoProbeableTensors(f"{checkpoint}: no 2-D or 4-D tensor matches {filters or ['*']}")
    try:
        report = measure_network(tensors, epoch=0, threads=threads)
    except EmptyNetwork as e:
        raise NoProbeableTensors(f"{checkpoint}: none of {len(tensors)} tensors could be measured") from e
    frame = analysis_frame(report, {name: tensors[name].shape for name in tensors})
    if out_csv:
        write_csv(frame, out_csv)
    return report, frame


# --- Correlate ---
def read_table(path):
    try:
        return pd.read_csv(path, encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise MalformedTable(f"cannot read {path}: {e}") from e
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise MalformedTable(f"{path}: {e}") from e


def run_correlation(table):
    frame = table if isinstance(table, pd.DataFrame) else read_table(table)
    return correlate_table(frame)


# --- Q vs accuracy sweep ---
def mlp_spec(width, depth=2, init=Init.KAIMING_UNIFORM, seed=0, in_features=2, classes=2):
    layers, size = [], in_features
    for _ in range(depth):
        layers += [Dense(size, width), Activation("relu")]
        size = width
    layers.append(Dense(size, classes))
    return NetworkSpec(input_shape=(in_features,), layers=layers, seed=seed, init=init)


def run_quality_sweep(widths=(4, 16, 64), epochs=(5, 15, 30), inits=tuple(Init),
                      optimizers=tuple(OptimizerKind), dataset=None, batch_size=32, seed=0,
                      group="two_moons", callback=None):
    """Train every width x init x optimizer configuration; widths are paired with their epoch counts.

    Returns a table with the `group,q_metric,test_acc,gen_gap` columns `correlate` reads,
    followed by the configuration columns.
    """
    if len(widths) != len(epochs):
        raise ConfigError("sweep.epochs", "one epoch count per width is required")
    dataset = dataset or DatasetSpec("two_moons", {"n": 1000, "noise": 0.15})
    rows = []
    for width, n_epochs in zip(widths, epochs):
        for init in inits:
            for optimizer in optimizers:
                spec = mlp_spec(width, init=Init(init), seed=seed)
                cfg = TrainConfig(epochs=n_epochs, batch_size=batch_size, optimizer=OptimizerKind(optimizer),
                                  dataset=dataset, seed=seed)
                final = None
                for event in stream_training(spec, cfg):
                    if event["type"] == "epoch":
                        final = event["record"]
                rows.append({
                    "group": group,
                    "q_metric": final.quality.network_quality,
                    "test_acc": final.test_accuracy,
                    "gen_gap": final.gen_gap,
                    "width": width,
                    "epochs": n_epochs,
                    "init": Init(init).value,
                    "optimizer": OptimizerKind(optimizer).value,
                })
                logger.info("sweep width=%d init=%s optimizer=%s: Q=%.4f test_acc=%.4f", width,
                            Init(init).value, OptimizerKind(optimizer).value, rows[-1]["q_metric"],
                            rows[-1]["test_acc"])
                if callback is not None:
                    callback(rows[-1])
    return pd.DataFrame(rows, columns=TABLE_COLUMNS + ["width", "epochs", "init", "optimizer"])
