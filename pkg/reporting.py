"""CSV tables and SVG charts for training runs and checkpoint analysis."""
import io
import logging

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from archive import atomic_write_bytes  # noqa: E402

logger = logging.getLogger(__name__)

NETWORK_ROW = "NETWORK"
METRICS_COLUMNS = [
    "epoch", "layer_index", "layer_name", "mode", "estimated_rank",
    "noise_variance", "stable_rank", "condition", "quality", "learning_rate",
]
LR_COLUMNS = ["epoch", "layer_index", "layer_name", "learning_rate", "raw_learning_rate", "clamped"]
ANALYZE_COLUMNS = ["name", "dims", "estimated_rank", "noise_variance", "stable_rank", "condition", "quality"]

plt.rcParams["svg.hashsalt"] = "rankprobe"
plt.rcParams["svg.fonttype"] = "none"


def _metric_row(lm, mode=None):
    return {
        "estimated_rank": lm.estimated_rank,
        "noise_variance": lm.noise_variance,
        "stable_rank": lm.stable_rank,
        "condition": lm.condition,
        "quality": lm.quality,
        "mode": mode or lm.mode,
    }


def _typed(frame, columns):
    frame = pd.DataFrame(frame, columns=columns)
    frame["estimated_rank"] = frame["estimated_rank"].astype("Int64")
    return frame


def metrics_frame(records, layer_names):
    """One row per layer and mode per epoch; conv layers add their mode3/mode4 rows before the avg row."""
    rows = []
    for record in records:
        for lm in record.quality.per_layer:
            lr = record.learning_rates[lm.layer_index - 1]
            name = lm.name or layer_names[lm.layer_index - 1]
            for sub in [*lm.per_mode, lm]:
                rows.append({"epoch": record.epoch, "layer_index": lm.layer_index, "layer_name": name,
                             "learning_rate": lr, **_metric_row(sub)})
        rows.append({"epoch": record.epoch, "layer_index": -1, "layer_name": NETWORK_ROW, "mode": "avg",
                     "estimated_rank": None, "noise_variance": np.nan, "stable_rank": np.nan,
                     "condition": np.nan, "quality": record.quality.network_quality, "learning_rate": np.nan})
    return _typed(rows, METRICS_COLUMNS)


def lr_frame(lr_history, raw_lr_history, layer_names):
    """Per-layer step size at every epoch boundary, epoch 0 holding the initial rates."""
    rows = []
    for epoch, (rates, raw) in enumerate(zip(lr_history, raw_lr_history)):
        for j, (lr, raw_lr) in enumerate(zip(rates, raw)):
            rows.append({"epoch": epoch, "layer_index": j + 1, "layer_name": layer_names[j],
                         "learning_rate": lr, "raw_learning_rate": raw_lr, "clamped": bool(raw_lr <= 0.0)})
    return pd.DataFrame(rows, columns=LR_COLUMNS)


def analysis_frame(report, dims_by_name):
    rows = [
        {"name": lm.name, "dims": "x".join(str(d) for d in dims_by_name[lm.name]), **_metric_row(lm)}
        for lm in report.per_layer
    ]
    rows.append({"name": NETWORK_ROW, "dims": "", "estimated_rank": None, "noise_variance": np.nan,
                 "stable_rank": np.nan, "condition": np.nan, "quality": report.network_quality})
    return _typed(rows, ANALYZE_COLUMNS)


def write_csv(frame, path):
    text = frame.to_csv(index=False, lineterminator="\n")
    atomic_write_bytes(path, text.encode("utf-8"))
    logger.info("wrote %d rows to %s", len(frame), path)


def read_metrics_csv(path):
    return pd.read_csv(path, dtype={"estimated_rank": "Int64"})


# --- Charts ---
def _save_svg(fig, path):
    buffer = io.BytesIO()
    fig.savefig(buffer, format="svg", metadata={"Date": None})
    plt.close(fig)
    atomic_write_bytes(path, buffer.getvalue())


def plot_learning_rates(lr_table, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for (index, name), group in lr_table.groupby(["layer_index", "layer_name"], sort=True):
        ax.plot(group["epoch"], group["learning_rate"], label=f"{index}: {name}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("learning rate")
    ax.set_title("per-layer learning rate")
    ax.legend(fontsize="small")
    fig.tight_layout()
    _save_svg(fig, path)


def plot_layer_metrics(metrics_table, path):
    layers = metrics_table[(metrics_table["layer_index"] > 0) & metrics_table["mode"].isin(["avg", "dense"])]
    fig, axes = plt.subplots(3, 1, figsize=(6, 9), sharex=True)
    for ax, column, label in zip(axes, ["stable_rank", "condition", "quality"],
                                 ["stable rank", "condition", "quality"]):
        for (index, name), group in layers.groupby(["layer_index", "layer_name"], sort=True):
            ax.plot(group["epoch"], group[column], label=f"{index}: {name}")
        ax.set_ylabel(label)
    axes[0].legend(fontsize="small")
    axes[-1].set_xlabel("epoch")
    fig.tight_layout()
    _save_svg(fig, path)


def plot_accuracy(records, path):
    epochs = [r.epoch for r in records]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [r.train_accuracy for r in records], label="train")
    ax.plot(epochs, [r.test_accuracy for r in records], label="test")
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.legend()
    fig.tight_layout()
    _save_svg(fig, path)
