"""PLCC / ROCC between network quality and accuracy."""
import numpy as np
import pandas as pd
from scipy import stats

from errors import ConstantInput, MalformedTable

TABLE_COLUMNS = ["group", "q_metric", "test_acc", "gen_gap"]
MIN_ROWS = 3


def _prepare(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"correlation needs two equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < MIN_ROWS:
        raise ValueError(f"correlation needs at least {MIN_ROWS} points, got {x.size}")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ConstantInput("correlation is undefined for a constant vector")
    return x, y


def pearson(x, y):
    x, y = _prepare(x, y)
    return float(stats.pearsonr(x, y)[0])


def spearman(x, y):
    """Rank-order correlation; ties get their average rank."""
    x, y = _prepare(x, y)
    return float(stats.spearmanr(x, y)[0])


def as_percent(value):
    return round(100.0 * value, 2)


def correlate_table(frame):
    """Per-group PLCC/ROCC (%) of Q against test accuracy and generalization gap."""
    missing = [c for c in TABLE_COLUMNS if c not in frame.columns]
    if missing:
        raise MalformedTable(f"table is missing columns: {', '.join(missing)}")
    numeric = frame[TABLE_COLUMNS[1:]].apply(pd.to_numeric, errors="coerce")
    if numeric.isna().any().any():
        bad = int(numeric.isna().any(axis=1).to_numpy().argmax())
        raise MalformedTable(f"non-numeric value on data row {bad + 1}")

    rows = []
    for group, part in numeric.groupby(frame["group"].astype(str), sort=False):
        if len(part) < MIN_ROWS:
            raise MalformedTable(f"group {group!r} has {len(part)} rows, need at least {MIN_ROWS}")
        q = part["q_metric"].to_numpy()
        acc = part["test_acc"].to_numpy()
        gap = part["gen_gap"].to_numpy()
        rows.append({
            "group": group,
            "n": len(part),
            "plcc_gen_gap": as_percent(pearson(q, gap)),
            "plcc_test_acc": as_percent(pearson(q, acc)),
            "rocc_gen_gap": as_percent(spearman(q, gap)),
            "rocc_test_acc": as_percent(spearman(q, acc)),
        })
    return pd.DataFrame(rows)
