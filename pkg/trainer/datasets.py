import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np
import pandas as pd
from sklearn.datasets import make_blobs, make_moons
from sklearn.model_selection import train_test_split

from errors import ConfigError, MalformedCsv

logger = logging.getLogger(__name__)


class DatasetKind(str, Enum):
    BLOBS = "blobs"
    TWO_MOONS = "two_moons"
    TINY_IMAGES = "tiny_images"


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    num_classes: int
    input_shape: Tuple[int, ...]

    def __len__(self):
        return len(self.y)

    def split(self, eval_fraction, seed=0):
        """Stratified train/test split; a zero fraction evaluates on the training set."""
        if eval_fraction <= 0.0:
            return self, self
        counts = np.bincount(self.y, minlength=self.num_classes)
        stratify = self.y if counts[counts > 0].min() >= 2 else None
        x_tr, x_te, y_tr, y_te = train_test_split(self.x, self.y, test_size=eval_fraction,
                                                  random_state=seed, stratify=stratify)
        return (Dataset(x_tr, y_tr, self.num_classes, self.input_shape),
                Dataset(x_te, y_te, self.num_classes, self.input_shape))


def make_blobs_dataset(n=200, classes=2, sep=4.0, std=1.0, seed=0):
    """Isotropic Gaussian classes whose neighbouring centers are `sep` standard deviations apart."""
    if classes < 2:
        raise ConfigError("dataset.params.classes", "need at least two classes")
    radius = sep * std / (2.0 * np.sin(np.pi / classes))
    angles = 2.0 * np.pi * np.arange(classes) / classes
    centers = np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)
    x, y = make_blobs(n_samples=n, centers=centers, cluster_std=std, random_state=seed)
    return Dataset(x.astype(np.float64), y.astype(np.int64), classes, (2,))


def make_two_moons(n=400, noise=0.1, seed=0):
    x, y = make_moons(n_samples=n, noise=noise, random_state=seed)
    return Dataset(x.astype(np.float64), y.astype(np.int64), 2, (2,))


def _parser_line(error):
    match = re.search(r"line (\d+)", str(error))
    return int(match.group(1)) if match else 1


def load_tiny_images(path, shape=None, classes=None):
    """Read `label,px0,px1,...` rows (0-based labels, pixels in [0, 1])."""
    try:
        frame = pd.read_csv(path, encoding="utf-8", dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError as e:
        raise MalformedCsv(1, "file is empty") from e
    except pd.errors.ParserError as e:
        raise MalformedCsv(_parser_line(e), str(e)) from e
    except UnicodeDecodeError as e:
        raise MalformedCsv(1, f"not UTF-8: {e}") from e

    columns = list(frame.columns)
    expected = ["label"] + [f"px{i}" for i in range(len(columns) - 1)]
    if columns != expected or len(columns) < 2:
        raise MalformedCsv(1, "header must be label,px0,px1,...")
    if frame.empty:
        raise MalformedCsv(2, "no data rows")

    pixels = len(columns) - 1
    shape = tuple(int(v) for v in shape) if shape else (pixels,)
    if int(np.prod(shape)) != pixels:
        raise MalformedCsv(1, f"{pixels} pixel columns do not match shape {shape}")

    labels = pd.to_numeric(frame["label"], errors="coerce")
    values = frame[expected[1:]].apply(pd.to_numeric, errors="coerce")
    for i in range(len(frame)):
        line = i + 2
        label = labels.iat[i]
        if pd.isna(label) or label < 0 or label != int(label):
            raise MalformedCsv(line, f"label {frame['label'].iat[i]!r} is not a non-negative integer")
        row = values.iloc[i].to_numpy()
        if np.any(np.isnan(row)):
            raise MalformedCsv(line, "non-numeric pixel value")
        if np.any(row < 0.0) or np.any(row > 1.0):
            raise MalformedCsv(line, "pixel values must lie in [0, 1]")

    y = labels.to_numpy().astype(np.int64)
    num_classes = int(classes) if classes else int(y.max()) + 1
    if y.max() >= num_classes:
        raise MalformedCsv(int(np.argmax(y >= num_classes)) + 2, f"label exceeds {num_classes - 1}")
    x = values.to_numpy(dtype=np.float64).reshape((len(frame),) + shape)
    logger.info("loaded %d images of shape %s from %s", len(frame), shape, path)
    return Dataset(x, y, num_classes, shape)


def make_dataset(kind, params=None, seed=0):
    params = dict(params or {})
    try:
        kind = DatasetKind(kind)
    except ValueError as e:
        raise ConfigError("dataset.kind", f"unknown dataset {kind!r}") from e
    try:
        if kind is DatasetKind.BLOBS:
            return make_blobs_dataset(seed=seed, **params)
        if kind is DatasetKind.TWO_MOONS:
            return make_two_moons(seed=seed, **params)
        if "path" not in params:
            raise ConfigError("dataset.params.path", "tiny_images needs a CSV path")
        return load_tiny_images(**params)
    except TypeError as e:
        raise ConfigError("dataset.params", str(e)) from e
