import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from errors import (
    DegenerateInput,
    EmptyFactorization,
    EmptyNetwork,
    NonConvergence,
    UnmeasurableLayer,
)
from evbmf import factorize
from linalg import Matrix, Tensor4D, UnfoldMode, as_probe_input, unfold

logger = logging.getLogger(__name__)

HALF_PI = math.pi / 2


@dataclass
class LayerMetrics:
    stable_rank: float
    condition: float
    quality: float
    estimated_rank: int
    layer_index: int
    noise_variance: float = 0.0
    name: str = ""
    mode: str = "dense"
    per_mode: List["LayerMetrics"] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.stable_rank <= 1.0:
            raise ValueError(f"stable_rank out of [0, 1]: {self.stable_rank}")
        if not 0.0 <= self.condition <= 1.0:
            raise ValueError(f"condition out of [0, 1]: {self.condition}")
        if not 0.0 <= self.quality <= HALF_PI:
            raise ValueError(f"quality out of [0, pi/2]: {self.quality}")
        if self.estimated_rank == 0 and (self.stable_rank != 0.0 or self.quality != 0.0):
            raise ValueError("an empty factorization must have zero stable rank and quality")


@dataclass
class QualityReport:
    epoch: int
    per_layer: List[LayerMetrics]
    network_quality: float

    @classmethod
    def from_layers(cls, epoch, per_layer):
        return cls(epoch=epoch, per_layer=list(per_layer),
                   network_quality=network_quality([lm.quality for lm in per_layer]))

    def recompute(self):
        return network_quality([lm.quality for lm in self.per_layer])

    @property
    def stable_ranks(self):
        return [lm.stable_rank for lm in self.per_layer]


# --- Metric formulas ---
def stable_rank(f):
    """Energy of the retained spectrum over n * sigma_1^2, in [0, 1]."""
    if f.estimated_rank == 0:
        return 0.0
    sigma = f.retained_singular_values
    value = float(np.sum(sigma ** 2) / (f.n * sigma[0] ** 2))
    return min(max(value, 0.0), 1.0)


def condition(f):
    """1 - sigma_min / sigma_max of the retained spectrum, in [0, 1]."""
    if f.estimated_rank == 0:
        raise EmptyFactorization("condition is undefined for an empty factorization")
    sigma = f.retained_singular_values
    return min(max(1.0 - float(sigma[-1] / sigma[0]), 0.0), 1.0)


def layer_quality(s, k):
    if s == 0.0:
        return 0.0
    if k == 0.0:
        return HALF_PI
    return math.atan(s / k)


def network_quality(q):
    q = np.asarray(q, dtype=np.float64)
    if q.size == 0:
        raise EmptyNetwork("network quality needs at least one probed layer")
    return float(np.sum(q ** 2) / math.sqrt(q.size))


# --- Layer probing ---
def _measure_matrix(matrix, layer_index, name, mode, noise_variance):
    f = factorize(matrix, noise_variance=noise_variance)
    s = stable_rank(f)
    if f.estimated_rank == 0:
        k, q = 0.0, 0.0
    else:
        k = condition(f)
        q = layer_quality(s, k)
    logger.debug("%s[%s]: rank=%d s=%.6f kappa=%.6f q=%.6f", name, mode, f.estimated_rank, s, k, q)
    return LayerMetrics(
        stable_rank=s,
        condition=k,
        quality=q,
        estimated_rank=f.estimated_rank,
        layer_index=layer_index,
        noise_variance=f.noise_variance,
        name=name,
        mode=mode,
    )


def _average(per_mode, layer_index, name):
    count = len(per_mode)
    ranks = [lm.estimated_rank for lm in per_mode]
    rank = math.ceil(sum(ranks) / count)
    return LayerMetrics(
        stable_rank=sum(lm.stable_rank for lm in per_mode) / count,
        condition=sum(lm.condition for lm in per_mode) / count,
        quality=sum(lm.quality for lm in per_mode) / count,
        estimated_rank=rank,
        layer_index=layer_index,
        noise_variance=sum(lm.noise_variance for lm in per_mode) / count,
        name=name,
        mode="avg",
        per_mode=list(per_mode),
    )


def measure_layer(w, layer_index=1, name="", noise_variance=None):
    """Probe a 2-D weight or a 4-D kernel.

    Kernels are measured on both the input- and output-channel unfoldings and
    the per-metric mean is returned; a mode whose unfolding is degenerate
    (e.g. a single input channel) is skipped.
    """
    if not isinstance(w, (Matrix, Tensor4D)):
        try:
            w = as_probe_input(w)
        except ValueError as e:
            raise UnmeasurableLayer(name, e) from e

    if isinstance(w, Matrix):
        try:
            return _measure_matrix(w.oriented(), layer_index, name, "dense", noise_variance)
        except (DegenerateInput, NonConvergence) as e:
            raise UnmeasurableLayer(name, e) from e

    per_mode, failures = [], []
    for mode in (UnfoldMode.INPUT_CHANNEL, UnfoldMode.OUTPUT_CHANNEL):
        try:
            per_mode.append(_measure_matrix(unfold(w, mode), layer_index, name, mode.value, noise_variance))
        except (DegenerateInput, NonConvergence) as e:
            failures.append(e)
    if not per_mode:
        raise UnmeasurableLayer(name, failures[0])
    if failures:
        logger.info("%s: measured on %s only (%s)", name, per_mode[0].mode, failures[0])
    return _average(per_mode, layer_index, name)


def smaller_side(w):
    """Smaller side of the matrix a weight is probed as; for kernels, the larger over both unfoldings."""
    shape = np.shape(getattr(w, "values", w))
    if len(shape) == 4:
        h, w_, n_in, n_out = shape
        return max(min(n_in, h * w_ * n_out), min(n_out, h * w_ * n_in))
    return min(shape) if shape else 0


def measure_network(weights, epoch=0, threads=1, noise_variance=None, min_dim=None):
    """Probe every named weight; layer indices follow the mapping's order (1-based).

    Unmeasurable layers are skipped with a warning; layers whose smaller side is
    below `min_dim` are left out without one.
    """
    items = list(weights.items())

    def probe(indexed):
        index, (name, w) = indexed
        if min_dim is not None and smaller_side(w) < min_dim:
            logger.debug("%s: smaller side %d is below %d, not probed", name, smaller_side(w), min_dim)
            return None
        return measure_or_none(w, index, name, noise_variance=noise_variance)

    indexed = list(enumerate(items, start=1))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(probe, indexed))
    else:
        results = [probe(item) for item in indexed]
    per_layer = [lm for lm in results if lm is not None]
    return QualityReport.from_layers(epoch, per_layer)


def measure_or_none(w, layer_index, name, noise_variance=None) -> Optional[LayerMetrics]:
    try:
        return measure_layer(w, layer_index=layer_index, name=name, noise_variance=noise_variance)
    except UnmeasurableLayer as e:
        logger.warning("%s", e)
        return None
