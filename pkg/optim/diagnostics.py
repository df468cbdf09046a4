"""Monitors for the rank-driven step size: monotonicity lower bound and boundedness."""
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from config import LR_BOUND_FACTOR, RMSGD_ETA0
from errors import DegenerateDenominator
from linalg import Matrix, singular_values


def _as_array(x):
    return x.values if isinstance(x, Matrix) else np.asarray(x, dtype=np.float64)


def _trace_terms(w, accumulated_grad):
    w = _as_array(w)
    g = _as_array(accumulated_grad)
    if w.shape != g.shape or w.ndim != 2:
        raise ValueError(f"weight and gradient must be equal-shape matrices, got {w.shape} and {g.shape}")
    tr_ww = float(np.sum(w * w))
    tr_wg = float(np.sum(w * g))
    tr_gg = float(np.sum(g * g))
    norm_w = float(singular_values(Matrix(w))[0])
    norm_g = float(singular_values(Matrix(g))[0])
    return tr_ww, tr_wg, tr_gg, norm_w, norm_g


def _quadratic(w, accumulated_grad):
    tr_ww, tr_wg, tr_gg, norm_w, norm_g = _trace_terms(w, accumulated_grad)
    if norm_w == 0.0:
        raise DegenerateDenominator("weight matrix is zero; the bound is not applicable")
    ratio = norm_g / norm_w
    quad = tr_gg - ratio ** 2 * tr_ww
    lin = tr_wg + ratio * tr_ww
    return quad, lin


def theorem1_lower_bound(w, accumulated_grad):
    """Smallest step size for which the epoch update cannot lower the stable rank bound.

    max{ 2*(tr(W'G) + |G|/|W| tr(W'W)) / (tr(G'G) - |G|^2/|W|^2 tr(W'W)), 0 }
    with spectral norms |.| and G the gradient accumulated over one epoch.
    """
    quad, lin = _quadratic(w, accumulated_grad)
    if quad == 0.0 or not np.isfinite(quad):
        raise DegenerateDenominator("trace denominator vanishes; the bound is not applicable")
    return max(2.0 * lin / quad, 0.0)


def rank_gain_margin(w, accumulated_grad, eta):
    """D(eta); the stable-rank lower bound is non-decreasing wherever it is >= 0."""
    quad, lin = _quadratic(w, accumulated_grad)
    return quad * eta ** 2 - 2.0 * lin * eta


@dataclass
class LayerLrSummary:
    layer: int
    initial: float
    minimum: float
    maximum: float
    final: float


@dataclass
class BoundednessReport:
    eta0: float
    bound: float
    layers: List[LayerLrSummary]
    flags: List[Dict] = field(default_factory=list)
    clamp_count: int = 0

    @property
    def ok(self):
        return not self.flags and self.clamp_count == 0


def lr_boundedness_monitor(history, eta0=RMSGD_ETA0, raw_history=None, clamp_count=0, factor=LR_BOUND_FACTOR):
    """Summarize an epoch-major learning-rate history and flag explosions or non-positive rates."""
    rates = np.asarray(history, dtype=np.float64)
    if rates.size == 0:
        raise ValueError("learning-rate history is empty")
    if rates.ndim == 1:
        rates = rates[:, None]
    raw = rates if raw_history is None else np.asarray(raw_history, dtype=np.float64).reshape(rates.shape)
    bound = factor * eta0

    flags = []
    for epoch, layer in zip(*np.nonzero(rates > bound)):
        flags.append({"epoch": int(epoch), "layer": int(layer) + 1, "value": float(rates[epoch, layer]),
                      "reason": "exceeds_bound"})
    for epoch, layer in zip(*np.nonzero(raw <= 0.0)):
        flags.append({"epoch": int(epoch), "layer": int(layer) + 1, "value": float(raw[epoch, layer]),
                      "reason": "non_positive"})
    flags.sort(key=lambda f: (f["epoch"], f["layer"]))

    layers = [
        LayerLrSummary(layer=j + 1, initial=float(rates[0, j]), minimum=float(rates[:, j].min()),
                       maximum=float(rates[:, j].max()), final=float(rates[-1, j]))
        for j in range(rates.shape[1])
    ]
    return BoundednessReport(eta0=eta0, bound=bound, layers=layers, flags=flags, clamp_count=clamp_count)
