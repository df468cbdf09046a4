"""Empirical variational Bayesian matrix factorization (global analytic solution).

Splits a weight matrix into a low-rank signal part plus Gaussian noise. Only the
retained (shrunk) spectrum is kept; the singular vectors are not needed by the
probes.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from config import NOISE_SEARCH_XTOL
from errors import DegenerateInput
from linalg import singular_values

logger = logging.getLogger(__name__)

# Constant of the analytic EVBMF threshold.
TAU_BAR_COEFF = 2.5129


@dataclass(frozen=True, eq=False)
class FactorizedLayer:
    retained_singular_values: np.ndarray
    estimated_rank: int
    noise_variance: float
    n: int
    m: int
    capped: bool = False
    input_singular_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        values = np.asarray(self.retained_singular_values, dtype=np.float64)
        if self.estimated_rank != len(values):
            raise ValueError("estimated_rank must equal the number of retained singular values")
        if not 0 <= self.estimated_rank <= self.n <= self.m:
            raise ValueError(f"need 0 <= rank <= n <= m, got rank={self.estimated_rank} n={self.n} m={self.m}")
        if len(values) and (np.any(values <= 0) or np.any(np.diff(values) > 0)):
            raise ValueError("retained singular values must be strictly positive and descending")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be non-negative")
        object.__setattr__(self, "retained_singular_values", values)


def _constants(n, m):
    alpha = n / m
    tau_bar = TAU_BAR_COEFF * np.sqrt(alpha)
    x_bar = (1 + tau_bar) * (1 + alpha / tau_bar)
    return alpha, tau_bar, x_bar


def _tau(x, alpha):
    return 0.5 * (x - (1 + alpha) + np.sqrt(np.clip((x - (1 + alpha)) ** 2 - 4 * alpha, 0.0, None)))


def _free_energy(sigma2, s, m, alpha, x_bar):
    x = np.maximum(s ** 2 / (m * sigma2), np.finfo(np.float64).tiny)
    above = x > x_bar
    z1 = x[above]
    z2 = x[~above]
    tau_z1 = _tau(z1, alpha)
    return (
        np.sum(z2 - np.log(z2))
        + np.sum(z1 - tau_z1)
        + np.sum(np.log((tau_z1 + 1) / z1))
        + alpha * np.sum(np.log(tau_z1 / alpha + 1))
    )


def _check_shape(n, m):
    if n < 2 or m < 2:
        raise DegenerateInput(f"EVBMF needs both dimensions >= 2, got {m}x{n}")


def _rank_tolerance(s, n, m):
    """Singular values at or below this are indistinguishable from zero in float64."""
    return float(s[0]) * max(n, m) * np.finfo(np.float64).eps


def _search_noise_variance(s, n, m):
    upper = float(np.sum(s ** 2) / (n * m))
    if upper <= 0.0:
        return 0.0
    alpha, _, x_bar = _constants(n, m)
    tail = int(min(np.ceil(n / (1 + alpha)) - 1, n))
    lower = float(max(s[tail] ** 2 / (m * x_bar), np.mean(s[tail:] ** 2) / m))
    # Below this, round-off singular values would clear the threshold.
    lower = max(lower, _rank_tolerance(s, n, m) ** 2 / m)
    if lower >= upper:
        return upper

    # The objective is smooth between the points where a singular value crosses the threshold.
    crossings = s ** 2 / (m * x_bar)
    edges = np.unique(np.concatenate([[lower, upper], crossings[(crossings > lower) & (crossings < upper)]]))
    xatol = NOISE_SEARCH_XTOL * upper

    def objective(sigma2):
        return _free_energy(sigma2, s, m, alpha, x_bar)

    best_sigma2, best_value = upper, objective(upper)
    for a, b in zip(edges[:-1], edges[1:]):
        candidates = [a]
        if b - a > xatol:
            result = optimize.minimize_scalar(objective, bounds=(a, b), method="bounded", options={"xatol": xatol})
            candidates.append(float(result.x))
        for sigma2 in candidates:
            value = objective(sigma2)
            if value < best_value:
                best_sigma2, best_value = sigma2, value
    return float(best_sigma2)


def estimate_noise_variance(m):
    """Noise variance minimizing the EVBMF free energy of `m`."""
    m = m.oriented()
    _check_shape(m.cols, m.rows)
    return _search_noise_variance(singular_values(m), m.cols, m.rows)


def _shrink(s, n, m, sigma2):
    if sigma2 == 0.0:
        return s.copy()
    ratio = (n + m) * sigma2 / s ** 2
    disc = np.clip((1 - ratio) ** 2 - 4 * n * m * sigma2 ** 2 / s ** 4, 0.0, None)
    return s / 2 * (1 - ratio + np.sqrt(disc))


def factorize(m, noise_variance=None):
    """EVBMF low-rank part of `m`.

    Passing `noise_variance` skips the estimate; `noise_variance=0` keeps every
    non-zero singular value unshrunk (plain SVD truncation).
    """
    m = m.oriented()
    n_small, m_large = m.cols, m.rows
    _check_shape(n_small, m_large)
    s = singular_values(m)

    estimated = noise_variance is None
    if estimated:
        sigma2 = _search_noise_variance(s, n_small, m_large)
    else:
        sigma2 = float(noise_variance)
        if sigma2 < 0:
            raise ValueError("noise_variance must be non-negative")

    _, _, x_bar = _constants(n_small, m_large)
    threshold = np.sqrt(m_large * sigma2 * x_bar)
    rank = int(np.sum(s > threshold))
    shrunk = _shrink(s[:rank], n_small, m_large, sigma2)
    positive = shrunk > 0
    if not np.all(positive):
        rank = int(np.argmin(positive))
        shrunk = shrunk[:rank]

    capped = False
    if estimated and rank >= n_small:
        logger.warning("EVBMF retained all %d singular values of a %dx%d matrix; capping rank at %d",
                       n_small, m_large, n_small, n_small - 1)
        rank = n_small - 1
        shrunk = shrunk[:rank]
        capped = True

    logger.debug("factorized %dx%d: rank=%d sigma2=%.6g", m_large, n_small, rank, sigma2)
    return FactorizedLayer(
        retained_singular_values=shrunk,
        estimated_rank=rank,
        noise_variance=sigma2,
        n=n_small,
        m=m_large,
        capped=capped,
        input_singular_values=s,
    )
