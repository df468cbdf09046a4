"""Dense matrix/tensor containers, SVD and convolution-kernel unfolding.

Everything downstream assumes an oriented matrix (rows >= cols, i.e. n <= m).
"""
from dataclasses import dataclass
from enum import Enum

import numpy as np

from errors import NonConvergence, NonFiniteInput


class UnfoldMode(str, Enum):
    INPUT_CHANNEL = "mode3"
    OUTPUT_CHANNEL = "mode4"


def _frozen(values):
    values = np.array(values, dtype=np.float64, copy=True)
    values.setflags(write=False)
    return values


@dataclass(frozen=True, eq=False)
class Matrix:
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"Matrix needs a non-empty 2-D array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteInput("Matrix entries must be finite")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_array(cls, array, orient=True):
        matrix = cls(np.asarray(array))
        return matrix.oriented() if orient else matrix

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def cols(self):
        return self.values.shape[1]

    @property
    def is_oriented(self):
        return self.rows >= self.cols

    def oriented(self):
        return self if self.is_oriented else self.transpose()

    def transpose(self):
        return Matrix(self.values.T)

    def frobenius_norm(self):
        return float(np.linalg.norm(self.values))


@dataclass(frozen=True, eq=False)
class Tensor4D:
    """Convolution kernel laid out as (h, w, n_in, n_out)."""

    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 4 or min(values.shape) < 1:
            raise ValueError(f"Tensor4D needs a non-empty 4-D array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteInput("Tensor4D entries must be finite")
        object.__setattr__(self, "values", values)

    @property
    def h(self):
        return self.values.shape[0]

    @property
    def w(self):
        return self.values.shape[1]

    @property
    def n_in(self):
        return self.values.shape[2]

    @property
    def n_out(self):
        return self.values.shape[3]

    def frobenius_norm(self):
        return float(np.linalg.norm(self.values.ravel()))


@dataclass(frozen=True, eq=False)
class SvdResult:
    singular_values: np.ndarray
    left_vectors: Matrix
    right_vectors: Matrix

    def reconstruct(self):
        u = self.left_vectors.values
        v = self.right_vectors.values
        return (u * self.singular_values) @ v.T


def unfold(t, mode):
    """Matricize a kernel along the input (mode-3) or output (mode-4) channel axis."""
    mode = UnfoldMode(mode)
    if mode is UnfoldMode.INPUT_CHANNEL:
        flat = np.moveaxis(t.values, 2, 3).reshape(-1, t.n_in)
    else:
        flat = t.values.reshape(-1, t.n_out)
    return Matrix(flat).oriented()


def svd(m):
    try:
        u, s, vt = np.linalg.svd(m.values, full_matrices=False)
    except np.linalg.LinAlgError as e:
        raise NonConvergence(f"SVD did not converge for a {m.rows}x{m.cols} matrix: {e}") from e
    s = np.clip(s, 0.0, None)
    s.setflags(write=False)
    return SvdResult(singular_values=s, left_vectors=Matrix(u), right_vectors=Matrix(vt.T))


def singular_values(m):
    try:
        s = np.linalg.svd(m.values, compute_uv=False)
    except np.linalg.LinAlgError as e:
        raise NonConvergence(f"SVD did not converge for a {m.rows}x{m.cols} matrix: {e}") from e
    return np.clip(s, 0.0, None)


def as_probe_input(array):
    """Wrap a raw weight array as an oriented Matrix (2-D) or a Tensor4D (4-D)."""
    array = np.asarray(array, dtype=np.float64)
    if array.ndim == 2:
        return Matrix.from_array(array)
    if array.ndim == 4:
        return Tensor4D(array)
    raise ValueError(f"only 2-D and 4-D weights can be probed, got {array.ndim}-D")
