"""Stationary isotropic covariance kernels.

Two families are supported, both parameterized by a single length scale
and an output amplitude ``k(x, x)``:

* Matérn with smoothness 5/2, evaluated through its closed form
  ``(1 + sqrt(5) r + 5 r^2 / 3) exp(-sqrt(5) r)`` with ``r = d / l``;
* squared exponential ``exp(-d^2 / (2 l^2))``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import InputError

_SQRT5 = math.sqrt(5.0)


class KernelFamily(str, enum.Enum):
    MATERN52 = "matern52"
    SQUARED_EXPONENTIAL = "se"

    @classmethod
    def parse(cls, value: "str | KernelFamily") -> "KernelFamily":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        aliases = {
            "matern52": cls.MATERN52,
            "matern": cls.MATERN52,
            "se": cls.SQUARED_EXPONENTIAL,
            "squaredexponential": cls.SQUARED_EXPONENTIAL,
            "rbf": cls.SQUARED_EXPONENTIAL,
        }
        try:
            return aliases[key]
        except KeyError:
            raise InputError(f"unknown kernel family {value!r}") from None


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus hyperparameters.

    Parameters
    ----------
    family : KernelFamily or str
        ``"matern52"`` or ``"se"``.
    length_scale : float
        Isotropic length scale, must be positive.
    amplitude : float
        Prior variance ``k(x, x)``, must be positive.
    """

    family: KernelFamily = KernelFamily.MATERN52
    length_scale: float = 1.0
    amplitude: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily.parse(self.family))
        ls = float(self.length_scale)
        amp = float(self.amplitude)
        if not (math.isfinite(ls) and ls > 0):
            raise InputError(f"length_scale must be positive and finite, got {ls}")
        if not (math.isfinite(amp) and amp > 0):
            raise InputError(f"amplitude must be positive and finite, got {amp}")
        object.__setattr__(self, "length_scale", ls)
        object.__setattr__(self, "amplitude", amp)

    def with_length_scale(self, length_scale: float) -> "KernelSpec":
        return KernelSpec(self.family, length_scale, self.amplitude)


def correlation(family: KernelFamily, dist: np.ndarray, length_scale: float) -> np.ndarray:
    """Unit-amplitude correlation as a function of Euclidean distance."""
    r = np.asarray(dist, dtype=float) / length_scale
    if family is KernelFamily.MATERN52:
        s = _SQRT5 * r
        return (1.0 + s + s * s / 3.0) * np.exp(-s)
    return np.exp(-0.5 * r * r)


def _as_points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise InputError(f"expected a point or a 2-d array of points, got shape {X.shape}")
    return X


def pairwise_distances(A, B) -> np.ndarray:
    A = _as_points(A)
    B = _as_points(B)
    if A.shape[1] != B.shape[1]:
        raise InputError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    # Direct differences keep distances exactly zero for identical points.
    diff = A[:, None, :] - B[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def kernel_eval(spec: KernelSpec, x1, x2) -> float:
    """Covariance between two single points."""
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x1.ndim != 1 or x2.ndim != 1:
        raise InputError("kernel_eval takes two single points")
    if x1.shape != x2.shape:
        raise InputError(f"dimension mismatch: {x1.shape[0]} vs {x2.shape[0]}")
    d = x1 - x2
    dist = math.sqrt(float(np.dot(d, d)))
    return spec.amplitude * float(correlation(spec.family, dist, spec.length_scale))


def cross_kernel(spec: KernelSpec, A, B) -> np.ndarray:
    """Matrix ``[k(a_i, b_j)]`` between two point sets."""
    return spec.amplitude * correlation(spec.family, pairwise_distances(A, B), spec.length_scale)


def kernel_matrix(spec: KernelSpec, X) -> np.ndarray:
    """Symmetric Gram matrix of ``X`` with itself.

    The diagonal is exactly ``spec.amplitude``; no jitter is added here.
    """
    X = _as_points(X)
    K = cross_kernel(spec, X, X)
    K = 0.5 * (K + K.T)
    np.fill_diagonal(K, spec.amplitude)
    return K
