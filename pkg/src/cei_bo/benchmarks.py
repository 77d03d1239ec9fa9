"""Synthetic test objectives, the noise protocol and evaluation metrics.

All benchmarks are *minimized*.  :func:`as_maximization` wraps a benchmark and
a noise model into the ``(objective, truth, optimum)`` triple expected by
:func:`cei_bo.loop.run_bo`, which maximizes ``-f``.

Domains follow the usual literature boxes:

=============  ================  ===
name           box               dim
=============  ================  ===
hartmann3      [0, 1]            3
griewank6      [-600, 600]       6
levy4          [-10, 10]         4
powell5        [-4, 5]           5
sphere3        [-5.12, 5.12]     3
gp_sampled     [0, 50]           1
=============  ================  ===

Powell is defined in groups of four coordinates; with ``d = 5`` the second
group wraps around, i.e. uses coordinates ``(5, 1, 2, 3)``.
"""

from __future__ import annotations

import csv
import functools
import io
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import InputError, NumericalError
from .gp import _factorize
from .kernels import KernelSpec, kernel_matrix
from ._io import atomic_write_text
from .sampling import sobol_init

LOG_GAP_FLOOR = 1e-12
RANGE_SCAN_POINTS = 100_000

GP_SAMPLED_GRID = 4000
GP_SAMPLED_DOMAIN = (0.0, 50.0)
GP_SAMPLED_LENGTH_SCALE = 3.0
GP_SAMPLED_NOISE_STD = 0.16


@dataclass(eq=False)
class BenchmarkFunction:
    """A box-constrained test function with known minimum."""

    id: str
    dim: int
    bounds: np.ndarray
    optimum_value: float
    optimizer: np.ndarray
    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    _range: float | None = field(default=None, repr=False)

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=float)
        self.optimizer = np.asarray(self.optimizer, dtype=float)

    def __call__(self, x) -> float:
        return eval_benchmark(self, x)

    def values(self, X) -> np.ndarray:
        """Vectorized evaluation without bounds checks."""
        return self.fn(np.atleast_2d(np.asarray(X, dtype=float)))

    @property
    def range_estimate(self) -> float:
        """``max f - min f`` over the box, estimated once by a Sobol scan."""
        if self._range is None:
            lo, hi = self.bounds[:, 0], self.bounds[:, 1]
            U = sobol_init(self.dim, RANGE_SCAN_POINTS, seed=0)
            vals = self.fn(lo + U * (hi - lo))
            self._range = float(vals.max() - min(vals.min(), self.optimum_value))
        return self._range


# ---------------------------------------------------------------------------
# formulas (vectorized over rows)
# ---------------------------------------------------------------------------

_H3_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_H3_A = np.array([[3.0, 10.0, 30.0], [0.1, 10.0, 35.0], [3.0, 10.0, 30.0], [0.1, 10.0, 35.0]])
_H3_P = 1e-4 * np.array(
    [[3689, 1170, 2673], [4699, 4387, 7470], [1091, 8732, 5547], [381, 5743, 8828]]
)


def hartmann3(X):
    X = np.atleast_2d(X)
    inner = np.sum(_H3_A[None, :, :] * (X[:, None, :] - _H3_P[None, :, :]) ** 2, axis=2)
    return -np.exp(-inner) @ _H3_ALPHA


def griewank(X):
    X = np.atleast_2d(X)
    i = np.arange(1, X.shape[1] + 1)
    return 1.0 + np.sum(X**2, axis=1) / 4000.0 - np.prod(np.cos(X / np.sqrt(i)), axis=1)


def levy(X):
    X = np.atleast_2d(X)
    w = 1.0 + (X - 1.0) / 4.0
    head = np.sin(np.pi * w[:, 0]) ** 2
    mid = np.sum((w[:, :-1] - 1.0) ** 2 * (1.0 + 10.0 * np.sin(np.pi * w[:, :-1] + 1.0) ** 2), axis=1)
    tail = (w[:, -1] - 1.0) ** 2 * (1.0 + np.sin(2.0 * np.pi * w[:, -1]) ** 2)
    return head + mid + tail


def powell(X):
    X = np.atleast_2d(X)
    d = X.shape[1]
    total = np.zeros(X.shape[0])
    for g in range(math.ceil(d / 4)):
        a, b, c, e = (X[:, (4 * g + k) % d] for k in range(4))
        total += (a + 10 * b) ** 2 + 5 * (c - e) ** 2 + (b - 2 * c) ** 4 + 10 * (a - e) ** 4
    return total


def sphere(X):
    X = np.atleast_2d(X)
    return np.sum(X**2, axis=1)


def _box(lo, hi, d):
    return np.tile([lo, hi], (d, 1)).astype(float)


def _make(name: str) -> BenchmarkFunction:
    if name == "hartmann3":
        xs = np.array([0.114589, 0.555649, 0.852547])
        return BenchmarkFunction("hartmann3", 3, _box(0, 1, 3), float(hartmann3(xs)[0]), xs, hartmann3)
    if name == "griewank6":
        return BenchmarkFunction("griewank6", 6, _box(-600, 600, 6), 0.0, np.zeros(6), griewank)
    if name == "levy4":
        return BenchmarkFunction("levy4", 4, _box(-10, 10, 4), 0.0, np.ones(4), levy)
    if name == "powell5":
        return BenchmarkFunction("powell5", 5, _box(-4, 5, 5), 0.0, np.zeros(5), powell)
    if name == "sphere3":
        return BenchmarkFunction("sphere3", 3, _box(-5.12, 5.12, 3), 0.0, np.zeros(3), sphere)
    raise InputError(f"unknown benchmark {name!r}")


BENCHMARK_NAMES = ("hartmann3", "griewank6", "levy4", "powell5", "sphere3")


@functools.lru_cache(maxsize=None)
def _cached(name: str) -> BenchmarkFunction:
    return _make(name)


def get_benchmark(name: str, seed: int | None = None) -> BenchmarkFunction:
    """Look up a benchmark by name; ``gp_sampled`` needs a ``seed``."""
    key = name.strip().lower()
    if key == "gp_sampled":
        if seed is None:
            raise InputError("gp_sampled needs a seed")
        return gp_sampled_function(seed)
    return _cached(key)


def eval_benchmark(fn: BenchmarkFunction, x) -> float:
    """Noiseless value at a single in-bounds point."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != fn.dim:
        raise InputError(f"{fn.id} expects {fn.dim} coordinates, got {x.shape[0]}")
    lo, hi = fn.bounds[:, 0], fn.bounds[:, 1]
    slack = 1e-12 * (hi - lo)
    if np.any(x < lo - slack) or np.any(x > hi + slack):
        raise InputError(f"point {x.tolist()} lies outside the {fn.id} box")
    return float(fn.fn(x[None, :])[0])


# ---------------------------------------------------------------------------
# noise
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    """Per-query Gaussian observation noise.

    By default the standard deviation of each query is drawn uniformly on
    ``(0, max_std_fraction * range]``.  ``fixed_std`` switches to a constant
    (homoscedastic) standard deviation instead.
    """

    max_std_fraction: float = 0.1
    fixed_std: float | None = None

    def __post_init__(self):
        if not self.max_std_fraction >= 0:
            raise InputError("max_std_fraction must be nonnegative")
        if self.fixed_std is not None and not self.fixed_std >= 0:
            raise InputError("fixed_std must be nonnegative")

    def draw_std(self, fn: BenchmarkFunction, rng: np.random.Generator) -> float:
        if self.fixed_std is not None:
            return float(self.fixed_std)
        cap = self.max_std_fraction * fn.range_estimate
        if cap == 0:
            return 0.0
        # 1 - U with U in [0, 1) lies in (0, 1]; a subnormal cap can still underflow
        std = float(cap * (1.0 - rng.random()))
        return std if std > 0 else float(cap)


def noisy_eval(fn: BenchmarkFunction, noise: NoiseModel, x, rng: np.random.Generator):
    """Return ``(y, noise_var)`` with ``y = f(x) + eps``, ``eps ~ N(0, noise_var)``."""
    value = eval_benchmark(fn, x)
    std = noise.draw_std(fn, rng)
    if std == 0:
        return value, 0.0
    return value + std * float(rng.standard_normal()), std * std


def as_maximization(fn: BenchmarkFunction, noise: NoiseModel, rng: np.random.Generator):
    """``(objective, truth, optimum)`` for maximizing ``-f`` with :func:`run_bo`."""

    def objective(x):
        y, nv = noisy_eval(fn, noise, x, rng)
        return -y, nv

    def truth(x):
        return -eval_benchmark(fn, x)

    return objective, truth, -fn.optimum_value


# ---------------------------------------------------------------------------
# GP-sampled 1-d functions
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=2)
def _grid_factor(n: int, lo: float, hi: float, length_scale: float, amplitude: float):
    grid = np.linspace(lo, hi, n)
    K = kernel_matrix(KernelSpec("se", length_scale, amplitude), grid[:, None])
    try:
        L, _ = _factorize(K, 1e-8 * amplitude, amplitude)
    except NumericalError as exc:
        raise NumericalError(f"could not factor the {n}-point sampling grid: {exc}") from exc
    return grid, L


def _grid_benchmark(grid: np.ndarray, values: np.ndarray, name: str) -> BenchmarkFunction:
    lo, hi = float(grid[0]), float(grid[-1])
    step = (hi - lo) / (len(grid) - 1)

    def lookup(X):
        X = np.atleast_2d(X)
        idx = np.clip(np.rint((X[:, 0] - lo) / step), 0, len(grid) - 1).astype(int)
        return values[idx]

    j = int(np.argmin(values))
    fn = BenchmarkFunction(name, 1, np.array([[lo, hi]]), float(values[j]),
                           np.array([grid[j]]), lookup)
    fn._range = float(values.max() - values.min())
    fn.grid, fn.grid_values = grid, values
    return fn


def gp_sampled_function(
    seed: int,
    n_grid: int = GP_SAMPLED_GRID,
    domain=GP_SAMPLED_DOMAIN,
    length_scale: float = GP_SAMPLED_LENGTH_SCALE,
    amplitude: float = 1.0,
) -> BenchmarkFunction:
    """One draw from an SE-kernel GP prior on an even 1-d grid.

    Evaluation returns the value at the nearest grid point.
    """
    grid, L = _grid_factor(int(n_grid), float(domain[0]), float(domain[1]),
                           float(length_scale), float(amplitude))
    z = np.random.default_rng(seed).standard_normal(len(grid))
    values = L @ z
    if np.max(np.abs(values)) > 8.0 * math.sqrt(amplitude):
        warnings.warn(f"gp_sampled seed {seed} has |f| > 8; consider another seed")
    return _grid_benchmark(grid, values, f"gp_sampled_{seed}")


def save_grid_function(fn: BenchmarkFunction, path) -> None:
    """Write a grid-backed function as a two-column ``x,value`` CSV."""
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "value"])
    for x, v in zip(fn.grid, fn.grid_values):
        w.writerow([format(float(x), ".17g"), format(float(v), ".17g")])
    atomic_write_text(path, buf.getvalue())


def load_grid_function(path, name: str | None = None) -> BenchmarkFunction:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["x", "value"]:
        raise InputError(f"{path}: expected an 'x,value' header")
    data = np.array([[float(a), float(b)] for a, b in rows[1:]])
    if len(data) < 2 or np.any(np.diff(data[:, 0]) <= 0):
        raise InputError(f"{path}: grid must have at least two increasing points")
    return _grid_benchmark(data[:, 0], data[:, 1], name or os.path.splitext(os.path.basename(path))[0])


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def metric_log_gap(fn: BenchmarkFunction, x_plus) -> float:
    """``log10(f(x+) - f*)`` with the gap floored at ``1e-12``."""
    gap = eval_benchmark(fn, x_plus) - fn.optimum_value
    return math.log10(max(gap, LOG_GAP_FLOOR))


def metric_l2_gap(fn: BenchmarkFunction, x_plus) -> float:
    """Euclidean distance from ``x+`` to the known minimizer, in original units."""
    return float(np.linalg.norm(np.asarray(x_plus, dtype=float).reshape(-1) - fn.optimizer))
