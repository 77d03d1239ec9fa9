"""Exact GP regression with known, per-observation noise variances.

Inputs are min-max normalized to the unit cube using the declared search box,
outputs are standardized to zero mean and unit variance, and each noise
variance is divided by the squared output scale so that the model

    y_i = f(x_i) + eps_i,  eps_i ~ N(0, v_i)

is fitted consistently on the standardized scale.  The prior mean is zero on
that scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .exceptions import InputError, NumericalError
from .kernels import KernelFamily, KernelSpec, correlation, cross_kernel, pairwise_distances

DEFAULT_JITTER = 1e-10
JITTER_RETRIES = 3
DEFAULT_LENGTH_SCALE_GRID = tuple(np.logspace(-2.0, 1.0, 13))

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Dataset:
    """Observed triples ``(x_i, y_i, v_i)`` in original units."""

    inputs: np.ndarray
    outputs: np.ndarray
    noise_vars: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.outputs, dtype=float).reshape(-1)
        nv = np.asarray(self.noise_vars, dtype=float).reshape(-1)
        if X.ndim != 2 or not (len(X) == len(y) == len(nv)):
            raise InputError(
                f"inputs, outputs and noise_vars must have equal lengths "
                f"(got {len(X)}, {len(y)}, {len(nv)})"
            )
        if not np.all(np.isfinite(nv)) or np.any(nv < 0):
            raise InputError("noise variances must be finite and nonnegative")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
            raise InputError("inputs and outputs must be finite")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "outputs", y)
        object.__setattr__(self, "noise_vars", nv)

    def __len__(self):
        return len(self.outputs)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True)
class PreprocessState:
    input_lo: np.ndarray
    input_hi: np.ndarray
    output_mean: float = 0.0
    output_std: float = 1.0

    def __post_init__(self):
        lo = np.asarray(self.input_lo, dtype=float).reshape(-1)
        hi = np.asarray(self.input_hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise InputError("input_hi must exceed input_lo componentwise")
        if not (self.output_std > 0 and math.isfinite(self.output_std)):
            raise InputError("output_std must be positive")
        object.__setattr__(self, "input_lo", lo)
        object.__setattr__(self, "input_hi", hi)
        object.__setattr__(self, "output_mean", float(self.output_mean))
        object.__setattr__(self, "output_std", float(self.output_std))

    @classmethod
    def from_data(cls, data: Dataset, bounds=None, standardize: bool = True) -> "PreprocessState":
        lo, hi = _bounds_arrays(bounds, data.dim)
        if not standardize:
            return cls(lo, hi, 0.0, 1.0)
        mean = float(np.mean(data.outputs))
        std = float(np.std(data.outputs))
        if len(data) < 2 or not std > 1e-12 * (1.0 + abs(mean)):
            std = 1.0
        return cls(lo, hi, mean, std)

    def normalize(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.input_lo) / (self.input_hi - self.input_lo)

    def denormalize(self, U) -> np.ndarray:
        return self.input_lo + np.asarray(U, dtype=float) * (self.input_hi - self.input_lo)

    def standardize(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.output_mean) / self.output_std

    def destandardize(self, z) -> np.ndarray:
        return self.output_mean + np.asarray(z, dtype=float) * self.output_std


def _bounds_arrays(bounds, dim: int):
    if bounds is None:
        return np.zeros(dim), np.ones(dim)
    b = np.asarray(bounds, dtype=float)
    if b.shape != (dim, 2):
        raise InputError(f"bounds must have shape ({dim}, 2), got {b.shape}")
    return b[:, 0].copy(), b[:, 1].copy()


@dataclass(frozen=True, eq=False)
class GpPosterior:
    """A fitted GP answering posterior mean, variance and covariance queries.

    All internal quantities live on the normalized input / standardized
    output scale.  The public helpers :func:`posterior_mean`,
    :func:`posterior_var` and :func:`posterior_cov` accept points in original
    units; pass ``standardized=True`` to get values on the model scale.
    """

    kernel: KernelSpec
    train_inputs: np.ndarray
    factor: np.ndarray
    weights: np.ndarray
    preprocess: PreprocessState
    noise_vars: np.ndarray = field(default_factory=lambda: np.zeros(0))
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return self.train_inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.preprocess.input_lo.shape[0]

    @property
    def output_std(self) -> float:
        return self.preprocess.output_std

    def project(self, U):
        """Return ``(k_star, V)`` with ``V = L^{-1} k_star`` for normalized points ``U``."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        if U.shape[1] != self.dim:
            raise InputError(f"dimension mismatch: {U.shape[1]} vs {self.dim}")
        if self.n == 0:
            empty = np.zeros((0, U.shape[0]))
            return empty, empty
        k_star = cross_kernel(self.kernel, self.train_inputs, U)
        V = linalg.solve_triangular(self.factor, k_star, lower=True, check_finite=False)
        return k_star, V

    def predict_normalized(self, U):
        """Standardized posterior mean and variance at normalized points."""
        k_star, V = self.project(U)
        mean = k_star.T @ self.weights if self.n else np.zeros(k_star.shape[1])
        var = self.kernel.amplitude - np.einsum("ij,ij->j", V, V)
        return mean, np.maximum(var, 0.0)

    def cov_normalized(self, Ua, Ub) -> np.ndarray:
        """Standardized posterior covariance matrix between two normalized point sets."""
        _, Va = self.project(Ua)
        _, Vb = self.project(Ub)
        prior = cross_kernel(self.kernel, np.atleast_2d(Ua), np.atleast_2d(Ub))
        return prior - Va.T @ Vb

    def predict(self, X, standardized: bool = False):
        U = self.preprocess.normalize(np.atleast_2d(X))
        mean, var = self.predict_normalized(U)
        if standardized:
            return mean, var
        return self.preprocess.destandardize(mean), var * self.output_std**2


def _factorize(A: np.ndarray, jitter: float, amplitude: float):
    """Cholesky of ``A + jitter I`` with up to three tenfold jitter escalations."""
    n = A.shape[0]
    current = jitter
    for attempt in range(JITTER_RETRIES + 1):
        try:
            L = linalg.cholesky(A + current * np.eye(n), lower=True, check_finite=False)
            if np.all(np.isfinite(L)):
                return L, current
        except linalg.LinAlgError:
            pass
        if attempt < JITTER_RETRIES:
            current = current * 10.0 if current > 0 else DEFAULT_JITTER * amplitude
    try:
        cond = float(np.linalg.cond(A))
    except np.linalg.LinAlgError:
        cond = float("inf")
    raise NumericalError(
        f"Cholesky factorization failed for n={n} after {JITTER_RETRIES} jitter "
        f"escalations (final jitter {current:.3g}, condition number {cond:.3g})"
    )


def prior(spec: KernelSpec, bounds=None, dim: int | None = None) -> GpPosterior:
    """A posterior with an empty conditioning set, i.e. the prior itself."""
    if bounds is None and dim is None:
        raise InputError("prior needs bounds or dim")
    if dim is None:
        dim = np.asarray(bounds).shape[0]
    lo, hi = _bounds_arrays(bounds, dim)
    return GpPosterior(
        kernel=spec,
        train_inputs=np.zeros((0, dim)),
        factor=np.zeros((0, 0)),
        weights=np.zeros(0),
        preprocess=PreprocessState(lo, hi, 0.0, 1.0),
    )


def fit(
    spec: KernelSpec,
    data: Dataset,
    jitter: float | None = None,
    bounds=None,
    standardize: bool = True,
) -> GpPosterior:
    """Condition the GP prior on ``data``.

    Parameters
    ----------
    spec : KernelSpec
        Prior covariance.
    data : Dataset
        Observations in original units.
    jitter : float, optional
        Diagonal regularization added before factorization.  Defaults to
        ``1e-10 * spec.amplitude``.
    bounds : array_like of shape (d, 2), optional
        Search box used for input normalization; the unit cube when omitted.
    standardize : bool
        Standardize outputs (and rescale noise variances) before fitting.

    Returns
    -------
    GpPosterior
    """
    if len(data) == 0:
        raise InputError("fit needs at least one observation")
    if jitter is None:
        jitter = DEFAULT_JITTER * spec.amplitude
    if jitter < 0:
        raise InputError("jitter must be nonnegative")
    pre = PreprocessState.from_data(data, bounds, standardize)
    U = pre.normalize(data.inputs)
    y = pre.standardize(data.outputs)
    nv = data.noise_vars / pre.output_std**2
    K = cross_kernel(spec, U, U)
    K = 0.5 * (K + K.T)
    np.fill_diagonal(K, spec.amplitude)
    L, used = _factorize(K + np.diag(nv), jitter, spec.amplitude)
    w = linalg.cho_solve((L, True), y, check_finite=False)
    return GpPosterior(spec, U, L, w, pre, nv, used)


def posterior_mean(gp: GpPosterior, x, standardized: bool = False):
    mean, _ = gp.predict(x, standardized=standardized)
    return float(mean[0]) if np.ndim(x) <= 1 else mean


def posterior_var(gp: GpPosterior, x, standardized: bool = False):
    _, var = gp.predict(x, standardized=standardized)
    return float(var[0]) if np.ndim(x) <= 1 else var


def posterior_cov(gp: GpPosterior, xa, xb, standardized: bool = False) -> float:
    """Posterior covariance between the latent values at ``xa`` and ``xb``."""
    Ua = gp.preprocess.normalize(np.atleast_2d(xa))
    Ub = gp.preprocess.normalize(np.atleast_2d(xb))
    c = float(gp.cov_normalized(Ua, Ub)[0, 0])
    return c if standardized else c * gp.output_std**2


def _lml_from_matrix(A: np.ndarray, y: np.ndarray, jitter: float, amplitude: float) -> float:
    L, _ = _factorize(A, jitter, amplitude)
    alpha = linalg.cho_solve((L, True), y, check_finite=False)
    return float(
        -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * len(y) * _LOG_2PI
    )


def log_marginal_likelihood(
    spec: KernelSpec,
    data: Dataset,
    jitter: float | None = None,
    bounds=None,
    standardize: bool = True,
) -> float:
    """Gaussian log evidence of the standardized outputs."""
    if len(data) == 0:
        raise InputError("log_marginal_likelihood needs at least one observation")
    if jitter is None:
        jitter = DEFAULT_JITTER * spec.amplitude
    pre = PreprocessState.from_data(data, bounds, standardize)
    U = pre.normalize(data.inputs)
    D = pairwise_distances(U, U)
    return _lml_at(spec, D, pre.standardize(data.outputs), data.noise_vars / pre.output_std**2, jitter)


def _lml_at(spec, D, y, nv, jitter) -> float:
    K = spec.amplitude * correlation(spec.family, D, spec.length_scale)
    np.fill_diagonal(K, spec.amplitude)
    return _lml_from_matrix(K + np.diag(nv), y, jitter, spec.amplitude)


def _golden_max(fn, lo: float, hi: float, iters: int = 24):
    """Scalar golden-section search for a maximum on ``[lo, hi]``."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = fn(d)
    return (c, fc) if fc >= fd else (d, fd)


def fit_hyperparameters(
    family,
    data: Dataset,
    grid=DEFAULT_LENGTH_SCALE_GRID,
    amplitude: float = 1.0,
    jitter: float | None = None,
    bounds=None,
    standardize: bool = True,
    refine: bool = True,
) -> KernelSpec:
    """Select the length scale by maximum marginal likelihood.

    The grid is scanned first (ties resolved toward the larger length
    scale); the winner is then polished by golden-section search in
    log-length-scale over the interval bracketed by its grid neighbours.
    """
    family = KernelFamily.parse(family)
    grid = np.sort(np.asarray(grid, dtype=float).reshape(-1))
    if grid.size == 0:
        raise InputError("length-scale grid is empty")
    if len(data) == 0:
        raise InputError("fit_hyperparameters needs at least one observation")
    if jitter is None:
        jitter = DEFAULT_JITTER * amplitude
    pre = PreprocessState.from_data(data, bounds, standardize)
    U = pre.normalize(data.inputs)
    D = pairwise_distances(U, U)
    y = pre.standardize(data.outputs)
    nv = data.noise_vars / pre.output_std**2

    def score(ls: float) -> float:
        try:
            return _lml_at(KernelSpec(family, ls, amplitude), D, y, nv, jitter)
        except NumericalError:
            return -math.inf

    values = np.array([score(ls) for ls in grid])
    if not np.any(np.isfinite(values)):
        raise NumericalError("marginal likelihood could not be evaluated for any length scale")
    best = int(np.flatnonzero(values == values.max())[-1])
    best_ls, best_val = float(grid[best]), float(values[best])
    if refine and grid.size > 1:
        lo = math.log(grid[max(best - 1, 0)])
        hi = math.log(grid[min(best + 1, grid.size - 1)])
        log_ls, val = _golden_max(lambda t: score(math.exp(t)), lo, hi)
        if val > best_val:
            best_ls, best_val = math.exp(log_ls), val
    return KernelSpec(family, best_ls, amplitude)
