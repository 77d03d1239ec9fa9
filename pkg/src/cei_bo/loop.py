"""Sequential Bayesian-optimization driver.

The loop always *maximizes* the objective it is given.  Benchmarks that are
minimized are wrapped so that the loop sees ``-f`` (see
:mod:`cei_bo.benchmarks`).

Iteration ``t`` makes the ``t``-th function evaluation.  The first
``init_count`` evaluations come from a scrambled Sobol design; afterwards each
iteration refits the GP on ``D_{t-1}``, picks the incumbent, maximizes the
acquisition and stops before evaluating if the maximum falls below ``kappa``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import acquisition as acq
from .acquisition import AcqKind, AcquisitionFunction, AcquisitionSpec, Incumbent
from .exceptions import InputError
from .gp import DEFAULT_LENGTH_SCALE_GRID, Dataset, GpPosterior, fit, fit_hyperparameters
from .kernels import KernelFamily, KernelSpec
from .sampling import sobol_init

Objective = Callable[[np.ndarray], "tuple[float, float]"]
Truth = Callable[[np.ndarray], float]

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_ACQ_STREAM = {kind: i for i, kind in enumerate(AcqKind)}


class TerminationReason(str, enum.Enum):
    KAPPA_REACHED = "kappa_reached"
    BUDGET_EXHAUSTED = "budget_exhausted"


@dataclass(frozen=True)
class AcqOptConfig:
    """Settings of the multi-start derivative-free acquisition optimizer.

    ``n_raw=None`` means ``512 * dim`` candidates.
    """

    n_raw: int | None = None
    n_refine: int = 5
    refine_iters: int = 3
    golden_iters: int = 24

    def raw_count(self, dim: int) -> int:
        return self.n_raw if self.n_raw is not None else 512 * dim


@dataclass(frozen=True)
class RunConfig:
    bounds: tuple
    max_iters: int
    acquisition: AcquisitionSpec = field(default_factory=AcquisitionSpec)
    init_count: int | None = None
    kappa: float = 0.0
    kernel_family: KernelFamily = KernelFamily.MATERN52
    seed: int = 0
    acq_opt: AcqOptConfig = field(default_factory=AcqOptConfig)
    length_scale: float | None = None
    length_scale_grid: tuple = DEFAULT_LENGTH_SCALE_GRID
    amplitude: float = 1.0
    standardize: bool = True
    jitter: float | None = None

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=float)
        if b.ndim != 2 or b.shape[1] != 2 or b.shape[0] < 1 or np.any(b[:, 1] <= b[:, 0]):
            raise InputError("bounds must be a non-empty list of [lo, hi] pairs with hi > lo")
        object.__setattr__(self, "bounds", tuple((float(lo), float(hi)) for lo, hi in b))
        object.__setattr__(self, "kernel_family", KernelFamily.parse(self.kernel_family))
        if self.init_count is None:
            object.__setattr__(self, "init_count", 3 * self.dim)
        if self.init_count < 1:
            raise InputError("init_count must be at least 1")
        if self.max_iters < self.init_count:
            raise InputError(
                f"max_iters ({self.max_iters}) must be >= init_count ({self.init_count})"
            )
        if not (self.kappa >= 0):
            raise InputError("kappa must be nonnegative")
        if self.length_scale is not None and not self.length_scale > 0:
            raise InputError("length_scale must be positive")

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def bounds_array(self) -> np.ndarray:
        return np.asarray(self.bounds, dtype=float)


@dataclass(frozen=True)
class IterationRecord:
    """One iteration of a run.

    ``acq_value`` is in original output units for EI, corrected EI and UCB and
    unitless for the PI variants; ``acq_value_std`` is the value the model
    computed on its standardized scale and ``kappa_std`` the threshold
    expressed on that same scale.  Initial-design rows carry no incumbent or
    acquisition fields.  The row that triggers a kappa stop has
    ``evaluated=False`` and no observation.
    """

    t: int
    x: np.ndarray
    y: float | None
    noise_var: float | None
    evaluated: bool = True
    initial: bool = False
    incumbent_x: np.ndarray | None = None
    incumbent_mu: float | None = None
    acq_value: float | None = None
    acq_value_std: float | None = None
    kappa_std: float | None = None
    output_std: float | None = None
    length_scale: float | None = None
    regret: float | None = None


@dataclass(frozen=True, eq=False)
class RunTrace:
    config: RunConfig
    records: tuple
    termination_reason: TerminationReason
    terminated_at: int | None
    final_incumbent_x: np.ndarray | None
    final_incumbent_mu: float | None
    models: dict = field(default_factory=dict)
    incumbents: dict = field(default_factory=dict)

    @property
    def evaluated(self) -> list:
        return [r for r in self.records if r.evaluated]

    @property
    def n_evaluations(self) -> int:
        return sum(1 for r in self.records if r.evaluated)

    def inputs(self) -> np.ndarray:
        return np.array([r.x for r in self.evaluated])

    def noise_vars(self) -> np.ndarray:
        return np.array([r.noise_var for r in self.evaluated])


class RunAborted(RuntimeError):
    """The objective raised; ``trace`` holds everything recorded before the failure."""

    def __init__(self, message: str, trace: RunTrace):
        super().__init__(message)
        self.trace = trace


def _golden_coordinate(f, starts: np.ndarray, values: np.ndarray, j: int, iters: int):
    """Golden-section line search along coordinate ``j`` for every start at once."""
    m = starts.shape[0]
    a = np.zeros(m)
    b = np.ones(m)
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)

    def at(coord):
        P = starts.copy()
        P[:, j] = coord
        return P, f(P)

    Pc, fc = at(c)
    Pd, fd = at(d)
    best_P, best_v = starts.copy(), values.copy()
    for P, v in ((Pc, fc), (Pd, fd)):
        better = v > best_v
        best_P[better], best_v[better] = P[better], v[better]
    for _ in range(iters):
        left = fc >= fd
        # keep [a, d] where left, [c, b] otherwise
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = b - _INV_PHI * (b - a)
        new_d = a + _INV_PHI * (b - a)
        probe = np.where(left, new_c, new_d)
        Pp, fp = at(probe)
        fd, d, fc, c = (
            np.where(left, fc, fp),
            np.where(left, c, new_d),
            np.where(left, fp, fd),
            np.where(left, new_c, d),
        )
        better = fp > best_v
        best_P[better], best_v[better] = Pp[better], fp[better]
    return best_P, best_v


def maximize_acquisition(
    gp: GpPosterior,
    spec: AcquisitionSpec,
    incumbent: Incumbent,
    acq_opt: AcqOptConfig,
    rng: np.random.Generator,
):
    """Maximize the acquisition over the search box.

    Candidates are half scrambled-Sobol, half uniform in the normalized cube.
    The best ``n_refine`` are refined by cyclic coordinate golden-section
    sweeps.

    Returns
    -------
    x : ndarray
        Maximizer in original units.
    value : float
        Acquisition value at ``x`` on the standardized scale.
    """
    f = AcquisitionFunction(spec, gp, incumbent)
    dim = gp.dim
    n_raw = max(acq_opt.raw_count(dim), 1)
    n_sobol = n_raw // 2
    parts = []
    if n_sobol:
        parts.append(sobol_init(dim, n_sobol, seed=int(rng.integers(2**63))))
    parts.append(rng.uniform(size=(n_raw - n_sobol, dim)))
    cand = np.vstack(parts)
    vals = f(cand)
    best = int(np.argmax(vals))
    best_u, best_v = cand[best].copy(), float(vals[best])
    if acq_opt.n_refine > 0 and acq_opt.refine_iters > 0:
        order = np.argsort(-vals, kind="stable")[: acq_opt.n_refine]
        starts, svals = cand[order].copy(), vals[order].copy()
        for _ in range(acq_opt.refine_iters):
            for j in range(dim):
                starts, svals = _golden_coordinate(f, starts, svals, j, acq_opt.golden_iters)
        k = int(np.argmax(svals))
        if svals[k] > best_v:
            best_u, best_v = starts[k].copy(), float(svals[k])
    return gp.preprocess.denormalize(best_u), best_v


def _make_trace(config, records, reason, terminated_at, final_inc, models, incs):
    return RunTrace(
        config=config,
        records=tuple(records),
        termination_reason=reason,
        terminated_at=terminated_at,
        final_incumbent_x=None if final_inc is None else final_inc[0],
        final_incumbent_mu=None if final_inc is None else final_inc[1],
        models=models,
        incumbents=incs,
    )


def _fit_model(config: RunConfig, data: Dataset) -> GpPosterior:
    bounds = config.bounds_array
    if config.length_scale is not None:
        spec = KernelSpec(config.kernel_family, config.length_scale, config.amplitude)
    else:
        spec = fit_hyperparameters(
            config.kernel_family,
            data,
            grid=config.length_scale_grid,
            amplitude=config.amplitude,
            jitter=config.jitter,
            bounds=bounds,
            standardize=config.standardize,
        )
    return fit(spec, data, jitter=config.jitter, bounds=bounds, standardize=config.standardize)


def run_bo(
    config: RunConfig,
    objective: Objective,
    truth: Truth | None = None,
    optimum: float | None = None,
    keep_models: bool = False,
) -> RunTrace:
    """Run one Bayesian-optimization experiment.

    Parameters
    ----------
    config : RunConfig
    objective : callable
        ``x -> (y, noise_var)``, a noisy observation to be maximized.
    truth : callable, optional
        Noiseless ``x -> f(x)``; together with ``optimum = max f`` it enables
        per-iteration simple regret ``optimum - f(x_t)``.
    keep_models : bool
        Keep every fitted posterior and incumbent (keyed by iteration) on
        the trace, for analysis.
    """
    lo = config.bounds_array[:, 0]
    hi = config.bounds_array[:, 1]
    init_seq, opt_seq = np.random.SeedSequence(config.seed).spawn(2)
    init_seed = int(init_seq.generate_state(1, dtype=np.uint64)[0])
    rng = np.random.default_rng([int(opt_seq.generate_state(1, dtype=np.uint64)[0]),
                                 _ACQ_STREAM[config.acquisition.kind]])
    design = lo + sobol_init(config.dim, config.init_count, seed=init_seed) * (hi - lo)

    records: list[IterationRecord] = []
    models: dict = {}
    incs: dict = {}
    X: list = []
    Y: list = []
    NV: list = []

    def regret_of(x):
        if truth is None or optimum is None:
            return None
        return float(optimum - truth(x))

    def observe(t, x):
        try:
            y, nv = objective(np.array(x, dtype=float))
        except Exception as exc:
            partial = _make_trace(config, records, TerminationReason.BUDGET_EXHAUSTED, None,
                                  None, models, incs)
            raise RunAborted(f"objective failed at iteration {t}: {exc!r}", partial) from exc
        X.append(np.array(x, dtype=float))
        Y.append(float(y))
        NV.append(float(nv))
        return float(y), float(nv)

    for t in range(1, config.init_count + 1):
        x = design[t - 1]
        y, nv = observe(t, x)
        records.append(IterationRecord(t=t, x=x.copy(), y=y, noise_var=nv, initial=True,
                                       regret=regret_of(x)))

    reason, terminated_at = TerminationReason.BUDGET_EXHAUSTED, None
    for t in range(config.init_count + 1, config.max_iters + 1):
        gp = _fit_model(config, Dataset(np.array(X), np.array(Y), np.array(NV)))
        inc = acq.select_incumbent(gp)
        x_next, a_std = maximize_acquisition(gp, config.acquisition, inc, config.acq_opt, rng)
        kind = config.acquisition.kind
        a = float(acq.to_output_units(kind, a_std, gp))
        kappa_std = config.kappa / gp.output_std if kind.scales_with_output else config.kappa
        if keep_models:
            models[t], incs[t] = gp, inc
        common = dict(
            t=t,
            x=np.asarray(x_next, dtype=float),
            incumbent_x=inc.x_plus,
            incumbent_mu=float(gp.preprocess.destandardize(inc.mu_plus)),
            acq_value=a,
            acq_value_std=float(a_std),
            kappa_std=float(kappa_std),
            output_std=gp.output_std,
            length_scale=gp.kernel.length_scale,
        )
        if a < config.kappa:
            records.append(IterationRecord(y=None, noise_var=None, evaluated=False, **common))
            reason, terminated_at = TerminationReason.KAPPA_REACHED, t
            final = (inc.x_plus, float(gp.preprocess.destandardize(inc.mu_plus)))
            return _make_trace(config, records, reason, terminated_at, final, models, incs)
        y, nv = observe(t, x_next)
        records.append(IterationRecord(y=y, noise_var=nv, regret=regret_of(x_next), **common))

    gp = _fit_model(config, Dataset(np.array(X), np.array(Y), np.array(NV)))
    inc = acq.select_incumbent(gp)
    if keep_models:
        models[config.max_iters + 1], incs[config.max_iters + 1] = gp, inc
    final = (inc.x_plus, float(gp.preprocess.destandardize(inc.mu_plus)))
    return _make_trace(config, records, reason, terminated_at, final, models, incs)


@dataclass(frozen=True)
class ProfitResult:
    profit: float
    t_kappa: int
    incumbent_value: float
    stopped: bool


def stopping_point(trace: RunTrace, kappa: float):
    """First record whose acquisition value is below ``kappa``, if any.

    Works on any trace: a kappa-terminated run stops exactly there, and a run
    made with a smaller threshold contains the same prefix because the
    iterations before the stop are unaffected by the threshold.
    """
    for r in trace.records:
        if r.acq_value is not None and r.acq_value < kappa:
            return r
    return None


def compute_profit(trace: RunTrace, kappa: float, truth: Truth | None) -> ProfitResult:
    """``f(x+) - kappa * t_kappa`` at the kappa stopping time.

    ``t_kappa`` counts the evaluations paid for before stopping.  When the
    threshold is never crossed, ``t_kappa`` is the number of evaluations in
    the trace and ``stopped`` is False.  ``truth`` must be in the loop's
    maximization convention.
    """
    if truth is None:
        raise InputError("compute_profit needs a noiseless truth oracle")
    if kappa < 0:
        raise InputError("kappa must be nonnegative")
    stop = stopping_point(trace, kappa)
    if stop is not None:
        t_kappa, x_plus, stopped = stop.t - 1, stop.incumbent_x, True
    else:
        t_kappa, x_plus, stopped = trace.n_evaluations, trace.final_incumbent_x, False
    if x_plus is None:
        raise InputError("trace has no incumbent to evaluate")
    value = float(truth(np.asarray(x_plus)))
    return ProfitResult(value - kappa * t_kappa, t_kappa, value, stopped)
