"""Self-check suite behind ``cei-bo verify``.

Each check returns a :class:`CheckResult` whose ``lhs``/``rhs`` are the
quantities compared (``lhs <= rhs`` passes) and whose ``margin`` is
``rhs - lhs``.  Hard checks gate the exit status; soft checks report
empirical frequencies of high-probability events.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate

from . import acquisition as acq
from . import analysis as an
from . import benchmarks as bm
from .gp import Dataset, fit
from .kernels import KernelSpec
from .loop import RunConfig, run_bo

FAULTS = ("sigma_tilde",)


@dataclass(frozen=True)
class CheckResult:
    name: str
    hard: bool
    passed: bool
    lhs: float
    rhs: float
    margin: float
    detail: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _finite(v: float) -> float:
    v = float(v)
    if math.isnan(v):
        return -1e308
    return max(min(v, 1e308), -1e308)


def _result(name, lhs, rhs, detail="", hard=True) -> CheckResult:
    lhs, rhs = _finite(lhs), _finite(rhs)
    return CheckResult(name, hard, bool(lhs <= rhs), lhs, rhs, _finite(rhs - lhs), detail)


def _random_posterior(rng, dim=2, noiseless=False, jitter=None):
    n = int(rng.integers(3, 16))
    X = rng.uniform(size=(n, dim))
    y = np.sin(3.0 * X).sum(axis=1) + 0.1 * rng.standard_normal(n)
    nv = np.zeros(n) if noiseless else rng.uniform(0.01, 0.5, n)
    spec = KernelSpec(rng.choice(["matern52", "se"]), float(rng.uniform(0.15, 0.6)))
    gp = fit(spec, Dataset(X, y, nv), jitter=jitter, bounds=[(0.0, 1.0)] * dim)
    return gp, acq.select_incumbent(gp)


def check_tau_identities(step: float = 0.01, tol: float = 1e-12) -> CheckResult:
    z = np.round(np.arange(-1000, 1001) * step, 12)
    t, tm = acq.tau(z), acq.tau(-z)
    worst = max(
        float(np.max(np.abs(t - tm - z))),
        float(np.max(z - t)),
        float(np.max((t - acq.norm_pdf(z))[z <= 0])),
        float(np.max((t - 1.0 - z)[z >= 0])),
    )
    return _result("tau_identities", worst, tol, f"{z.size} grid points")


def check_g_monotone() -> CheckResult:
    g = an.g_ratio(np.linspace(0.01, 100.0, 10_000))
    return _result("g_monotone", float(np.max(-np.diff(g))), 0.0, "G(x)=x/log(1+x) on (0, 100]")


def check_info_gain(rng, n_cases: int = 20, tol: float = 1e-8) -> CheckResult:
    worst = 0.0
    for _ in range(n_cases):
        T = int(rng.integers(1, 26))
        U = rng.uniform(size=(T, 2))
        v = rng.uniform(0.1, 2.0, T) ** 2
        rep = an.info_gain_report(KernelSpec("matern52", float(rng.uniform(0.1, 1.0))), U, v)
        worst = max(worst, abs(rep.sequential_value - rep.logdet_value))
    return _result("info_gain_equivalence", worst, tol, f"{n_cases} sequences")


def check_sigma_tilde(rng, n_cases: int = 20, fault: bool = False, tol: float = 1e-10) -> CheckResult:
    """Triangle bound on ``sigma_tilde`` and nonnegativity of its square.

    With ``fault`` the clamp is bypassed and a negative residue is forced,
    which this check must catch.
    """
    worst = -math.inf
    for _ in range(n_cases):
        gp, inc = _random_posterior(rng)
        # the incumbent itself is included, where the variance is exactly zero
        U = np.vstack([inc.u_plus, rng.uniform(size=(50, 2))])
        raw = acq.sigma_tilde_sq_raw(gp, U, inc)
        if fault:
            raw = raw - 1e-3
            sq = raw
        else:
            sq = acq.clamp_sigma_tilde_sq(raw, gp.kernel.amplitude)
        worst = max(worst, float(np.max(-sq)) - tol)
        with np.errstate(invalid="ignore"):
            s_t = np.sqrt(sq)
        _, var = gp.predict_normalized(U)
        bound = np.sqrt(var) + math.sqrt(max(inc.var_plus, 0.0))
        excess = np.where(np.isnan(s_t), np.inf, s_t - bound)
        worst = max(worst, float(np.max(excess)) - tol)
    return _result("sigma_tilde", worst, 0.0, "triangle bound and nonnegative variance")


def _joint_moments(gp, x, inc):
    U = np.vstack([x, inc.u_plus])
    mean, _ = gp.predict_normalized(U)
    cov = gp.cov_normalized(U, U)
    return mean, 0.5 * (cov + cov.T)


def check_cei_oracles(rng, n_cases: int = 10, n_mc: int = 100_000) -> CheckResult:
    """Closed form against quadrature (1e-8) and Monte Carlo (3 standard errors)."""
    worst = -math.inf
    spec = acq.AcquisitionSpec("corrected_ei")
    for _ in range(n_cases):
        gp, inc = _random_posterior(rng)
        x = rng.uniform(size=2)
        value = float(acq.evaluate_normalized(spec, gp, x[None, :], inc)[0])
        mean, cov = _joint_moments(gp, x, inc)
        u = mean[0] - mean[1]
        s = math.sqrt(max(cov[0, 0] + cov[1, 1] - 2 * cov[0, 1], 0.0))
        if s > 0:
            quad, _ = integrate.quad(
                lambda w: w * math.exp(-0.5 * ((w - u) / s) ** 2) / (s * math.sqrt(2 * math.pi)),
                0.0, math.inf, epsabs=1e-13, epsrel=1e-12)
        else:
            quad = max(u, 0.0)
        worst = max(worst, abs(quad - value) - 1e-8)
        draws = rng.multivariate_normal(mean, cov, size=n_mc, method="eigh")
        imp = np.maximum(draws[:, 0] - draws[:, 1], 0.0)
        se = imp.std(ddof=1) / math.sqrt(n_mc)
        worst = max(worst, abs(imp.mean() - value) - 3.0 * se - 1e-15)
    return _result("cei_vs_oracles", worst, 0.0, f"{n_cases} posteriors, {n_mc} MC draws")


def check_noiseless_degeneration(rng, n_cases: int = 5, tol: float = 1e-9) -> CheckResult:
    worst = 0.0
    ei, cei = acq.AcquisitionSpec("ei"), acq.AcquisitionSpec("corrected_ei")
    for _ in range(n_cases):
        gp, inc = _random_posterior(rng, noiseless=True, jitter=1e-12)
        U = rng.uniform(size=(100, 2))
        diff = np.abs(acq.evaluate_normalized(cei, gp, U, inc) - acq.evaluate_normalized(ei, gp, U, inc))
        worst = max(worst, float(np.max(diff)))
    return _result("noiseless_cei_equals_ei", worst, tol, "zero noise, jitter 1e-12")


def _benchmark_run(name, seed, iterations, kappa=0.0):
    fn = bm.get_benchmark(name)
    obj, truth, opt = bm.as_maximization(fn, bm.NoiseModel(0.1), np.random.default_rng([seed, 1]))
    cfg = RunConfig(bounds=tuple(map(tuple, fn.bounds)), max_iters=iterations,
                    acquisition=acq.AcquisitionSpec("corrected_ei"), kappa=kappa, seed=seed)
    return run_bo(cfg, obj, truth, opt)


def check_variance_sum(seed: int, iterations: int = 30, n_probes: int = 20) -> CheckResult:
    trace = _benchmark_run("griewank6", seed, iterations)
    kernel, U, nv = an.sequence_from_trace(trace)
    probes = np.random.default_rng([seed, 2]).uniform(size=(n_probes, U.shape[1]))
    _, S = an.prefix_variances(kernel, U, nv, probes)
    rows = an.check_variance_sum_bound(S, nv, kernel.amplitude)
    worst = max(r.lhs - r.rhs for r in rows)
    return _result("variance_sum_bound", worst, 1e-10, f"{n_probes} probes, {len(nv)} steps")


def check_stopping_gap(seed: int, iterations: int = 30, kappa: float = 0.01) -> list:
    trace = _benchmark_run("hartmann3", seed, iterations, kappa)
    rows = an.check_stopping_gap_lemma(trace)
    gap = max((r.gap_lhs - r.gap_rhs for r in rows if not r.vacuous), default=-math.inf)
    tau_ex = max((r.tau_lhs - r.tau_rhs for r in rows), default=-math.inf)
    alt = max((r.tau_lhs - r.tau_rhs_alt for r in rows), default=-math.inf)
    n = len(rows)
    return [
        _result("stopping_gap", gap, 1e-10, f"{n} iterations, kappa={kappa}"),
        _result("tau_bound", tau_ex, 1e-10, f"{n} iterations, C=log(2/(pi kappa^2))"),
        _result("tau_bound_alt_constant", alt, 1e-10,
                f"{n} iterations, C=log(1/(pi kappa^2)); informational", hard=False),
    ]


def check_probabilistic(seed: int, delta: float = 0.1, n_runs: int = 5) -> list:
    freq = an.probabilistic_lemma_study(n_runs=n_runs, delta=delta, seed=seed)
    out = []
    for name in ("confidence", "lower_bound", "incumbent_gap", "regret_decomposition"):
        f = freq.frequency(name)
        out.append(_result(f"freq_{name}", freq.target - 0.05, f,
                           f"{freq.counts.get(name, 0)}/{freq.totals.get(name, 0)} events", hard=False))
    return out


def run_verification(seed: int = 0, inject_fault: str | None = None, probabilistic: bool = True) -> dict:
    """Run every check and return a JSON-serializable report."""
    if inject_fault is not None and inject_fault not in FAULTS:
        raise ValueError(f"unknown fault {inject_fault!r}; choose from {FAULTS}")
    rng = np.random.default_rng([seed, 0])
    checks = [
        check_tau_identities(),
        check_g_monotone(),
        check_info_gain(rng),
        check_sigma_tilde(rng, fault=inject_fault == "sigma_tilde"),
        check_cei_oracles(rng),
        check_noiseless_degeneration(rng),
        check_variance_sum(seed),
        *check_stopping_gap(seed),
    ]
    if probabilistic:
        checks += check_probabilistic(seed)
    failed = [c.name for c in checks if c.hard and not c.passed]
    return {
        "schema_version": 1,
        "seed": seed,
        "fault": inject_fault,
        "passed": not failed,
        "failed_checks": failed,
        "checks": [c.to_dict() for c in checks],
    }
