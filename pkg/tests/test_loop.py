import numpy as np
import pytest

from cei_bo import acquisition as acq
from cei_bo import benchmarks as bm
from cei_bo.acquisition import AcquisitionSpec
from cei_bo.exceptions import InputError
from cei_bo.gp import Dataset, fit
from cei_bo.kernels import KernelSpec
from cei_bo.loop import (
    AcqOptConfig,
    IterationRecord,
    RunAborted,
    RunConfig,
    RunTrace,
    TerminationReason,
    compute_profit,
    maximize_acquisition,
    run_bo,
    stopping_point,
)
from cei_bo.sampling import sobol_init

CEI = AcquisitionSpec("corrected_ei")


def quadratic_problem(seed=0, noise=0.05):
    """Maximize ``-(x - 0.3)^2 - (y + 0.2)^2`` on ``[-1, 1]^2`` with noisy evaluations."""
    rng = np.random.default_rng(seed)

    def truth(x):
        return float(-((x[0] - 0.3) ** 2) - (x[1] + 0.2) ** 2)

    def objective(x):
        return truth(x) + noise * rng.standard_normal(), noise**2

    return objective, truth, 0.0


def config(**kw):
    base = dict(bounds=((-1.0, 1.0), (-1.0, 1.0)), max_iters=12, acquisition=CEI, seed=5,
                acq_opt=AcqOptConfig(n_raw=128, n_refine=2, refine_iters=1, golden_iters=10))
    base.update(kw)
    return RunConfig(**base)


class TestRunConfig:
    def test_default_init_count(self):
        assert config().init_count == 6

    def test_budget_below_init(self):
        with pytest.raises(InputError):
            config(max_iters=3)

    def test_negative_kappa(self):
        with pytest.raises(InputError):
            config(kappa=-0.1)

    def test_bad_bounds(self):
        with pytest.raises(InputError):
            config(bounds=((1.0, 0.0),))

    def test_zero_init(self):
        with pytest.raises(InputError):
            config(init_count=0)


class TestMaximizeAcquisition:
    def peaked_gp(self):
        X = np.array([[0.1], [0.35], [0.5], [0.9]])
        y = np.array([0.0, 0.8, 1.0, -0.3])
        gp = fit(KernelSpec("se", 0.15), Dataset(X, y, np.full(4, 1e-3)))
        return gp, acq.select_incumbent(gp)

    def test_matches_grid_argmax(self):
        gp, inc = self.peaked_gp()
        grid = np.linspace(0, 1, 100_001)[:, None]
        vals = acq.evaluate_normalized(CEI, gp, grid, inc)
        x, _ = maximize_acquisition(gp, CEI, inc, AcqOptConfig(), np.random.default_rng(0))
        assert abs(x[0] - grid[int(np.argmax(vals)), 0]) <= 1e-2

    def test_constant_acquisition(self):
        gp = fit(KernelSpec("se", 0.2), Dataset(np.array([[0.5]]), np.array([1.0]), np.array([0.0])),
                 jitter=0.0)
        inc = acq.select_incumbent(gp)
        # PI with a single noiseless observation: 0 everywhere except at the data
        x, v = maximize_acquisition(gp, AcquisitionSpec("pi"), inc, AcqOptConfig(n_raw=64),
                                    np.random.default_rng(1))
        assert 0.0 <= x[0] <= 1.0 and np.isfinite(v)

    def test_no_refinement_is_exhaustive_scan(self):
        gp, inc = self.peaked_gp()
        opt = AcqOptConfig(n_raw=200, n_refine=0)
        x, v = maximize_acquisition(gp, CEI, inc, opt, np.random.default_rng(7))
        rng = np.random.default_rng(7)
        cand = np.vstack([sobol_init(1, 100, seed=int(rng.integers(2**63))), rng.uniform(size=(100, 1))])
        vals = acq.evaluate_normalized(CEI, gp, cand, inc)
        assert v == vals.max()
        np.testing.assert_array_equal(x, cand[int(np.argmax(vals))])

    def test_refinement_never_worse(self):
        gp, inc = self.peaked_gp()
        _, raw = maximize_acquisition(gp, CEI, inc, AcqOptConfig(n_raw=64, n_refine=0),
                                      np.random.default_rng(3))
        _, ref = maximize_acquisition(gp, CEI, inc, AcqOptConfig(n_raw=64), np.random.default_rng(3))
        assert ref >= raw


class TestRunBo:
    def test_kappa_huge_stops_after_init(self):
        obj, truth, opt = quadratic_problem()
        trace = run_bo(config(kappa=1e18), obj, truth, opt)
        assert trace.termination_reason is TerminationReason.KAPPA_REACHED
        assert trace.terminated_at == 7
        assert trace.n_evaluations == 6
        assert not trace.records[-1].evaluated

    def test_kappa_zero_runs_full_budget(self):
        obj, truth, opt = quadratic_problem()
        trace = run_bo(config(), obj, truth, opt)
        assert trace.termination_reason is TerminationReason.BUDGET_EXHAUSTED
        assert len(trace.records) == 12 and trace.n_evaluations == 12

    def test_deterministic(self):
        a = run_bo(config(), *quadratic_problem(3))
        b = run_bo(config(), *quadratic_problem(3))
        for ra, rb in zip(a.records, b.records):
            np.testing.assert_array_equal(ra.x, rb.x)
            assert ra.y == rb.y and ra.acq_value == rb.acq_value

    def test_points_within_bounds_and_regret(self):
        obj, truth, opt = quadratic_problem(1)
        trace = run_bo(config(), obj, truth, opt)
        for r in trace.records:
            assert np.all(r.x >= -1.0) and np.all(r.x <= 1.0)
            assert r.regret == pytest.approx(opt - truth(r.x), abs=1e-15)

    def test_stopping_rule(self):
        obj, truth, opt = quadratic_problem(2)
        trace = run_bo(config(kappa=2e-3, max_iters=30), obj, truth, opt)
        post = [r for r in trace.records if not r.initial]
        if trace.termination_reason is TerminationReason.KAPPA_REACHED:
            assert post[-1].t == trace.terminated_at and post[-1].acq_value < 2e-3
            post = post[:-1]
        assert all(r.acq_value >= 2e-3 for r in post)

    def test_threshold_free_trace_contains_stopped_prefix(self):
        kappa = 2e-3
        stopped = run_bo(config(kappa=kappa, max_iters=30), *quadratic_problem(4))
        free = run_bo(config(max_iters=30), *quadratic_problem(4))
        stop = stopping_point(free, kappa)
        if stopped.terminated_at is None:
            assert stop is None
        else:
            assert stop.t == stopped.terminated_at
            np.testing.assert_array_equal(stop.incumbent_x, stopped.final_incumbent_x)

    def test_objective_failure_aborts_with_trace(self):
        calls = []

        def objective(x):
            calls.append(x)
            if len(calls) == 8:
                raise RuntimeError("simulator crashed")
            return 0.0, 0.01

        with pytest.raises(RunAborted) as info:
            run_bo(config(), objective)
        assert len(info.value.trace.records) == 7
        assert "iteration 8" in str(info.value)

    def test_noiseless_objective(self):
        _, truth, opt = quadratic_problem()
        trace = run_bo(config(), lambda x: (truth(x), 0.0), truth, opt)
        assert trace.n_evaluations == 12

    def test_keep_models(self):
        trace = run_bo(config(), *quadratic_problem(), keep_models=True)
        assert sorted(trace.models) == list(range(7, 14))

    def test_sphere_improves_over_iterations(self):
        fn = bm.get_benchmark("sphere3")
        early, final = [], []
        for seed in range(15):
            obj, truth, opt = bm.as_maximization(fn, bm.NoiseModel(0.1), np.random.default_rng(seed))
            cfg = RunConfig(bounds=tuple(map(tuple, fn.bounds)), max_iters=60, acquisition=CEI, seed=seed)
            trace = run_bo(cfg, obj, truth, opt)
            early.append(bm.metric_log_gap(fn, trace.records[10].incumbent_x))
            final.append(bm.metric_log_gap(fn, trace.final_incumbent_x))
        assert np.median(final) < np.median(early)


class TestProfit:
    def manual_trace(self):
        cfg = RunConfig(bounds=((0.0, 10.0),), max_iters=20, init_count=9, kappa=0.1)
        recs = [IterationRecord(t=t, x=np.array([t * 0.5]), y=0.0, noise_var=0.0, initial=True)
                for t in range(1, 10)]
        recs.append(IterationRecord(t=10, x=np.array([1.0]), y=None, noise_var=None, evaluated=False,
                                    incumbent_x=np.array([5.0]), acq_value=0.05))
        return RunTrace(cfg, tuple(recs), TerminationReason.KAPPA_REACHED, 10, np.array([5.0]), 0.0)

    def test_stop_right_after_init(self):
        res = compute_profit(self.manual_trace(), 0.1, lambda x: float(x[0]))
        assert res.t_kappa == 9 and res.stopped
        assert res.profit == pytest.approx(4.1, abs=1e-12)

    def test_zero_kappa(self):
        obj, truth, opt = quadratic_problem()
        trace = run_bo(config(), obj, truth, opt)
        res = compute_profit(trace, 0.0, truth)
        assert res.t_kappa == 12 and not res.stopped
        assert res.profit == truth(trace.final_incumbent_x)

    def test_needs_truth(self):
        with pytest.raises(InputError):
            compute_profit(self.manual_trace(), 0.1, None)
