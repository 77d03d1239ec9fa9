import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize

from cei_bo import benchmarks as bm
from cei_bo.exceptions import InputError

# Hartmann-3 minimum from an L-BFGS-B multistart (200 starts, gtol 1e-14).
HARTMANN3_MIN = -3.862779787332663
HARTMANN3_ARGMIN_LITERATURE = np.array([0.114614, 0.555649, 0.852547])


def hartmann3_reference(x):
    alpha = [1.0, 1.2, 3.0, 3.2]
    A = [[3.0, 10, 30], [0.1, 10, 35], [3.0, 10, 30], [0.1, 10, 35]]
    P = [[0.3689, 0.1170, 0.2673], [0.4699, 0.4387, 0.7470], [0.1091, 0.8732, 0.5547],
         [0.0381, 0.5743, 0.8828]]
    return -sum(alpha[i] * math.exp(-sum(A[i][j] * (x[j] - P[i][j]) ** 2 for j in range(3)))
                for i in range(4))


class TestFormulas:
    @pytest.mark.parametrize("name,x", [
        ("sphere3", [0, 0, 0]),
        ("griewank6", [0] * 6),
        ("levy4", [1, 1, 1, 1]),
        ("powell5", [0] * 5),
    ])
    def test_known_minima(self, name, x):
        assert bm.get_benchmark(name)(x) == pytest.approx(0.0, abs=1e-15)

    def test_hartmann_minimum(self):
        fn = bm.get_benchmark("hartmann3")
        assert fn.optimum_value == pytest.approx(-3.86278, abs=1e-5)
        assert fn.optimum_value == pytest.approx(HARTMANN3_MIN, abs=1e-6)
        assert np.max(np.abs(fn.optimizer - HARTMANN3_ARGMIN_LITERATURE)) < 1e-3

    @given(st.lists(st.floats(0, 1), min_size=3, max_size=3))
    def test_hartmann_matches_scalar_reference(self, x):
        assert bm.get_benchmark("hartmann3")(x) == pytest.approx(hartmann3_reference(x), rel=1e-12, abs=1e-300)

    def test_powell_wraps_indices(self):
        x = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        first = (1 + 20) ** 2 + 5 * (3 - 4) ** 2 + (2 - 6) ** 4 + 10 * (1 - 4) ** 4
        second = (5 + 10) ** 2 + 5 * (2 - 3) ** 2 + (1 - 4) ** 4 + 10 * (5 - 3) ** 4
        assert bm.get_benchmark("powell5")(x) == first + second

    def test_out_of_bounds(self):
        with pytest.raises(InputError):
            bm.get_benchmark("sphere3")([6.0, 0.0, 0.0])

    def test_wrong_dimension(self):
        with pytest.raises(InputError):
            bm.get_benchmark("levy4")([1.0, 1.0])

    def test_unknown_name(self):
        with pytest.raises(InputError):
            bm.get_benchmark("rosenbrock9")

    @pytest.mark.parametrize("name", bm.BENCHMARK_NAMES)
    def test_optimizer_inside_box(self, name):
        fn = bm.get_benchmark(name)
        assert np.all(fn.optimizer >= fn.bounds[:, 0]) and np.all(fn.optimizer <= fn.bounds[:, 1])
        assert fn(fn.optimizer) == pytest.approx(fn.optimum_value, abs=1e-6)

    @pytest.mark.parametrize("name", bm.BENCHMARK_NAMES)
    def test_no_point_below_optimum(self, name):
        fn = bm.get_benchmark(name)
        rng = np.random.default_rng(1)
        lo, hi = fn.bounds[:, 0], fn.bounds[:, 1]
        X = lo + rng.uniform(size=(1_000_000, fn.dim)) * (hi - lo)
        vals = fn.values(X)
        best = vals.min()
        for i in np.argsort(vals)[:5]:
            res = optimize.minimize(lambda x: fn.values(x)[0], X[i], method="L-BFGS-B",
                                    bounds=list(zip(lo, hi)))
            best = min(best, res.fun)
        assert best >= fn.optimum_value - 1e-4


class TestNoise:
    def test_zero_fraction_is_noiseless(self):
        fn = bm.get_benchmark("sphere3")
        y, nv = bm.noisy_eval(fn, bm.NoiseModel(0.0), [1.0, 0.0, 0.0], np.random.default_rng(0))
        assert (y, nv) == (1.0, 0.0)

    def test_reproducible(self):
        fn = bm.get_benchmark("levy4")
        a = bm.noisy_eval(fn, bm.NoiseModel(0.1), [0.5] * 4, np.random.default_rng(9))
        b = bm.noisy_eval(fn, bm.NoiseModel(0.1), [0.5] * 4, np.random.default_rng(9))
        assert a == b

    def test_moments(self):
        fn = bm.get_benchmark("sphere3")
        rng = np.random.default_rng(2)
        x, std = [1.0, 2.0, 0.5], 0.7
        ys = np.array([bm.noisy_eval(fn, bm.NoiseModel(fixed_std=std), x, rng)[0] for _ in range(100_000)])
        assert abs(ys.mean() - fn(x)) <= 4 * std / math.sqrt(1e5)
        assert abs(ys.var() / std**2 - 1) <= 0.05

    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.5))
    def test_std_never_exceeds_cap(self, seed, p):
        fn = bm.get_benchmark("hartmann3")
        rng = np.random.default_rng(seed)
        stds = [bm.NoiseModel(p).draw_std(fn, rng) for _ in range(50)]
        assert max(stds) <= p * fn.range_estimate
        if p > 0:
            assert min(stds) > 0

    def test_maximization_wrapper(self):
        fn = bm.get_benchmark("sphere3")
        obj, truth, opt = bm.as_maximization(fn, bm.NoiseModel(0.0), np.random.default_rng(0))
        assert obj(np.array([1.0, 1.0, 0.0])) == (-2.0, 0.0)
        assert truth(np.array([0.0, 1.0, 0.0])) == -1.0 and opt == 0.0

    def test_negative_fraction(self):
        with pytest.raises(InputError):
            bm.NoiseModel(-0.1)


class TestGpSampled:
    def test_nearest_grid_rule(self):
        fn = bm.get_benchmark("gp_sampled", seed=3)
        step = fn.grid[1] - fn.grid[0]
        x0 = fn.grid[100]
        assert fn([x0 - 0.4 * step]) == fn([x0 + 0.4 * step]) == fn.grid_values[100]

    def test_deterministic_per_seed(self):
        a = bm.gp_sampled_function(5).grid_values
        b = bm.gp_sampled_function(5).grid_values
        np.testing.assert_array_equal(a, b)

    def test_needs_seed(self):
        with pytest.raises(InputError):
            bm.get_benchmark("gp_sampled")

    def test_prior_marginal_and_correlation(self):
        draws = np.array([bm.gp_sampled_function(s).grid_values for s in range(30)])
        grid = bm.gp_sampled_function(0).grid
        i = 2000
        j = i + int(round(3.0 / (grid[1] - grid[0])))
        assert abs(draws[:, i].var() - 1.0) <= 0.5
        corr = np.corrcoef(draws[:, i], draws[:, j])[0, 1]
        assert abs(corr - math.exp(-0.5)) <= 0.25
        assert np.max(np.abs(draws)) <= 6.0

    def test_grid_file_round_trip(self, tmp_path):
        fn = bm.gp_sampled_function(7)
        path = tmp_path / "f.csv"
        bm.save_grid_function(fn, path)
        back = bm.load_grid_function(path)
        np.testing.assert_array_equal(back.grid_values, fn.grid_values)
        assert back.optimum_value == fn.optimum_value
        assert path.read_bytes().count(b"\r") == 0

    def test_bad_grid_file(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(InputError):
            bm.load_grid_function(path)


class TestMetrics:
    def test_at_optimum(self):
        fn = bm.get_benchmark("levy4")
        assert bm.metric_log_gap(fn, fn.optimizer) == -12.0
        assert bm.metric_l2_gap(fn, fn.optimizer) == 0.0

    def test_sphere_axis(self):
        fn = bm.get_benchmark("sphere3")
        assert bm.metric_log_gap(fn, [0.0, 1.0, 0.0]) == 0.0
        assert bm.metric_l2_gap(fn, [0.0, 1.0, 0.0]) == 1.0

    def test_recomputation(self, rng):
        fn = bm.get_benchmark("hartmann3")
        x = rng.uniform(size=3)
        assert bm.metric_log_gap(fn, x) == pytest.approx(math.log10(hartmann3_reference(x) - HARTMANN3_MIN),
                                                         abs=1e-6)
        assert bm.metric_l2_gap(fn, x) == pytest.approx(math.dist(x, fn.optimizer), rel=1e-14)
