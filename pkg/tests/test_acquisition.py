import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from cei_bo import acquisition as acq
from cei_bo.acquisition import AcqKind, AcquisitionSpec
from cei_bo.exceptions import InputError, NumericalError
from cei_bo.gp import Dataset, fit
from cei_bo.kernels import KernelSpec

# tau(z) = z Phi(z) + phi(z) at 40 digits (mpmath).
TAU_ORACLE = {
    -30.0: 1.6319567340914011894e-199,
    -8.0: 7.5502624119464989137e-17,
    -3.0: 0.00038215431704772359565,
    -1.0: 0.083315470587686298383,
    0.5: 0.69779655740130602959,
    2.0: 2.0084907026168296375,
}
INV_SQRT_2PI = 0.3989422804014327

CEI = AcquisitionSpec("corrected_ei")
EI = AcquisitionSpec("ei")


def noisy_gp(rng, n=8, noiseless=False, jitter=None):
    X = rng.uniform(size=(n, 2))
    y = np.sin(5 * X[:, 0]) + X[:, 1] ** 2 + 0.1 * rng.standard_normal(n)
    nv = np.zeros(n) if noiseless else rng.uniform(0.01, 0.3, n)
    gp = fit(KernelSpec("matern52", 0.35), Dataset(X, y, nv), jitter=jitter)
    return gp, acq.select_incumbent(gp)


def joint_moments(gp, x, inc):
    U = np.vstack([x, inc.u_plus])
    mean, _ = gp.predict_normalized(U)
    cov = gp.cov_normalized(U, U)
    return mean, 0.5 * (cov + cov.T)


class TestTau:
    @pytest.mark.parametrize("z", sorted(TAU_ORACLE))
    def test_high_precision_values(self, z):
        assert acq.tau(z) == pytest.approx(TAU_ORACLE[z], rel=1e-12)

    def test_at_zero(self):
        assert acq.tau(0.0) == pytest.approx(INV_SQRT_2PI, abs=1e-16)

    @pytest.mark.parametrize("z", [-3.0, -1.0, 0.5, 2.0])
    def test_reflection_identity(self, z):
        assert abs(acq.tau(z) - acq.tau(-z) - z) <= 1e-12

    def test_deep_tail_positive_and_tiny(self):
        v = acq.tau(-8.0)
        assert 0 < v < 1e-14

    @given(st.floats(-50, 50))
    def test_dominates_hinge(self, z):
        assert acq.tau(z) >= max(z, 0.0)

    @given(st.floats(-37, 30), st.floats(1e-3, 5))
    def test_strictly_increasing(self, z, h):
        assert acq.tau(z + h) > acq.tau(z)

    def test_vectorized(self):
        z = np.array(sorted(TAU_ORACLE))
        np.testing.assert_allclose(acq.tau(z), [TAU_ORACLE[v] for v in z], rtol=1e-12)


class TestAcquisitionSpec:
    def test_ucb_needs_beta(self):
        with pytest.raises(InputError):
            AcquisitionSpec("ucb")

    def test_beta_only_for_ucb(self):
        with pytest.raises(InputError):
            AcquisitionSpec("ei", ucb_beta=2.0)

    def test_aliases(self):
        assert AcquisitionSpec("cei").kind is AcqKind.CORRECTED_EI
        assert AcquisitionSpec("Corrected-PI").kind is AcqKind.CORRECTED_PI

    def test_unknown(self):
        with pytest.raises(InputError):
            AcquisitionSpec("thompson")


class TestIncumbent:
    def test_single_observation(self):
        gp = fit(KernelSpec("se"), Dataset(np.array([[0.4]]), np.array([1.0]), np.array([0.1])))
        inc = acq.select_incumbent(gp)
        assert inc.index == 0
        np.testing.assert_array_equal(inc.x_plus, [0.4])

    def test_tie_goes_to_lower_index(self):
        X = np.array([[0.2], [0.8]])
        gp = fit(KernelSpec("se", 0.05), Dataset(X, np.array([1.0, 1.0]), np.array([0.1, 0.1])),
                 standardize=False)
        mean, _ = gp.predict_normalized(gp.train_inputs)
        assert mean[0] == mean[1]
        assert acq.select_incumbent(gp).index == 0

    def test_matches_exhaustive_scan(self, rng):
        gp, inc = noisy_gp(rng, n=10)
        means = [gp.predict(x[None, :])[0][0] for x in gp.preprocess.denormalize(gp.train_inputs)]
        best = max(range(10), key=lambda i: (means[i], -i))
        assert inc.index == best
        assert all(inc.mu_plus >= m for m in gp.predict_normalized(gp.train_inputs)[0])

    def test_empty_set(self, rng):
        gp, _ = noisy_gp(rng)
        with pytest.raises(InputError):
            acq.select_incumbent(gp, observed_inputs=np.zeros((0, 2)))


class TestSigmaTilde:
    def test_zero_at_incumbent(self, rng):
        gp, inc = noisy_gp(rng)
        assert acq.sigma_tilde_sq(gp, inc.x_plus, inc) == 0.0

    def test_noiseless_reduces_to_variance(self, rng):
        gp, inc = noisy_gp(rng, noiseless=True, jitter=0.0)
        for x in rng.uniform(size=(20, 2)):
            _, var = gp.predict_normalized(x[None, :])
            assert acq.sigma_tilde_sq(gp, x, inc) == pytest.approx(var[0], abs=1e-10)

    def test_equals_joint_variance(self, rng):
        gp, inc = noisy_gp(rng)
        x = rng.uniform(size=2)
        _, cov = joint_moments(gp, x, inc)
        ref = cov[0, 0] + cov[1, 1] - 2 * cov[0, 1]
        assert acq.sigma_tilde_sq(gp, x, inc) == pytest.approx(ref, rel=1e-9, abs=1e-14)

    def test_mc_variance(self, rng):
        gp, inc = noisy_gp(rng)
        x = rng.uniform(size=2)
        mean, cov = joint_moments(gp, x, inc)
        n = 200_000
        draws = rng.multivariate_normal(mean, cov, size=n)
        d = draws[:, 0] - draws[:, 1]
        s2 = acq.sigma_tilde_sq(gp, x, inc)
        se = s2 * math.sqrt(2.0 / (n - 1))
        assert abs(d.var(ddof=1) - s2) <= 3 * se

    def test_clamp_small_residue(self):
        np.testing.assert_array_equal(acq.clamp_sigma_tilde_sq([-1e-12, 0.5], 1.0), [0.0, 0.5])

    def test_large_negative_is_an_error(self):
        with pytest.raises(NumericalError):
            acq.clamp_sigma_tilde_sq([-1e-3], 1.0)

    @given(st.integers(0, 2**32 - 1))
    def test_triangle_bound(self, seed):
        rng = np.random.default_rng(seed)
        gp, inc = noisy_gp(rng, n=int(rng.integers(2, 12)))
        U = rng.uniform(size=(20, 2))
        s_t = np.sqrt(acq.sigma_tilde_sq_normalized(gp, U, inc))
        _, var = gp.predict_normalized(U)
        assert np.all(s_t <= np.sqrt(var) + math.sqrt(inc.var_plus) + 1e-10)


class TestClosedForms:
    def test_symmetric_case(self):
        assert acq.corrected_ei(0.0, 1.0) == pytest.approx(INV_SQRT_2PI, abs=1e-16)

    def test_zero_scale_convention(self):
        assert acq.corrected_ei(2.0, 0.0)[()] == 0.0
        assert acq.expected_improvement(2.0, 0.0)[()] == 0.0

    def test_overflow_limits(self):
        assert acq.corrected_ei(50.0, 1.0)[()] == 50.0
        assert acq.corrected_ei(-50.0, 1.0)[()] == 0.0

    @given(st.floats(-20, 20), st.floats(1e-8, 10))
    def test_two_forms_agree(self, u, s):
        a = acq.corrected_ei(u, s)[()]
        b = acq.corrected_ei_pdf_cdf(u, s)[()]
        assert abs(a - b) <= 1e-12 * max(1.0, abs(u), s)

    @given(st.floats(-10, 10), st.floats(1e-3, 10))
    def test_nonnegative(self, u, s):
        assert acq.corrected_ei(u, s) >= 0
        assert 0 <= acq.probability_of_improvement(u, s) <= 1

    @given(st.floats(-30, 30), st.floats(0.05, 5))
    def test_increasing_in_mean_gap(self, z, s):
        # inside the range where the limiting forms are not used
        u, h = z * s, 1e-4 * s
        assert acq.corrected_ei(u + h, s) - acq.corrected_ei(u, s) > 0

    @given(st.floats(-5, 5), st.floats(0.01, 5))
    def test_matches_quadrature(self, u, s):
        dens = stats.norm(loc=u, scale=s).pdf
        # the integrand is negligible beyond 12 standard deviations
        lo, hi = max(0.0, u - 12 * s), max(0.0, u + 12 * s)
        val, _ = integrate.quad(lambda w: w * dens(w), lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)
        assert abs(acq.corrected_ei(u, s)[()] - val) <= 1e-8

    def test_pi_zero_scale(self):
        np.testing.assert_array_equal(acq.probability_of_improvement([1.0, -1.0, 0.0], 0.0), [1, 0, 0])


class TestAcquisitionValues:
    def test_cei_zero_at_incumbent(self, rng):
        gp, inc = noisy_gp(rng)
        assert acq.acq_value(CEI, gp, inc.x_plus, inc) == 0.0

    def test_noiseless_cei_equals_ei(self, rng):
        gp, inc = noisy_gp(rng, n=10, noiseless=True, jitter=0.0)
        U = rng.uniform(size=(50, 2))
        np.testing.assert_allclose(acq.evaluate_normalized(CEI, gp, U, inc),
                                   acq.evaluate_normalized(EI, gp, U, inc), rtol=0, atol=1e-10)

    def test_cei_mc(self, rng):
        gp, inc = noisy_gp(rng)
        x = rng.uniform(size=2)
        mean, cov = joint_moments(gp, x, inc)
        draws = rng.multivariate_normal(mean, cov, size=1_000_000)
        imp = np.maximum(draws[:, 0] - draws[:, 1], 0.0)
        se = imp.std(ddof=1) / 1000.0
        assert abs(imp.mean() - acq.acq_value(CEI, gp, x, inc)) <= 3 * se

    def test_baseline_formulas(self, rng):
        gp, inc = noisy_gp(rng)
        x = rng.uniform(size=2)
        mean, var = gp.predict_normalized(x[None, :])
        u, s = mean[0] - inc.mu_plus, math.sqrt(var[0])
        s_t = math.sqrt(acq.sigma_tilde_sq(gp, x, inc))
        Phi, phi = stats.norm.cdf, stats.norm.pdf
        assert acq.acq_value(EI, gp, x, inc) == pytest.approx(s * phi(u / s) + u * Phi(u / s), rel=1e-10)
        assert acq.acq_value(AcquisitionSpec("pi"), gp, x, inc) == pytest.approx(Phi(u / s), rel=1e-10)
        assert acq.acq_value(AcquisitionSpec("cpi"), gp, x, inc) == pytest.approx(Phi(u / s_t), rel=1e-10)
        ucb = acq.acq_value(AcquisitionSpec("ucb", ucb_beta=4.0), gp, x, inc)
        assert ucb == pytest.approx(mean[0] + 2.0 * s, rel=1e-12)

    def test_vectorized_matches_pointwise(self, rng):
        gp, inc = noisy_gp(rng)
        U = rng.uniform(size=(7, 2))
        vec = acq.evaluate_normalized(CEI, gp, U, inc)
        pts = [acq.acq_value(CEI, gp, gp.preprocess.denormalize(u), inc) for u in U]
        np.testing.assert_allclose(vec, pts, rtol=1e-13, atol=1e-16)

    def test_output_units(self, rng):
        gp, _ = noisy_gp(rng)
        assert acq.to_output_units("cei", 2.0, gp) == pytest.approx(2.0 * gp.output_std)
        assert acq.to_output_units("pi", 0.3, gp) == 0.3
