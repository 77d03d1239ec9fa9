"""Closed-form acquisition functions over a fitted :class:`GpPosterior`.

All values are computed on the model's standardized output scale.  The
corrected EI replaces the predictive standard deviation of plain EI by the
standard deviation of ``f(x) - f(x+)`` under the joint posterior,

    sigma_tilde^2(x) = var(x) + var(x+) - 2 cov(x, x+),

so that uncertainty in the incumbent's own value is accounted for.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .exceptions import InputError, NumericalError
from .gp import GpPosterior
from .kernels import cross_kernel

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_SQRT_HALF_PI = math.sqrt(0.5 * math.pi)

# Beyond this |z| the limiting forms are used (Phi/phi under/overflow).
Z_LIMIT = 40.0
# Negative sigma_tilde^2 residue below -SIGMA_TILDE_ERROR * amplitude is a bug.
SIGMA_TILDE_ERROR = 1e-6


class AcqKind(str, enum.Enum):
    EI = "ei"
    CORRECTED_EI = "corrected_ei"
    PI = "pi"
    CORRECTED_PI = "corrected_pi"
    UCB = "ucb"

    @classmethod
    def parse(cls, value) -> "AcqKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"cei": cls.CORRECTED_EI, "correctedei": cls.CORRECTED_EI,
                   "cpi": cls.CORRECTED_PI, "correctedpi": cls.CORRECTED_PI}
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise InputError(f"unknown acquisition {value!r}") from None

    @property
    def scales_with_output(self) -> bool:
        """Whether values carry output units (and so rescale with the output std)."""
        return self in (AcqKind.EI, AcqKind.CORRECTED_EI, AcqKind.UCB)


@dataclass(frozen=True)
class AcquisitionSpec:
    kind: AcqKind = AcqKind.CORRECTED_EI
    ucb_beta: float | None = None

    def __post_init__(self):
        kind = AcqKind.parse(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is AcqKind.UCB:
            if self.ucb_beta is None or not self.ucb_beta > 0:
                raise InputError("UCB needs a positive ucb_beta")
        elif self.ucb_beta is not None:
            raise InputError(f"ucb_beta only applies to UCB, not {kind.value}")


@dataclass(frozen=True)
class Incumbent:
    """Observed point with the largest posterior mean.

    ``mu_plus`` and ``var_plus`` are on the standardized scale; ``u_plus`` is
    the normalized location and ``x_plus`` the location in original units.
    """

    x_plus: np.ndarray
    u_plus: np.ndarray
    index: int
    mu_plus: float
    var_plus: float


def norm_pdf(z):
    z = np.asarray(z, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def norm_cdf(z):
    """Standard normal CDF through the complementary error function."""
    return 0.5 * special.erfc(-np.asarray(z, dtype=float) / _SQRT2)


def tau(z):
    """``tau(z) = z Phi(z) + phi(z)``, stable in both tails.

    For ``z <= 0`` it is evaluated as ``phi(z) (1 - |z| R(|z|))`` with the
    Mills ratio ``R``; for ``z > 0`` through ``tau(z) = z + tau(-z)``.
    """
    z = np.asarray(z, dtype=float)
    t = np.abs(z)
    mills = _SQRT_HALF_PI * special.erfcx(t / _SQRT2)
    neg = norm_pdf(t) * np.maximum(1.0 - t * mills, 0.0)
    out = np.where(z > 0, z + neg, neg)
    return out if out.ndim else float(out)


def _ei_from_moments(u, s):
    """``s * tau(u / s)`` with the zero-scale and overflow conventions."""
    u = np.asarray(u, dtype=float)
    s = np.asarray(s, dtype=float)
    u, s = np.broadcast_arrays(u, s)
    out = np.zeros(u.shape)
    pos = s > 0
    z = np.zeros(u.shape)
    z[pos] = u[pos] / s[pos]
    mid = pos & (np.abs(z) <= Z_LIMIT)
    out[mid] = s[mid] * tau(z[mid])
    hi = pos & (z > Z_LIMIT)
    out[hi] = u[hi]
    return out


def expected_improvement(u, sigma):
    """Plain EI from mean gap ``u = mu(x) - mu(x+)`` and predictive std."""
    return _ei_from_moments(u, sigma)


def corrected_ei(u, sigma_tilde):
    """Corrected EI, ``sigma_tilde * tau(u / sigma_tilde)``; zero when ``sigma_tilde == 0``."""
    return _ei_from_moments(u, sigma_tilde)


def corrected_ei_pdf_cdf(u, sigma_tilde):
    """The same quantity written as ``s phi(u/s) + u Phi(u/s)``."""
    u = np.asarray(u, dtype=float)
    s = np.asarray(sigma_tilde, dtype=float)
    u, s = np.broadcast_arrays(u, s)
    out = np.zeros(u.shape)
    pos = s > 0
    z = u[pos] / s[pos]
    out[pos] = s[pos] * norm_pdf(z) + u[pos] * norm_cdf(z)
    return out


def probability_of_improvement(u, sigma):
    u = np.asarray(u, dtype=float)
    s = np.asarray(sigma, dtype=float)
    u, s = np.broadcast_arrays(u, s)
    out = np.array(u > 0, dtype=float)
    pos = s > 0
    out[pos] = norm_cdf(u[pos] / s[pos])
    return out


def select_incumbent(gp: GpPosterior, observed_inputs=None) -> Incumbent:
    """Observed input with the largest posterior mean (lowest index on ties)."""
    if observed_inputs is None:
        U = gp.train_inputs
        X = gp.preprocess.denormalize(U)
    else:
        X = np.atleast_2d(np.asarray(observed_inputs, dtype=float))
        U = gp.preprocess.normalize(X)
    if X.shape[0] == 0:
        raise InputError("cannot select an incumbent from an empty set")
    mean, var = gp.predict_normalized(U)
    i = int(np.argmax(mean))
    return Incumbent(X[i].copy(), U[i].copy(), i, float(mean[i]), float(var[i]))


def sigma_tilde_sq_raw(gp: GpPosterior, U, incumbent: Incumbent) -> np.ndarray:
    """Unclamped ``Var[f(x) - f(x+)]`` at normalized points ``U``.

    Computed as ``2 amp - 2 k(x, x+) - ||V_x - V_+||^2``, which is the
    same quantity as ``var(x) + var(x+) - 2 cov(x, x+)`` but vanishes
    exactly at the incumbent.
    """
    U = np.atleast_2d(U)
    u_plus = incumbent.u_plus[None, :]
    prior_term = 2.0 * gp.kernel.amplitude - 2.0 * cross_kernel(gp.kernel, U, u_plus)[:, 0]
    _, V = gp.project(U)
    _, v_plus = gp.project(u_plus)
    diff = V - v_plus
    return prior_term - np.einsum("ij,ij->j", diff, diff)


def clamp_sigma_tilde_sq(raw, amplitude: float) -> np.ndarray:
    raw = np.asarray(raw, dtype=float)
    if np.any(raw < -SIGMA_TILDE_ERROR * amplitude):
        raise NumericalError(
            f"corrected variance {raw.min():.3g} is negative beyond tolerance; "
            "the posterior covariance is not positive semi-definite"
        )
    return np.maximum(raw, 0.0)


def sigma_tilde_sq_normalized(gp: GpPosterior, U, incumbent: Incumbent) -> np.ndarray:
    return clamp_sigma_tilde_sq(sigma_tilde_sq_raw(gp, U, incumbent), gp.kernel.amplitude)


def sigma_tilde_sq(gp: GpPosterior, x, incumbent: Incumbent) -> float:
    """Corrected variance at a single point given in original units."""
    U = gp.preprocess.normalize(np.atleast_2d(x))
    return float(sigma_tilde_sq_normalized(gp, U, incumbent)[0])


class AcquisitionFunction:
    """Vectorized acquisition over normalized points for one posterior.

    Projections of the incumbent are computed once, so repeated calls (as
    made by the optimizer) cost one triangular solve per batch.
    """

    def __init__(self, spec: AcquisitionSpec, gp: GpPosterior, incumbent: Incumbent):
        self.spec = spec
        self.gp = gp
        self.incumbent = incumbent
        self._v_plus = gp.project(incumbent.u_plus[None, :])[1][:, 0]

    def __call__(self, U) -> np.ndarray:
        gp, inc, kind = self.gp, self.incumbent, self.spec.kind
        U = np.atleast_2d(np.asarray(U, dtype=float))
        k_star, V = gp.project(U)
        amp = gp.kernel.amplitude
        mean = k_star.T @ gp.weights if gp.n else np.zeros(U.shape[0])
        u = mean - inc.mu_plus
        if kind in (AcqKind.EI, AcqKind.PI, AcqKind.UCB):
            sigma = np.sqrt(np.maximum(amp - np.einsum("ij,ij->j", V, V), 0.0))
            if kind is AcqKind.EI:
                return expected_improvement(u, sigma)
            if kind is AcqKind.PI:
                return probability_of_improvement(u, sigma)
            return mean + math.sqrt(self.spec.ucb_beta) * sigma
        diff = V - self._v_plus[:, None]
        raw = (2.0 * amp - 2.0 * cross_kernel(gp.kernel, U, inc.u_plus[None, :])[:, 0]
               - np.einsum("ij,ij->j", diff, diff))
        s_tilde = np.sqrt(clamp_sigma_tilde_sq(raw, amp))
        if kind is AcqKind.CORRECTED_EI:
            return corrected_ei(u, s_tilde)
        return probability_of_improvement(u, s_tilde)


def evaluate_normalized(spec: AcquisitionSpec, gp: GpPosterior, U, incumbent: Incumbent) -> np.ndarray:
    """Acquisition values (standardized scale) at normalized points ``U``."""
    return AcquisitionFunction(spec, gp, incumbent)(U)


def acq_value(spec: AcquisitionSpec, gp: GpPosterior, x, incumbent: Incumbent) -> float:
    """Acquisition value at one point given in original units."""
    U = gp.preprocess.normalize(np.atleast_2d(x))
    return float(evaluate_normalized(spec, gp, U, incumbent)[0])


def to_output_units(kind: AcqKind, value, gp: GpPosterior):
    """Convert a standardized acquisition value into original output units."""
    kind = AcqKind.parse(kind)
    if kind is AcqKind.UCB:
        return gp.preprocess.destandardize(value)
    if kind.scales_with_output:
        return np.asarray(value) * gp.output_std
    return value
