"""Closed-form calculators for the sketch-size and covering-number bounds.

These evaluate the guarantee formulas for Gaussians and mixtures with
parameters in a compact box: covering-number bounds, the constant by which
the sketch metric dominates the total-variation distance under a Gaussian
frequency law, and the resulting minimal sketch sizes.  Everything is
computed in natural-log space so that astronomically large bounds never
overflow; linear values are reported only when representable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

# Linear values above this are reported as None (log value still exact).
_LINEAR_CAP = 1e300


@dataclass(frozen=True)
class ParamDomain:
    """Compact parameter box for d-dimensional diagonal Gaussians."""

    d: int
    sigma2_min: float
    sigma2_max: float
    M: float        # bound on the mean norm
    radius: float   # Chebyshev radius of the parameter box

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("need d >= 1")
        if not (0 < self.sigma2_min <= self.sigma2_max):
            raise ValueError("need 0 < sigma2_min <= sigma2_max")
        if self.M < 0 or not self.radius > 0:
            raise ValueError("need M >= 0 and radius > 0")

    @property
    def lipschitz(self) -> float:
        """max(sigma_min^-1, sigma_min^-2 / sqrt(2))."""
        s = math.sqrt(self.sigma2_min)
        return max(1.0 / s, 1.0 / (self.sigma2_min * math.sqrt(2.0)))

    @property
    def B(self) -> float:
        """Covering prefactor 8 * lipschitz * radius."""
        return 8.0 * self.lipschitz * self.radius


@dataclass(frozen=True)
class BoundValue:
    """A possibly huge positive quantity, exact in log space."""

    log: float
    linear: float | None

    @staticmethod
    def from_log(log: float) -> "BoundValue":
        if log < math.log(_LINEAR_CAP):
            return BoundValue(log, math.exp(log))
        return BoundValue(log, None)


def covering_bound_gauss(dom: ParamDomain, eps: float) -> BoundValue:
    """Covering-number bound (B / eps)^(2d) for the Gaussian family."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return BoundValue.from_log(2 * dom.d * (math.log(dom.B) - math.log(eps)))


def covering_bound_mixture(base_log_bound: float, C: float, K: int,
                           eps: float, tau: float) -> BoundValue:
    """Covering-number bound for K-component mixtures over a base family.

    ``base_log_bound`` is the log covering number of the base family at
    radius tau*eps; the mixture bound is
    (8 C * N_base(tau eps) / ((1 - tau) eps))^K.
    """
    if not 0 < tau < 1:
        raise ValueError("tau must lie strictly between 0 and 1")
    if C < 1:
        raise ValueError("need C >= 1")
    if not eps > 0:
        raise ValueError("eps must be positive")
    log_one = math.log(8.0 * C) + base_log_bound - math.log((1.0 - tau) * eps)
    return BoundValue.from_log(K * log_one)


def covering_bound_gmm(dom: ParamDomain, K: int, eps: float) -> BoundValue:
    """Specialized mixture bound (2(B+1)/eps)^((2d+1)K) via tau = B/(B+1)."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return BoundValue.from_log(
        (2 * dom.d + 1) * K * (math.log(2.0 * (dom.B + 1.0)) - math.log(eps)))


def domination_constant(dom: ParamDomain, a: float) -> BoundValue:
    """Constant D with TV distance <= D * sketch metric for single Gaussians
    under an isotropic Gaussian frequency law with total variance a.

    D = lipschitz * sqrt(2 d D1 e^{3 a sigma2_max} / (a (1 - e^{-D1}))),
    D1 = sigma2_max * a * (1 + 2 M^2 / d).
    """
    if not a > 0:
        raise ValueError("need a > 0")
    d1 = dom.sigma2_max * a * (1.0 + 2.0 * dom.M**2 / dom.d)
    log_inside = (math.log(2.0 * dom.d * d1) + 3.0 * a * dom.sigma2_max
                  - math.log(a) - math.log(-math.expm1(-d1)))
    return BoundValue.from_log(math.log(dom.lipschitz) + 0.5 * log_inside)


def _check_eta_rho(eta: float, rho: float):
    if not 0 < eta <= 1:
        raise ValueError("need 0 < eta <= 1")
    if not 0 < rho < 1:
        raise ValueError("need 0 < rho < 1")


def domination_branch(dom: ParamDomain, a: float, eta: float) -> str:
    """Which value bounds the domination constant: 'D' or '2/eta'."""
    return "D" if domination_constant(dom, a).log <= math.log(2.0 / eta) else "2/eta"


def sketch_size_single_gauss(dom: ParamDomain, a: float, eta: float,
                             rho: float) -> int:
    """Minimal sketch size for single Gaussians under a Gaussian frequency
    law: ceil(12 A^2 (4 d log(C/eta) + log(2/rho))) with A = min(D, 2/eta)
    and C = sqrt(24 B)."""
    _check_eta_rho(eta, rho)
    log_A = min(domination_constant(dom, a).log, math.log(2.0 / eta))
    C = math.sqrt(24.0 * dom.B)
    inner = 4.0 * dom.d * (math.log(C) - math.log(eta)) + math.log(2.0 / rho)
    return math.ceil(12.0 * math.exp(2.0 * log_A) * inner)


def gmm_bound_rhs(dom: ParamDomain, d: int, K: int, eta: float,
                  rho: float) -> float:
    """Un-rounded right-hand side of the mixture sketch-size bound
    48 eta^-2 (2 K (2d+1) log(C/eta) + log(2/rho)), C = sqrt(48(B+1));
    exactly affine in K."""
    _check_eta_rho(eta, rho)
    C = math.sqrt(48.0 * (dom.B + 1.0))
    inner = (2.0 * K * (2 * d + 1) * (math.log(C) - math.log(eta))
             + math.log(2.0 / rho))
    return 48.0 * inner / (eta * eta)


def sketch_size_gmm(dom: ParamDomain, d: int, K: int, eta: float,
                    rho: float) -> int:
    """Minimal sketch size for K-component mixtures, any frequency law:
    the ceiling of ``gmm_bound_rhs``."""
    return math.ceil(gmm_bound_rhs(dom, d, K, eta, rho))


def gmm_implied_failure_prob_log(dom: ParamDomain, d: int, K: int, eta: float,
                                 m: int) -> float:
    """log of the failure probability implied by a sketch of size m for the
    mixture model, inverting m >= 12 A^2 log(2 N(eta^2/24) / rho) at the
    universal constant A = 2/eta."""
    _check_eta_rho(eta, 0.5)
    A2 = (2.0 / eta) ** 2
    log_cov = covering_bound_gmm(
        ParamDomain(d, dom.sigma2_min, dom.sigma2_max, dom.M, dom.radius),
        K, eta * eta / 24.0).log
    return math.log(2.0) + log_cov - m / (12.0 * A2)
