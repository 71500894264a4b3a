"""Closed-form error curves, moment recursions, and allocation formulas.

Everything here is an executable formula with no simulation inside: effective
score variance after k message-passing rounds, upper/lower bounds on adaptive
and non-adaptive error rates, the density-evolution moments of the scores,
the graph-neighborhood failure probability, and the budget allocation that
the lower bound is tight against.  The simulation tests use these as oracles;
the bounds themselves are asymptotic and are validated as envelopes and via
scaling checks, never point-wise.

Throughout, ell_hat = ell - 1 and r_hat = r - 1 (tree-excess degrees), and
the geometric ratio ell_hat * r_hat * (rho2 * sigma2)^2 — the square of the
spectral-barrier margin — controls whether iterating helps.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

__all__ = [
    "C_PRIME_DEFAULT",
    "SingularGeometricRatio",
    "ConditionsViolated",
    "sigma_k2",
    "sigma_k2_recursion",
    "sigma_inf2",
    "mp_error_bound",
    "tree_failure_prob",
    "adaptive_upper_bound",
    "adaptive_lower_bound",
    "nonadaptive_lower_bound",
    "density_evolution",
    "DensityEvolutionMoments",
    "optimal_allocation",
]

# Back-derived from the exponent constant 0.27 in the oracle lower bound;
# configurable everywhere it appears.
C_PRIME_DEFAULT = 1.0 / 0.27


class SingularGeometricRatio(ValueError):
    """The geometric ratio equals 1 and the closed forms divide by zero."""


class ConditionsViolated(ValueError):
    """Inputs violate the preconditions of the bound being evaluated."""


def _hats(ell, r):
    if ell < 2 or r < 2:
        raise ConditionsViolated(f"need ell, r >= 2, got ell={ell}, r={r}")
    return ell - 1.0, r - 1.0


def sigma_k2(ell, r, mu, sigma2, rho2, k):
    """Effective variance of the score of a unit-difficulty task after k rounds."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ell_hat, r_hat = _hats(ell, r)
    ratio = ell_hat * r_hat * (rho2 * sigma2) ** 2
    if abs(ratio - 1.0) < 1e-12:
        raise SingularGeometricRatio("(ell-1)(r-1)(rho2 sigma2)^2 = 1")
    lead = 2 * sigma2 / (mu**2 * ratio ** (k - 1))
    tail = 3 * (1 + 1.0 / (r_hat * rho2 * sigma2)) * (1 - ratio ** -(k - 1)) / (1 - 1.0 / ratio)
    return lead + tail


def sigma_k2_recursion(ell, r, mu, sigma2, rho2, k):
    """sigma_k2 via the raw message-variance recursion (consistency oracle).

    The un-normalized message variances satisfy

        s_1 = 2 ell_hat
        s_k = ell_hat r_hat s_{k-1}
              + 3 ell_hat r_hat (1 + r_hat rho2 sigma2) rho2 * m_{k-1}^2

    with message means m_k = mu ell_hat (rho2 sigma2 ell_hat r_hat)^{k-1};
    dividing out the squared mean growth and the per-round degree factor maps
    them onto the decision-variable scale:

        sigma_k2 = sigma2 * s_k / (mu^2 ell_hat (ell_hat r_hat rho2 sigma2)^{2(k-1)}).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ell_hat, r_hat = _hats(ell, r)
    s = 2 * ell_hat
    for j in range(2, k + 1):
        mean = mu * ell_hat * (rho2 * sigma2 * ell_hat * r_hat) ** (j - 2)
        s = (
            ell_hat * r_hat * s
            + 3 * ell_hat * r_hat * (1 + r_hat * rho2 * sigma2) * rho2 * mean**2
        )
    return sigma2 * s / (mu**2 * ell_hat * (ell_hat * r_hat * rho2 * sigma2) ** (2 * (k - 1)))


def sigma_inf2(ell, r, sigma2, rho2):
    """Large-k limit of sigma_k2; finite only above the spectral barrier."""
    ell_hat, r_hat = _hats(ell, r)
    ratio = ell_hat * r_hat * (rho2 * sigma2) ** 2
    if ratio <= 1:
        raise SingularGeometricRatio(
            f"no finite limit below the barrier: (ell-1)(r-1)(rho2 sigma2)^2 = {ratio}"
        )
    return 3 * (1 + 1.0 / (r_hat * rho2 * sigma2)) * ratio / (ratio - 1.0)


def tree_failure_prob(ell, r, k, m):
    """Probability that a depth-k score neighborhood is not a tree, capped at 1."""
    if min(ell, r, k, m) < 1:
        raise ValueError("all arguments must be >= 1")
    return min(1.0, 3.0 * ell * r / m * ((ell - 1) * (r - 1)) ** (2 * k - 2))


def mp_error_bound(ell, r, mu, sigma2, rho2, lam_i, k, m):
    """Error bound for a difficulty-lam_i task after k message-passing rounds."""
    ell_hat, r_hat = _hats(ell, r)
    problems = []
    if mu <= 0:
        problems.append(f"mu={mu} <= 0")
    if ell_hat * r_hat * (rho2 * sigma2) ** 2 <= 1:
        problems.append(
            f"(ell-1)(r-1)(rho2 sigma2)^2 = {ell_hat * r_hat * (rho2 * sigma2) ** 2} <= 1"
        )
    if r_hat * rho2 <= 1:
        problems.append(f"(r-1) rho2 = {r_hat * rho2} <= 1")
    if problems:
        raise ConditionsViolated("; ".join(problems))
    gaussian = math.exp(-ell * sigma2 * lam_i / (2 * sigma_k2(ell, r, mu, sigma2, rho2, k)))
    return gaussian + 3.0 * ell * r / m * (ell_hat * r_hat) ** (2 * k - 2)


def adaptive_upper_bound(gamma, m, lam, sigma2, c_delta, c1):
    """Guarantee of the adaptive scheme: min(1, c1 exp(-(c_delta/4)(Γ/m) lam sigma2))."""
    if min(gamma, m, lam, sigma2, c_delta, c1) < 0 or m == 0:
        raise ValueError("all parameters must be positive (gamma may be 0)")
    return min(1.0, c1 * math.exp(-(c_delta / 4.0) * (gamma / m) * lam * sigma2))


def adaptive_lower_bound(gamma, m, lam, sigma2, c_prime=C_PRIME_DEFAULT):
    """Minimax floor for any adaptive scheme: (1/4) exp(-c' Γ lam sigma2 / m)."""
    if sigma2 >= 1:
        raise ConditionsViolated(f"sigma2={sigma2} must be < 1 for the oracle argument")
    return 0.25 * math.exp(-c_prime * gamma * lam * sigma2 / m)


def nonadaptive_lower_bound(ell, sigma2, lam_i, c_prime=C_PRIME_DEFAULT):
    """Per-task floor for non-adaptive schemes: exp(-c' (ell sigma2 lam_i + 1))."""
    if lam_i >= 1:
        raise ConditionsViolated(f"lam_i={lam_i} must be < 1")
    return math.exp(-c_prime * (ell * sigma2 * lam_i + 1.0))


class DensityEvolutionMoments(NamedTuple):
    mean: float
    var: float


def density_evolution(q, ell, r, mu, sigma2, rho2, k) -> DensityEvolutionMoments:
    """Conditional mean and variance of a score given task quality q.

    Valid in the large-system limit where depth-k neighborhoods are trees;
    the geometric interference sum is evaluated term by term so the formula
    stays exact for any barrier margin.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ell_hat, r_hat = _hats(ell, r)
    bias = 2 * q - 1
    growth = ell_hat * r_hat * rho2 * sigma2
    mean = bias * mu * ell * growth ** (k - 1)
    ratio = ell_hat * r_hat * (rho2 * sigma2) ** 2
    interference = sum(ratio**-j for j in range(1, k))
    bracket = (
        rho2
        - bias**2
        + rho2 * ell_hat * (1 - rho2 * sigma2) * (1 + r_hat * rho2 * sigma2) * interference
    )
    var = mu**2 * ell * growth ** (2 * (k - 1)) * bracket
    var += ell * (2 - mu**2 * rho2) * (ell_hat * r_hat) ** (k - 1)
    return DensityEvolutionMoments(mean=float(mean), var=float(var))


def optimal_allocation(quantized, gamma, m, sigma2, c_prime=C_PRIME_DEFAULT):
    """Budget-minimizing per-bin assignments ell_a (continuous relaxation).

    Satisfies sum_a delta_a ell_a = gamma / m exactly: the correction terms
    cancel pairwise by antisymmetry of the log ratios.  Natural log is used,
    matching the continuous optimization it comes from.
    """
    lams = np.asarray(quantized.lams)
    deltas = np.asarray(quantized.deltas)
    lam = quantized.lam_hat
    base = (lam / lams) * (gamma / m)
    correction = np.zeros_like(base)
    for a, lam_a in enumerate(lams):
        others = np.arange(lams.size) != a
        correction[a] = (lam / (lam_a * c_prime * sigma2)) * np.sum(
            (deltas[others] / lams[others]) * np.log(lam_a / lams[others])
        )
    return base + correction
