"""Rate-optimal static allocation for normal systems with known variances.

The optimal allocation ``alpha`` equalizes the pairwise rates

    rate_i = (mu_i - mu_b)**2 / (sigma_i**2/alpha_i + sigma_b**2/alpha_b)

over all inferior systems ``i`` and satisfies the balance equation

    sum_{i != b} (sigma_b/alpha_b)**2 (alpha_i/sigma_i)**2 = 1.

Rates are reported without the usual large-deviations factor 1/2; only their
equality matters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .core import ProblemInstance, argmax

DEFAULT_TOL = 1e-10
MAX_HALVINGS = 200


class SolverError(ValueError):
    """The allocation problem is ill-posed or the solver failed to converge."""


@dataclass(frozen=True)
class SolverReport:
    alpha: tuple[float, ...]
    rate: float
    max_rate_gap: float
    balance_residual: float
    iterations: int


def _check_alpha(alpha: Sequence[float], k: int) -> None:
    if len(alpha) != k:
        raise ValueError(f"allocation has {len(alpha)} entries, expected {k}")
    if min(alpha) <= 0.0:
        raise ValueError("allocation must be strictly positive")


def rate_of(instance: ProblemInstance, alpha: Sequence[float], i: int) -> float:
    """Rate at which system ``i`` is separated from the best under ``alpha``."""
    _check_alpha(alpha, instance.k)
    b = instance.best
    if i == b:
        raise ValueError(f"system {i} is the best system")
    mu, var = instance.mu, instance.variances
    return (mu[i] - mu[b]) ** 2 / (var[i] / alpha[i] + var[b] / alpha[b])


def rates(instance: ProblemInstance, alpha: Sequence[float]) -> list[float]:
    """Rates of all inferior systems, in index order."""
    b = instance.best
    return [rate_of(instance, alpha, i) for i in range(instance.k) if i != b]


def balance_residual(instance: ProblemInstance, alpha: Sequence[float]) -> float:
    """Left side of the balance equation minus one.

    Positive when the best system is under-allocated relative to the rest.
    """
    _check_alpha(alpha, instance.k)
    b = instance.best
    sigma = instance.sigma
    ratio = (sigma[b] / alpha[b]) ** 2
    return math.fsum(ratio * (alpha[i] / sigma[i]) ** 2 for i in range(instance.k) if i != b) - 1.0


def solve_gj(instance: ProblemInstance, tol: float = DEFAULT_TOL) -> SolverReport:
    """Solve for the rate-optimal allocation.

    Both optimality conditions are invariant to rescaling ``alpha``, so the best
    system is pinned at weight 1 and the remaining weights are written as
    functions of the common rate ``rho``::

        w_i(rho) = sigma_i**2 * rho / (gap_i**2 - sigma_b**2 * rho)

    valid for ``rho < min_i gap_i**2 / sigma_b**2``. The balance residual is
    strictly increasing in ``rho`` (from -1 to +inf), so bisection on ``rho``
    brackets the unique root; the weights are normalized at the end.
    """
    if tol < 1e-12:
        raise ValueError(f"tol must be at least 1e-12, got {tol}")
    mu, sigma = instance.mu, instance.sigma
    if min(sigma) <= 0.0:
        raise SolverError("standard deviations must be positive")
    k = instance.k
    b = argmax(mu)
    others = [i for i in range(k) if i != b]
    gap2 = []
    for i in others:
        gap = mu[b] - mu[i]
        if gap < 1e-12 * max(sigma[i], sigma[b]):
            raise SolverError(f"non-unique best: systems {b} and {i} have (nearly) equal means")
        gap2.append(gap * gap)
    var_o = [sigma[i] ** 2 for i in others]
    var_b = sigma[b] ** 2
    rho_max = min(gap2) / var_b

    def weights(rho: float) -> list[float]:
        return [v * rho / (g - var_b * rho) for v, g in zip(var_o, gap2)]

    def residual(rho: float) -> float:
        return var_b * math.fsum(w * w / v for w, v in zip(weights(rho), var_o)) - 1.0

    lo, hi = 0.0, rho_max
    iterations = 0
    while iterations < MAX_HALVINGS:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        iterations += 1
        r = residual(mid)
        if math.isnan(r):
            raise SolverError(f"balance residual is NaN at rho={mid!r}")
        if r == 0.0:
            lo = hi = mid
            break
        if r < 0.0:
            lo = mid
        else:
            hi = mid
    else:
        raise SolverError(f"bisection did not close the bracket in {MAX_HALVINGS} halvings")

    rho = 0.5 * (lo + hi)
    w = weights(rho)
    raw = [0.0] * k
    raw[b] = 1.0
    for i, wi in zip(others, w):
        raw[i] = wi
    total = math.fsum(raw)
    alpha = tuple(x / total for x in raw)

    rs = rates(instance, alpha)
    common = math.fsum(rs) / len(rs)
    gap = max(rs) - min(rs)
    bal = balance_residual(instance, alpha)
    if gap > tol * common or abs(bal) > tol:
        raise SolverError(
            f"solution misses tolerance {tol:g}: rate gap {gap:.3g} (rate {common:.3g}), "
            f"balance residual {bal:.3g}"
        )
    return SolverReport(alpha, common, gap, bal, iterations)


def second_best(means: Sequence[float]) -> tuple[int, int]:
    """Indices of the largest and second-largest means (ties to the smallest index)."""
    b = argmax(means)
    rest = [i for i in range(len(means)) if i != b]
    s = rest[argmax([means[i] for i in rest])]
    return b, s


def scale_constant(
    means: Sequence[float], sigma: Sequence[float], r0: int, alpha_star: Sequence[float]
) -> float:
    """Mean scaling ``c`` so the top two differ by one standard error after ``r0`` replications.

    Solves ``c * (m_b - m_s) = sqrt(s_s^2/(r0 a_s) + s_b^2/(r0 a_b))`` where ``b``
    and ``s`` are the best and second-best prescaled means.
    """
    if r0 < 1:
        raise ValueError(f"r0 must be positive, got {r0}")
    b, s = second_best(means)
    diff = means[b] - means[s]
    if not diff > 0.0:
        raise ValueError("the two largest prescaled means are equal")
    se = math.sqrt(sigma[s] ** 2 / (r0 * alpha_star[s]) + sigma[b] ** 2 / (r0 * alpha_star[b]))
    return se / diff
