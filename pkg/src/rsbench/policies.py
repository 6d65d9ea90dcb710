"""Sequential replication-allocation policies.

Every policy maps the posterior state, the known standard deviations and
(for TTTS) a random stream to the next system to simulate. Policies never
see true means. All argmax/argmin ties resolve to the smallest index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

from .core import PosteriorState, RngStream, argmax, f_acq, log_norm_cdf, norm_pdf

TTTS_DIRECT_TRIES = 4
TTTS_MAX_RESAMPLES = 10_000


class PolicyKind(str, Enum):
    AOMAP = "aomap"
    MCEI = "mcei"
    GCEI = "gcei"
    TTTS = "ttts"
    STATIC_ORACLE = "static"

    @classmethod
    def parse(cls, name: str) -> "PolicyKind":
        key = name.strip().lower().replace("-", "_")
        aliases = {"static_oracle": "static", "oracle": "static"}
        key = aliases.get(key, key)
        for kind in cls:
            if kind.value == key:
                return kind
        valid = ", ".join(k.value for k in cls)
        raise ValueError(f"unknown policy {name!r} (expected one of: {valid})")


# Stable identifiers used to derive per-policy random substreams.
POLICY_STREAM_ID = {
    PolicyKind.AOMAP: 0,
    PolicyKind.MCEI: 1,
    PolicyKind.GCEI: 2,
    PolicyKind.TTTS: 3,
    PolicyKind.STATIC_ORACLE: 4,
}


@dataclass(frozen=True)
class PolicyDecision:
    chosen: int
    scores: Optional[tuple[float, ...]] = None


@dataclass(frozen=True)
class Policy:
    """A policy kind plus its parameters.

    ``beta`` is only used by TTTS; ``alpha`` only by the static oracle. A static
    oracle without ``alpha`` gets the rate-optimal allocation of the instance
    filled in by the benchmark harness.
    """

    kind: PolicyKind
    beta: float = 0.5
    alpha: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if self.alpha is not None:
            if min(self.alpha) <= 0.0 or abs(math.fsum(self.alpha) - 1.0) > 1e-9:
                raise ValueError("static allocation must lie on the open simplex")

    @property
    def name(self) -> str:
        return self.kind.value

    def choose(
        self, state: PosteriorState, sigma: Sequence[float], rng: RngStream
    ) -> PolicyDecision:
        kind = self.kind
        if kind is PolicyKind.GCEI:
            return gcei_choose(state, sigma)
        if kind is PolicyKind.MCEI:
            return mcei_choose(state, sigma)
        if kind is PolicyKind.AOMAP:
            return aomap_choose(state, sigma)
        if kind is PolicyKind.TTTS:
            return ttts_choose(state, sigma, rng, self.beta)
        if self.alpha is None:
            raise ValueError("static oracle policy has no allocation")
        return PolicyDecision(static_choose(self.alpha, state.counts))


def _best_of(state: PosteriorState) -> int:
    state.require_initialized()
    return argmax(state.means)


def _check_challenger(state: PosteriorState, i: int) -> int:
    best = _best_of(state)
    if i == best:
        raise ValueError(f"system {i} is the current sample best; expected a challenger")
    if not 0 <= i < state.k:
        raise IndexError(f"system index {i} out of range for k={state.k}")
    return best


# ---------------------------------------------------------------------------
# AOMAP
# ---------------------------------------------------------------------------


def ei_value(state: PosteriorState, sigma: Sequence[float], i: int) -> float:
    """Expected improvement of system ``i`` over the sample-best mean."""
    best = _best_of(state)
    sd = sigma[i] / math.sqrt(state.counts[i])
    return sd * f_acq((state.means[i] - state.means[best]) / sd)


def aomap_xi(state: PosteriorState, sigma: Sequence[float]) -> float:
    """Penalty multiplier applied to the sample best.

    ``(sum_{i != *} s_*^2 s_i^2 / (m_i - m_*)^4) ** -1/4``; zero as soon as any
    other system ties the best mean, which is the limit of the infinite term.
    """
    best = _best_of(state)
    means = state.means
    mb = means[best]
    sb = sigma[best]
    # w_i = |gap_i| / sqrt(s_* s_i), so xi = (sum w_i^-4)^(-1/4); factoring out
    # the smallest w keeps tiny or huge gaps from over- or underflowing.
    w = [abs(means[i] - mb) / math.sqrt(sb * sigma[i]) for i in range(len(means)) if i != best]
    w_min = min(w)
    if w_min == 0.0:
        return 0.0
    return w_min * math.fsum((w_min / x) ** 4 for x in w) ** -0.25


def aomap_choose(state: PosteriorState, sigma: Sequence[float]) -> PolicyDecision:
    """Argmax over all systems of EI against an adjusted target.

    Systems whose mean differs from the best are measured against the best
    mean; systems tied with it (the best included) against
    ``best mean + xi * sigma_best``.
    """
    best = _best_of(state)
    means = state.means
    counts = state.counts
    mb = means[best]
    shifted = mb + aomap_xi(state, sigma) * sigma[best]
    scores = []
    for i in range(len(means)):
        sd = sigma[i] / math.sqrt(counts[i])
        target = shifted if means[i] == mb else mb
        scores.append(sd * f_acq((means[i] - target) / sd))
    return PolicyDecision(argmax(scores), tuple(scores))


# ---------------------------------------------------------------------------
# CEI based policies
# ---------------------------------------------------------------------------


def cei_from_counts(gap: float, var_i: float, r_i: float, var_best: float, r_best: float) -> float:
    """CEI of a challenger with mean ``gap`` below the best, counts treated as reals."""
    nu = var_i / r_i + var_best / r_best
    root = math.sqrt(nu)
    return root * f_acq(gap / root)


def cei_value(state: PosteriorState, sigma: Sequence[float], i: int) -> float:
    """Complete expected improvement of challenger ``i`` over the sample best."""
    best = _check_challenger(state, i)
    return cei_from_counts(
        state.means[i] - state.means[best],
        sigma[i] ** 2,
        state.counts[i],
        sigma[best] ** 2,
        state.counts[best],
    )


def mcei_choose(state: PosteriorState, sigma: Sequence[float]) -> PolicyDecision:
    """Simulate the best iff ``(r_*/s_*)^2 < sum_{i != *} (r_i/s_i)^2``.

    Otherwise simulate the challenger with the largest CEI.
    """
    best = _best_of(state)
    counts = state.counts
    means = state.means
    k = len(counts)
    lhs = (counts[best] / sigma[best]) ** 2
    rhs = 0.0
    for i in range(k):
        if i != best:
            rhs += (counts[i] / sigma[i]) ** 2
    if lhs < rhs:
        return PolicyDecision(best)

    mb = means[best]
    vb_r = sigma[best] ** 2 / counts[best]
    chosen = -1
    top = -math.inf
    scores = [math.nan] * k
    for i in range(k):
        if i == best:
            continue
        root = math.sqrt(sigma[i] ** 2 / counts[i] + vb_r)
        value = root * f_acq((means[i] - mb) / root)
        scores[i] = value
        if value > top:
            top = value
            chosen = i
    return PolicyDecision(chosen, tuple(scores))


def gcei_grad(state: PosteriorState, sigma: Sequence[float], i: int) -> tuple[float, float]:
    """Partial derivatives of CEI_i w.r.t. ``r_i`` and ``r_best``.

    Both share the factor ``phi(gap/sqrt(nu)) / (2 sqrt(nu))`` and differ only in
    the prefactor ``sigma^2 / r^2`` of the system being varied. Derivatives with
    respect to any third system vanish and are not returned.
    """
    best = _check_challenger(state, i)
    counts = state.counts
    var_i = sigma[i] ** 2
    var_b = sigma[best] ** 2
    nu = var_i / counts[i] + var_b / counts[best]
    root = math.sqrt(nu)
    common = norm_pdf((state.means[i] - state.means[best]) / root) / (2.0 * root)
    return -var_i / counts[i] ** 2 * common, -var_b / counts[best] ** 2 * common


def gcei_choose(state: PosteriorState, sigma: Sequence[float]) -> PolicyDecision:
    """Simulate the best iff its summed CEI derivative is ``<=`` the steepest challenger's."""
    best = _best_of(state)
    counts = state.counts
    means = state.means
    k = len(counts)
    mb = means[best]
    var_b = sigma[best] ** 2
    rb = counts[best]
    vb_r = var_b / rb
    best_factor = var_b / (rb * rb)

    total_best = 0.0
    steepest = math.inf
    challenger = -1
    grads = [math.nan] * k
    for i in range(k):
        if i == best:
            continue
        var_i = sigma[i] ** 2
        r = counts[i]
        root = math.sqrt(var_i / r + vb_r)
        common = norm_pdf((means[i] - mb) / root) / (2.0 * root)
        d_own = -var_i / (r * r) * common
        total_best -= best_factor * common
        grads[i] = d_own
        if d_own < steepest:
            steepest = d_own
            challenger = i
    grads[best] = total_best
    chosen = best if total_best <= steepest else challenger
    return PolicyDecision(chosen, tuple(grads))


# ---------------------------------------------------------------------------
# Top-two Thompson sampling
# ---------------------------------------------------------------------------


def _thompson_draw(means: Sequence[float], scales: Sequence[float], rng: RngStream) -> list[float]:
    z = rng.normals(len(means)).tolist()
    return [m + s * e for m, s, e in zip(means, scales, z)]


def _normal_tail(a: float, rng: RngStream) -> float:
    """Standard normal conditioned on ``Z > a``.

    Plain rejection for small ``a``; exponential-proposal rejection (Robert 1995)
    in the tail, which accepts with probability above 0.7 for every ``a > 0.45``.
    """
    if a <= 0.45:
        while True:
            z = rng.normal()
            if z > a:
                return z
    lam = 0.5 * (a + math.sqrt(a * a + 4.0))
    while True:
        z = a - math.log1p(-rng.uniform()) / lam
        if rng.uniform() <= math.exp(-0.5 * (z - lam) ** 2):
            return z


def _pairwise_challenger(
    means: Sequence[float], scales: Sequence[float], leader: int, rng: RngStream
) -> Optional[int]:
    """Exact draw of ``argmax`` of a Thompson sample conditioned on it not being ``leader``.

    Proposal: pick ``j != leader`` with probability proportional to
    ``P(X_j > X_leader)``, draw ``(X_j, X_leader)`` conditioned on that event and
    the remaining systems unconditionally. The target-to-proposal density ratio
    is ``1/N``, where ``N`` counts the systems above the leader, so accepting with
    probability ``1/N`` is exact. Returns ``None`` if the attempt cap is hit.
    """
    k = len(means)
    m_l, s_l = means[leader], scales[leader]
    v_l = s_l * s_l
    others = [j for j in range(k) if j != leader]
    logw = []
    for j in others:
        logw.append(log_norm_cdf((means[j] - m_l) / math.sqrt(scales[j] ** 2 + v_l)))
    top = max(logw)
    cum = []
    acc = 0.0
    for w in logw:
        acc += math.exp(w - top)
        cum.append(acc)

    for _ in range(TTTS_MAX_RESAMPLES):
        u = rng.uniform() * acc
        pos = 0
        while pos < len(cum) - 1 and cum[pos] <= u:
            pos += 1
        j = others[pos]
        v_j = scales[j] ** 2
        var_d = v_j + v_l
        sd_d = math.sqrt(var_d)
        mean_d = means[j] - m_l
        d = mean_d + sd_d * _normal_tail(-mean_d / sd_d, rng)
        x_j = means[j] + v_j / var_d * (d - mean_d) + math.sqrt(v_j * v_l / var_d) * rng.normal()
        x = _thompson_draw(means, scales, rng)
        x[j] = x_j
        x[leader] = x_lead = x_j - d
        above = sum(1 for i in others if x[i] > x_lead)
        if above == 1 or rng.uniform() * above < 1.0:
            return argmax(x)
    return None


def ttts_choose(
    state: PosteriorState, sigma: Sequence[float], rng: RngStream, beta: float = 0.5
) -> PolicyDecision:
    """Top-two Thompson sampling step.

    Draw a leader from the posterior; with probability ``beta`` simulate it,
    otherwise simulate the top system of a fresh posterior draw conditioned on
    that top system differing from the leader.

    The conditioning is done first by literal redrawing (``TTTS_DIRECT_TRIES``
    attempts), then by an exact pairwise-proposal sampler whose acceptance rate
    stays high when the posterior is concentrated and redraws almost never
    succeed. Both stages target the same distribution. If the sampler exhausts
    ``TTTS_MAX_RESAMPLES`` attempts, the challenger is the best non-leader of one
    more draw.
    """
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    state.require_initialized()
    means = state.means
    scales = [s / math.sqrt(r) for s, r in zip(sigma, state.counts)]

    leader = argmax(_thompson_draw(means, scales, rng))
    if rng.uniform() < beta:
        return PolicyDecision(leader)
    for _ in range(TTTS_DIRECT_TRIES):
        challenger = argmax(_thompson_draw(means, scales, rng))
        if challenger != leader:
            return PolicyDecision(challenger)
    challenger = _pairwise_challenger(means, scales, leader, rng)
    if challenger is not None:
        return PolicyDecision(challenger)
    draw = _thompson_draw(means, scales, rng)
    draw[leader] = -math.inf
    return PolicyDecision(argmax(draw))


# ---------------------------------------------------------------------------
# Static allocation
# ---------------------------------------------------------------------------


def static_choose(alpha: Sequence[float], counts: Sequence[int]) -> int:
    """Largest-deficit scheduler tracking a fixed allocation ``alpha``."""
    t1 = sum(counts) + 1
    return argmax([a * t1 - r for a, r in zip(alpha, counts)])
