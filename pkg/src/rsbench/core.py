"""Normal-distribution kernel, problem definition and posterior bookkeeping.

Systems are indexed ``0..k-1``. Bigger means are better. Output variances are
known, and the prior is non-informative, so the posterior mean of a system is
its sample mean and its posterior precision is ``r_i / sigma_i**2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

SQRT_2PI = math.sqrt(2.0 * math.pi)
_INV_SQRT_2PI = 1.0 / SQRT_2PI
_INV_SQRT2 = 1.0 / math.sqrt(2.0)

# (-1)**n * (2n+1)!! for n = 0..8; truncation error < 1e-17 relative at |z| >= 30
_TAIL_CUTOFF = -30.0
_TAIL_COEFFS = (1.0, -3.0, 15.0, -105.0, 945.0, -10395.0, 135135.0, -2027025.0, 34459425.0)


def norm_pdf(z: float) -> float:
    """Standard normal density."""
    return _INV_SQRT_2PI * math.exp(-0.5 * z * z)


def norm_cdf(z: float) -> float:
    """Standard normal distribution function.

    Evaluated through ``erfc`` so both tails keep full relative precision.
    """
    return 0.5 * math.erfc(-z * _INV_SQRT2)


def f_acq(z: float) -> float:
    """Expected positive part of ``z + N(0, 1)``: ``z*Phi(z) + phi(z)``.

    Its derivative is ``Phi(z)``. Far in the left tail the two terms cancel and
    underflow, so there the asymptotic series
    ``phi(z)/z**2 * (1 - 3/z**2 + 15/z**4 - ...)`` is used instead.
    """
    if z < _TAIL_CUTOFF:
        w = 1.0 / (z * z)
        acc = 0.0
        for c in reversed(_TAIL_COEFFS):
            acc = acc * w + c
        return norm_pdf(z) * w * acc
    return z * norm_cdf(z) + norm_pdf(z)


def log_norm_cdf(z: float) -> float:
    """``log Phi(z)`` without underflow in the left tail."""
    if z > 0.0:
        return math.log1p(-0.5 * math.erfc(z * _INV_SQRT2))
    if z > -37.0:
        return math.log(0.5 * math.erfc(-z * _INV_SQRT2))
    w = 1.0 / (z * z)
    series = 1.0 + w * (-1.0 + w * (3.0 + w * (-15.0 + w * 105.0)))
    return -0.5 * z * z - math.log(-z * SQRT_2PI) + math.log(series)


def argmax(values: Sequence[float]) -> int:
    """Index of the largest value; ties go to the smallest index."""
    best = 0
    top = values[0]
    for i in range(1, len(values)):
        if values[i] > top:
            top = values[i]
            best = i
    return best


def argmin(values: Sequence[float]) -> int:
    """Index of the smallest value; ties go to the smallest index."""
    best = 0
    low = values[0]
    for i in range(1, len(values)):
        if values[i] < low:
            low = values[i]
            best = i
    return best


@dataclass(frozen=True)
class ProblemInstance:
    """True means and standard deviations of ``k`` normal systems."""

    mu: tuple[float, ...]
    sigma: tuple[float, ...]

    def __init__(self, mu: Sequence[float], sigma: Sequence[float]):
        mu = tuple(float(m) for m in mu)
        sigma = tuple(float(s) for s in sigma)
        if len(mu) != len(sigma):
            raise ValueError(f"mu has {len(mu)} entries but sigma has {len(sigma)}")
        if len(mu) < 2:
            raise ValueError(f"need at least 2 systems, got {len(mu)}")
        if not all(math.isfinite(m) for m in mu):
            raise ValueError("means must be finite")
        if not all(math.isfinite(s) and s >= 0.0 for s in sigma):
            raise ValueError("standard deviations must be finite and nonnegative")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def k(self) -> int:
        return len(self.mu)

    @property
    def best(self) -> int:
        return argmax(self.mu)

    @property
    def variances(self) -> tuple[float, ...]:
        return tuple(s * s for s in self.sigma)


class RngStream:
    """Deterministic stream of standard-normal and uniform draws.

    Backed by numpy's PCG64. ``RngStream.substream(seed, *key)`` derives
    statistically independent streams through ``SeedSequence`` spawn keys, so
    per-replication streams never overlap.
    """

    def __init__(self, seed: int | np.random.SeedSequence = 0):
        if isinstance(seed, np.random.SeedSequence):
            seq = seed
        else:
            seq = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    @classmethod
    def substream(cls, seed: int, *key: int) -> "RngStream":
        seq = np.random.SeedSequence(
            int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(x) for x in key)
        )
        return cls(seq)

    def normal(self) -> float:
        return self._gen.standard_normal()

    def normals(self, n: int) -> np.ndarray:
        return self._gen.standard_normal(n)

    def uniform(self) -> float:
        return self._gen.random()


class PosteriorState:
    """Replication counts, running sums and sample means for ``k`` systems.

    ``update`` mutates in place; ``update_posterior`` is the copying variant.
    """

    __slots__ = ("counts", "sums", "means")

    def __init__(self, k: int):
        if k < 2:
            raise ValueError(f"need at least 2 systems, got {k}")
        self.counts = [0] * k
        self.sums = [0.0] * k
        self.means = [math.nan] * k

    @property
    def k(self) -> int:
        return len(self.counts)

    @property
    def t(self) -> int:
        return sum(self.counts)

    def copy(self) -> "PosteriorState":
        new = PosteriorState.__new__(PosteriorState)
        new.counts = list(self.counts)
        new.sums = list(self.sums)
        new.means = list(self.means)
        return new

    def update(self, i: int, y: float) -> None:
        if not 0 <= i < len(self.counts):
            raise IndexError(f"system index {i} out of range for k={len(self.counts)}")
        r = self.counts[i] + 1
        s = self.sums[i] + y
        self.counts[i] = r
        self.sums[i] = s
        self.means[i] = s / r

    def precisions(self, sigma: Sequence[float]) -> list[float]:
        return [r / (s * s) for r, s in zip(self.counts, sigma)]

    def require_initialized(self) -> None:
        if min(self.counts) < 1:
            missing = [i for i, r in enumerate(self.counts) if r < 1]
            raise ValueError(f"systems {missing} have no replications yet")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PosteriorState):
            return NotImplemented
        return self.counts == other.counts and self.sums == other.sums

    def __repr__(self) -> str:
        return f"PosteriorState(counts={self.counts}, means={self.means})"


def update_posterior(state: PosteriorState, i: int, y: float) -> PosteriorState:
    """Return a new state with observation ``y`` added to system ``i``."""
    if not math.isfinite(y):
        raise ValueError(f"observation must be finite, got {y}")
    new = state.copy()
    new.update(i, y)
    return new


def current_best(state: PosteriorState) -> int:
    """Sample-best system (largest sample mean, smallest index on ties)."""
    state.require_initialized()
    return argmax(state.means)


def sample_output(instance: ProblemInstance, i: int, rng: RngStream) -> float:
    """One replication of system ``i``: ``mu_i + sigma_i * Z``."""
    if not 0 <= i < instance.k:
        raise IndexError(f"system index {i} out of range for k={instance.k}")
    return instance.mu[i] + instance.sigma[i] * rng.normal()
