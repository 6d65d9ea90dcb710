"""Benchmark harness: experiment configurations, macro-replications, metrics.

Each macro-replication warm-starts every system with ``n0`` replications in
round-robin order and then lets the policy spend the rest of the budget ``R``
(the warm start counts against the budget). Metrics are recorded for every
``t`` from ``n0*k`` to ``R``:

* ``pics``: fraction of macro-replications whose sample best at ``t`` is wrong,
* ``alloc_best_mean``: average of ``r_best(t) / t``,
* ``gap_mean`` / ``gap_std``: mean and standard deviation (divisor ``M-1``) of
  ``mu_best - mu_{sample best at t}``.

Per-replication results are reduced into integer tables (how often each system
was the sample best at each ``t``; summed ``r_best(t)``), so the aggregated
metrics are bit-identical for any chunking or number of worker processes.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from .allocation import scale_constant, solve_gj
from .core import PosteriorState, ProblemInstance, RngStream, argmax
from .policies import POLICY_STREAM_ID, Policy, PolicyKind

THREADS_ENV = "RSBENCH_THREADS"


class ConfigName(str, Enum):
    SLIPPAGE = "slippage"
    ASCENDING_MEAN = "ascending_mean"
    ASCENDING_VARIANCE = "ascending_variance"
    DESCENDING_VARIANCE = "descending_variance"

    @classmethod
    def parse(cls, name: str) -> "ConfigName":
        key = name.strip().lower().replace("-", "_").replace(" ", "_")
        for c in cls:
            if c.value == key:
                return c
        valid = ", ".join(c.value for c in cls)
        raise ValueError(f"unknown configuration {name!r} (expected one of: {valid})")


def prescaled(config: ConfigName, k: int) -> tuple[list[float], list[float]]:
    """Prescaled means and true standard deviations for ``k`` systems.

    Systems are numbered ``1..k`` in the formulas and stored 0-based; the best
    system is always the last one.
    """
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    idx = range(1, k + 1)
    if config is ConfigName.SLIPPAGE:
        return [-1.0] * (k - 1) + [0.0], [1.0] * k
    if config is ConfigName.ASCENDING_MEAN:
        return [math.log(i) for i in idx], [1.0] * k
    m = [math.log(i + 1) for i in idx]
    if config is ConfigName.ASCENDING_VARIANCE:
        return m, [math.sqrt(x) for x in m]
    if config is ConfigName.DESCENDING_VARIANCE:
        return m, [1.0 / math.sqrt(x) for x in m]
    raise ValueError(f"unhandled configuration {config!r}")


def default_r0(k: int) -> int:
    return 20 * k


def default_budget(k: int) -> int:
    return 100 * k


def scaling(config: ConfigName, k: int, r0: Optional[int] = None) -> float:
    """Mean scaling constant ``c`` for a configuration."""
    m, sigma = prescaled(config, k)
    alpha = solve_gj(ProblemInstance(m, sigma)).alpha
    return scale_constant(m, sigma, default_r0(k) if r0 is None else r0, alpha)


def build_instance(config: ConfigName, k: int, r0: Optional[int] = None) -> ProblemInstance:
    """Scaled problem instance ``mu_i = c * m_i`` with unscaled standard deviations."""
    m, sigma = prescaled(config, k)
    c = scaling(config, k, r0)
    return ProblemInstance([c * x for x in m], sigma)


# ---------------------------------------------------------------------------
# Single macro-replication
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    """One macro-replication.

    ``chosen[tau]`` is the system simulated at iteration ``tau`` (0-based), and
    ``sample_best[j]`` the sample best after ``t = start + j`` replications.
    """

    chosen: np.ndarray
    sample_best: np.ndarray
    start: int

    @property
    def budget(self) -> int:
        return len(self.chosen)

    def counts_at(self, t: int, k: int) -> np.ndarray:
        return np.bincount(self.chosen[:t], minlength=k)

    def best_at(self, t: int) -> int:
        return int(self.sample_best[t - self.start])


def run_replication(
    instance: ProblemInstance, policy: Policy, budget: int, n0: int, rng: RngStream
) -> Trajectory:
    """Warm start round-robin, then follow ``policy`` until ``budget`` replications."""
    k = instance.k
    start = n0 * k
    if n0 < 1:
        raise ValueError(f"n0 must be positive, got {n0}")
    if budget < start:
        raise ValueError(f"budget {budget} is smaller than the warm start {start}")
    mu, sigma = instance.mu, instance.sigma
    normal = rng.normal
    state = PosteriorState(k)
    update = state.update
    means = state.means
    chosen = [0] * budget
    best_seq = [0] * (budget - start + 1)

    t = 0
    for _ in range(n0):
        for i in range(k):
            update(i, mu[i] + sigma[i] * normal())
            chosen[t] = i
            t += 1
    best_seq[0] = argmax(means)

    choose = policy.choose
    while t < budget:
        try:
            i = choose(state, sigma, rng).chosen
        except Exception as exc:
            raise RuntimeError(f"policy {policy.name} failed at iteration t={t}: {exc}") from exc
        update(i, mu[i] + sigma[i] * normal())
        chosen[t] = i
        t += 1
        best_seq[t - start] = argmax(means)

    return Trajectory(np.asarray(chosen, dtype=np.int32), np.asarray(best_seq, dtype=np.int32), start)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    config: ConfigName
    k: int
    budget: Optional[int] = None
    n0: int = 2
    macroreps: int = 1000
    seed: int = 0
    policies: tuple[Policy, ...] = field(
        default_factory=lambda: tuple(
            Policy(kind)
            for kind in (PolicyKind.AOMAP, PolicyKind.MCEI, PolicyKind.GCEI, PolicyKind.TTTS)
        )
    )
    r0: Optional[int] = None

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"k must be at least 2, got {self.k}")
        if self.n0 < 1:
            raise ValueError(f"n0 must be positive, got {self.n0}")
        if self.budget is None:
            object.__setattr__(self, "budget", default_budget(self.k))
        if self.r0 is None:
            object.__setattr__(self, "r0", default_r0(self.k))
        if self.budget < self.n0 * self.k:
            raise ValueError(
                f"budget {self.budget} is smaller than the warm start n0*k = {self.n0 * self.k}"
            )
        if self.macroreps < 1:
            raise ValueError(f"macroreps must be positive, got {self.macroreps}")
        if self.r0 < 1:
            raise ValueError(f"r0 must be positive, got {self.r0}")
        if not self.policies:
            raise ValueError("at least one policy is required")
        names = [p.name for p in self.policies]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate policies in {names}")

    @property
    def start(self) -> int:
        return self.n0 * self.k

    def instance(self) -> ProblemInstance:
        return build_instance(self.config, self.k, self.r0)


@dataclass
class MetricsSeries:
    policy: str
    t: np.ndarray
    pics: np.ndarray
    alloc_best_mean: np.ndarray
    gap_mean: np.ndarray
    gap_std: np.ndarray

    def at(self, t: int) -> tuple[float, float, float, float]:
        j = t - int(self.t[0])
        return (
            float(self.pics[j]),
            float(self.alloc_best_mean[j]),
            float(self.gap_mean[j]),
            float(self.gap_std[j]),
        )


def summarize(
    trajectories: Sequence[Trajectory], instance: ProblemInstance, t: int
) -> tuple[float, float, float, float]:
    """``(pics, alloc_best_mean, gap_mean, gap_std)`` at iteration ``t`` from raw trajectories."""
    m = len(trajectories)
    if m == 0:
        raise ValueError("no trajectories to summarize")
    b = instance.best
    picks = [tr.best_at(t) for tr in trajectories]
    alloc = [int(np.count_nonzero(tr.chosen[:t] == b)) / t for tr in trajectories]
    gaps = [instance.mu[b] - instance.mu[j] for j in picks]
    pics = sum(j != b for j in picks) / m
    gap_mean = math.fsum(gaps) / m
    gap_std = math.sqrt(math.fsum((g - gap_mean) ** 2 for g in gaps) / (m - 1)) if m > 1 else 0.0
    return pics, math.fsum(alloc) / m, gap_mean, gap_std


def rep_stream(seed: int, policy: Policy, rep: int) -> RngStream:
    return RngStream.substream(seed, POLICY_STREAM_ID[policy.kind], rep)


def _tally(
    instance: ProblemInstance, policy: Policy, budget: int, n0: int, seed: int, reps: Iterable[int]
) -> tuple[np.ndarray, np.ndarray]:
    """Integer tallies over the given replications.

    Returns ``picked[j, i]`` (replications whose sample best at ``t = n0*k + j``
    is system ``i``) and ``best_count[j]`` (sum over replications of ``r_best``).
    """
    k = instance.k
    b = instance.best
    start = n0 * k
    n = budget - start + 1
    picked = np.zeros((n, k), dtype=np.int64)
    best_count = np.zeros(n, dtype=np.int64)
    rows = np.arange(n)
    for rep in reps:
        traj = run_replication(instance, policy, budget, n0, rep_stream(seed, policy, rep))
        picked[rows, traj.sample_best] += 1
        best_count += np.cumsum(traj.chosen == b)[start - 1 :]
    return picked, best_count


def _tally_job(args):
    return _tally(*args)


def metrics_from_tally(
    policy: str,
    instance: ProblemInstance,
    start: int,
    macroreps: int,
    picked: np.ndarray,
    best_count: np.ndarray,
) -> MetricsSeries:
    b = instance.best
    m = macroreps
    mu = np.asarray(instance.mu)
    gaps = mu[b] - mu
    t = np.arange(start, start + len(best_count))
    wrong = m - picked[:, b]
    gap_mean = (picked * gaps).sum(axis=1) / m
    if m > 1:
        dev2 = (gaps[None, :] - gap_mean[:, None]) ** 2
        gap_std = np.sqrt((picked * dev2).sum(axis=1) / (m - 1))
    else:
        gap_std = np.zeros(len(t))
    return MetricsSeries(
        policy=policy,
        t=t,
        pics=wrong / m,
        alloc_best_mean=best_count / (m * t),
        gap_mean=gap_mean,
        gap_std=gap_std,
    )


def resolve_workers(workers: Optional[int] = None) -> int:
    """Worker count: explicit argument, else ``RSBENCH_THREADS``, else 1."""
    if workers is None:
        env = os.environ.get(THREADS_ENV)
        workers = int(env) if env else 1
    if workers < 1:
        raise ValueError(f"worker count must be positive, got {workers}")
    return workers


def _chunks(n: int, parts: int) -> list[range]:
    size = -(-n // parts)
    return [range(lo, min(lo + size, n)) for lo in range(0, n, size)]


def run_policy(
    spec: ExperimentSpec,
    policy: Policy,
    instance: Optional[ProblemInstance] = None,
    workers: Optional[int] = None,
) -> MetricsSeries:
    instance = spec.instance() if instance is None else instance
    if policy.kind is PolicyKind.STATIC_ORACLE and policy.alpha is None:
        policy = replace(policy, alpha=solve_gj(instance).alpha)
    workers = resolve_workers(workers)
    args = (instance, policy, spec.budget, spec.n0, spec.seed)
    if workers == 1 or spec.macroreps == 1:
        picked, best_count = _tally(*args, range(spec.macroreps))
    else:
        jobs = [args + (chunk,) for chunk in _chunks(spec.macroreps, workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_tally_job, jobs))
        picked = sum(p for p, _ in parts)
        best_count = sum(c for _, c in parts)
    return metrics_from_tally(policy.name, instance, spec.start, spec.macroreps, picked, best_count)


def run_experiment(spec: ExperimentSpec, workers: Optional[int] = None) -> dict[str, MetricsSeries]:
    """Run every policy of ``spec``; results keyed by policy name."""
    instance = spec.instance()
    return {p.name: run_policy(spec, p, instance, workers) for p in spec.policies}
