"""Command-line front end.

    rsbench run     --config slippage5.json --policy gcei --seed 42 --output out.csv
    rsbench solve   --config slippage --k 5
    rsbench solve   --means 0 1 --stds 1 1
    rsbench configs --k 5

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Optional, Sequence, TextIO

from .allocation import DEFAULT_TOL, SolverError, solve_gj
from .bench import (
    ConfigName,
    ExperimentSpec,
    MetricsSeries,
    default_r0,
    prescaled,
    run_experiment,
    scaling,
)
from .core import ProblemInstance
from .policies import Policy, PolicyKind

log = logging.getLogger("rsbench")

CSV_HEADER = ("policy", "t", "pics", "alloc_best_mean", "gap_mean", "gap_std")
CONFIG_KEYS = {"config", "k", "budget", "macroreps", "seed", "policies", "beta", "r0", "n0"}
DEFAULT_POLICIES = ("aomap", "mcei", "gcei", "ttts")
DEFAULT_K = 5
DEFAULT_MACROREPS = 1000


class UsageError(ValueError):
    """Invalid command-line or config-file input."""


@dataclass(frozen=True)
class RunConfig:
    spec: ExperimentSpec
    thin: int = 1
    output: Optional[Path] = None
    workers: Optional[int] = None


def fmt(x: float) -> str:
    """Locale-independent number with at most 10 significant digits."""
    return format(float(x), ".10g")


def _load_file(path: Path) -> dict:
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise UsageError(f"config: cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config: {path} is not valid JSON ({exc.msg})") from exc
    if not isinstance(data, dict):
        raise UsageError(f"config: {path} must contain a JSON object")
    unknown = sorted(set(data) - CONFIG_KEYS)
    if unknown:
        raise UsageError(f"config: unknown keys {unknown} in {path}")
    return data


def _config_source(value: Optional[str]) -> dict:
    """``--config`` takes either a JSON file or a configuration name."""
    if value is None:
        return {}
    path = Path(value)
    if path.suffix.lower() == ".json" or path.is_file():
        return _load_file(path)
    return {"config": value}


def _split_policies(values: Sequence[str] | str) -> list[str]:
    if isinstance(values, str):
        values = [values]
    names = []
    for v in values:
        names.extend(p for p in str(v).split(",") if p.strip())
    return names


def _as_int(field: str, value) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, str)):
        raise UsageError(f"{field}: expected an integer, got {value!r}")
    try:
        return int(value)
    except ValueError as exc:
        raise UsageError(f"{field}: expected an integer, got {value!r}") from exc


def parse_config(args: argparse.Namespace) -> RunConfig:
    """Merge the config file (if any) with command-line overrides and validate."""
    values = _config_source(args.config)
    for key in ("k", "budget", "macroreps", "seed", "beta", "r0", "n0"):
        override = getattr(args, key, None)
        if override is not None:
            values[key] = override
    if args.policy:
        values["policies"] = _split_policies(args.policy)

    if "config" not in values:
        raise UsageError("config: no configuration given (use --config NAME or a JSON file)")
    try:
        config = ConfigName.parse(str(values["config"]))
    except ValueError as exc:
        raise UsageError(f"config: {exc}") from exc

    k = _as_int("k", values.get("k", DEFAULT_K))
    if k < 2:
        raise UsageError(f"k: must be at least 2, got {k}")
    n0 = _as_int("n0", values.get("n0", 2))
    if n0 < 1:
        raise UsageError(f"n0: must be positive, got {n0}")
    budget = _as_int("budget", values.get("budget", 100 * k))
    if budget < n0 * k:
        raise UsageError(f"budget: {budget} is smaller than the warm start n0*k = {n0 * k}")
    macroreps = _as_int("macroreps", values.get("macroreps", DEFAULT_MACROREPS))
    if macroreps < 1:
        raise UsageError(f"macroreps: must be positive, got {macroreps}")
    seed = _as_int("seed", values.get("seed", 0))
    r0 = _as_int("r0", values.get("r0", default_r0(k)))
    if r0 < 1:
        raise UsageError(f"r0: must be positive, got {r0}")
    try:
        beta = float(values.get("beta", 0.5))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"beta: expected a number, got {values.get('beta')!r}") from exc
    if not 0.0 < beta < 1.0:
        raise UsageError(f"beta: must lie in (0, 1), got {beta}")

    names = _split_policies(values.get("policies", DEFAULT_POLICIES))
    if not names:
        raise UsageError("policies: at least one policy is required")
    kinds = []
    for name in names:
        try:
            kind = PolicyKind.parse(name)
        except ValueError as exc:
            raise UsageError(f"policies: {exc}") from exc
        if kind in kinds:
            raise UsageError(f"policies: {name!r} listed twice")
        kinds.append(kind)

    thin = getattr(args, "thin", 1)
    if thin < 1:
        raise UsageError(f"thin: must be positive, got {thin}")
    workers = getattr(args, "workers", None)
    if workers is not None and workers < 1:
        raise UsageError(f"workers: must be positive, got {workers}")

    spec = ExperimentSpec(
        config=config,
        k=k,
        budget=budget,
        n0=n0,
        macroreps=macroreps,
        seed=seed,
        policies=tuple(Policy(kind, beta=beta) for kind in kinds),
        r0=r0,
    )
    output = Path(args.output) if getattr(args, "output", None) else None
    return RunConfig(spec, thin, output, workers)


def csv_rows(series: Mapping[str, MetricsSeries], thin: int = 1) -> Iterator[list[str]]:
    for name in sorted(series):
        s = series[name]
        last = int(s.t[-1])
        for j, t in enumerate(s.t.tolist()):
            if t % thin and t != last:
                continue
            yield [
                name,
                str(t),
                fmt(s.pics[j]),
                fmt(s.alloc_best_mean[j]),
                fmt(s.gap_mean[j]),
                fmt(s.gap_std[j]),
            ]


def write_csv(series: Mapping[str, MetricsSeries], out: TextIO, thin: int = 1) -> None:
    if not series:
        raise ValueError("no metrics to write")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    writer.writerows(csv_rows(series, thin))


def emit_csv(series: Mapping[str, MetricsSeries], path: Path, thin: int = 1) -> None:
    """Write metrics to ``path`` (rows sorted by policy name, then ``t``)."""
    buf = io.StringIO()
    write_csv(series, buf, thin)
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


@contextmanager
def _usage_errors(parser: argparse.ArgumentParser):
    try:
        yield
    except UsageError as exc:
        parser.error(str(exc))


def cmd_run(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    with _usage_errors(parser):
        cfg = parse_config(args)
    spec = cfg.spec
    log.info(
        "running %s k=%d R=%d M=%d seed=%d policies=%s",
        spec.config.value,
        spec.k,
        spec.budget,
        spec.macroreps,
        spec.seed,
        ",".join(p.name for p in spec.policies),
    )
    series = run_experiment(spec, workers=cfg.workers)
    if cfg.output is None:
        write_csv(series, sys.stdout, cfg.thin)
    else:
        emit_csv(series, cfg.output, cfg.thin)
        log.info("wrote %s", cfg.output)
    return 0


def _solve_instance(args: argparse.Namespace) -> ProblemInstance:
    if args.means is not None or args.stds is not None:
        if args.means is None or args.stds is None:
            raise UsageError("solve: --means and --stds must be given together")
        if len(args.means) != len(args.stds):
            raise UsageError(
                f"solve: {len(args.means)} means but {len(args.stds)} standard deviations"
            )
        if len(args.means) < 2:
            raise UsageError("solve: need at least 2 systems")
        if min(args.stds) <= 0:
            raise UsageError("stds: standard deviations must be positive")
        return ProblemInstance(args.means, args.stds)
    if args.config is None:
        raise UsageError("solve: give --config NAME [--k K] or --means ... --stds ...")
    try:
        config = ConfigName.parse(args.config)
    except ValueError as exc:
        raise UsageError(f"config: {exc}") from exc
    k = args.k if args.k is not None else DEFAULT_K
    if k < 2:
        raise UsageError(f"k: must be at least 2, got {k}")
    m, sigma = prescaled(config, k)
    return ProblemInstance(m, sigma)


def cmd_solve(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    with _usage_errors(parser):
        instance = _solve_instance(args)
    try:
        report = solve_gj(instance, args.tol)
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = sys.stdout
    print("system,alpha", file=out)
    for i, a in enumerate(report.alpha):
        print(f"{i},{fmt(a)}", file=out)
    print(f"# rate {fmt(report.rate)}", file=out)
    print(f"# max_rate_gap {fmt(report.max_rate_gap)}", file=out)
    print(f"# balance_residual {fmt(report.balance_residual)}", file=out)
    print(f"# iterations {report.iterations}", file=out)
    if args.output:
        lines = ["system,alpha"] + [f"{i},{fmt(a)}" for i, a in enumerate(report.alpha)]
        Path(args.output).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def cmd_configs(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    k = args.k
    if k < 2:
        parser.error(f"k: must be at least 2, got {k}")
    r0 = args.r0 if args.r0 is not None else default_r0(k)
    print("config,system,m,sigma,c")
    for config in ConfigName:
        m, sigma = prescaled(config, k)
        c = scaling(config, k, r0)
        for i, (mi, si) in enumerate(zip(m, sigma)):
            print(f"{config.value},{i},{fmt(mi)},{fmt(si)},{fmt(c)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rsbench", description="Ranking-and-selection allocation policies and benchmarks."
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a benchmark experiment and write CSV metrics")
    run.add_argument("--config", help="JSON config file or configuration name")
    run.add_argument("--policy", action="append", help="policy name (repeatable or comma-separated)")
    run.add_argument("--k", type=int)
    run.add_argument("--budget", type=int, help="total replications R (default 100k)")
    run.add_argument("--macroreps", type=int, help=f"macro-replications M (default {DEFAULT_MACROREPS})")
    run.add_argument("--seed", type=int)
    run.add_argument("--beta", type=float, help="TTTS leader probability (default 0.5)")
    run.add_argument("--r0", type=int, help="replications used to scale means (default 20k)")
    run.add_argument("--n0", type=int, help="warm-start replications per system (default 2)")
    run.add_argument("--thin", type=int, default=1, help="keep rows with t divisible by this")
    run.add_argument("--output", "-o", help="CSV output path (default stdout)")
    run.add_argument("--workers", type=int, help="worker processes (default $RSBENCH_THREADS or 1)")
    run.set_defaults(func=cmd_run)

    solve = sub.add_parser("solve", help="solve for the rate-optimal static allocation")
    solve.add_argument("--config", help="configuration name (prescaled means)")
    solve.add_argument("--k", type=int)
    solve.add_argument("--means", type=float, nargs="+")
    solve.add_argument("--stds", type=float, nargs="+")
    solve.add_argument("--tol", type=float, default=DEFAULT_TOL)
    solve.add_argument("--output", "-o", help="optional CSV file for the allocation")
    solve.set_defaults(func=cmd_solve)

    configs = sub.add_parser("configs", help="list the experiment configurations")
    configs.add_argument("--k", type=int, default=DEFAULT_K)
    configs.add_argument("--r0", type=int)
    configs.set_defaults(func=cmd_configs)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args, parser)
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
