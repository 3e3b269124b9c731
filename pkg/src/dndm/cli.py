"""``dndm`` command line: schedules, forward simulation, sampling, NFE analysis
and the self-check battery.

Exit status is 0 on success, 1 on invalid input (including bad flags) and 2
when ``verify`` finds a failing check. Every CSV starts with a header row and
every JSONL record carries a ``schema`` field. Output paths are checked before
any work starts.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from .analytics import expected_nfe, monte_carlo_nfe
from .core import NoiseModel, ValidationError
from .datamodel import DataModelError
from .forward import simulate_forward_batch
from .runner import SampleJob, parse_steps, parse_tau, run_job
from .sampler import SAMPLERS
from .schedule import (
    DEFAULT_COSINE_OFFSET,
    SCHEDULES,
    DiscreteTransitionDist,
    beta_transition_distribution,
    build_schedule,
    schedule_from_transition,
    transition_distribution,
)
from .verify import CHECKS, DEFAULT_SEED, DEFAULT_TRIALS, VerifyConfig, verify_suite

EXIT_OK, EXIT_INVALID, EXIT_CHECK_FAILED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Reports bad flags as exit status 1 with usage on stderr."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(v) -> str:
    # shortest round-trip text, stable across runs
    return repr(float(v))


def _check_output_path(path: str | None):
    if path in (None, "-"):
        return
    p = Path(path)
    if p.is_dir():
        raise UsageError(f"output path {path!r} is a directory")
    parent = p.parent if str(p.parent) else Path(".")
    if not parent.is_dir():
        raise UsageError(f"directory for output {path!r} does not exist")
    if not os.access(parent, os.W_OK) or (p.exists() and not os.access(p, os.W_OK)):
        raise UsageError(f"output path {path!r} is not writable")


def _emit(text: str, path: str | None):
    if path in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(path).write_text(text, encoding="utf-8", newline="\n")


def _int_list(text: str, what: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{what} must be comma-separated integers, got {text!r}") from None
    if not vals:
        raise UsageError(f"{what} is empty")
    return vals


def _noise(kind: str, K: int) -> NoiseModel:
    return NoiseModel.absorbing(K) if kind == "absorbing" else NoiseModel.uniform(K)


# ---------------------------------------------------------------------------
# normalisation for golden comparisons
# ---------------------------------------------------------------------------


def normalize_jsonl(text: str) -> str:
    """Zero ``wall_ns`` in every record and re-serialise canonically."""
    out = []
    for line in text.splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if "wall_ns" in rec:
            rec["wall_ns"] = 0
        out.append(_dumps(rec))
    return "\n".join(out) + ("\n" if out else "")


def normalize_summary(text: str) -> str:
    """Zero the ``wall_ns`` column of a sampling summary CSV."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return ""
    header = rows[0]
    if "wall_ns" in header:
        col = header.index("wall_ns")
        for r in rows[1:]:
            r[col] = "0"
    return _csv_text(header, rows[1:])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_schedules(args) -> int:
    T = parse_steps(args.steps)
    if T is None:
        raise UsageError("schedules needs a finite --steps")
    beta = parse_tau(args.tau)
    if beta is None:
        schedule = build_schedule(args.schedule, T, args.offset)
        dist = transition_distribution(schedule)
    else:
        dist = beta_transition_distribution(*beta, T)
        schedule = schedule_from_transition(dist)
    rows = [(t, _num(schedule.alphas[t]), _num(dist.probs[t - 1])) for t in range(1, T + 1)]
    _emit(_csv_text(("t", "alpha", "p_tau"), rows), args.output)
    return EXIT_OK


def cmd_simulate_forward(args) -> int:
    T = parse_steps(args.steps)
    if T is None:
        raise UsageError("simulate-forward needs a finite --steps")
    if args.trials < 0:
        raise UsageError("--trials must be >= 0")
    schedule = build_schedule(args.schedule, T, args.offset)
    x0 = np.array(_int_list(args.x0, "--x0"), dtype=np.int64)
    K = args.vocab if args.vocab is not None else int(x0.max()) + 1
    noise = _noise(args.noise, K)
    times = _int_list(args.times, "--times") if args.times else list(range(T + 1))
    states, tau = simulate_forward_batch(args.process, x0, schedule, noise, args.seed,
                                         args.trials, times)
    lines = []
    for m in range(args.trials):
        lines.append(_dumps({
            "schema": "dndm.forward/1",
            "process": args.process,
            "trial": m,
            "t": [int(t) for t in times],
            "tokens": states[m].tolist(),
            "tau": None if tau is None else tau[m].tolist(),
        }))
    _emit("".join(line + "\n" for line in lines), args.output)
    return EXIT_OK


def cmd_sample(args) -> int:
    _check_output_path(args.summary)
    steps = parse_steps(args.steps)
    try:
        model_text = Path(args.model).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read model file {args.model!r}: {exc.strerror}") from None
    job = SampleJob(args.sampler, model_text, steps=steps, schedule=args.schedule, tau=args.tau,
                    noise=args.noise, decode=args.decode, joint=args.joint, order=args.order,
                    offset=args.offset, record_x0=args.record_x0)
    traces = run_job(job, args.runs, args.seed, args.parallelism)
    summary = _csv_text(
        ("run", "nfe", "final_tokens", "wall_ns"),
        [(r, t.nfe, " ".join(str(int(v)) for v in t.final), t.wall_ns) for r, t in enumerate(traces)],
    )
    if args.format == "csv":
        _emit(summary, args.output)
    else:
        _emit("".join(_dumps(t.to_record(r)) + "\n" for r, t in enumerate(traces)), args.output)
    if args.summary:
        _emit(summary, args.summary)
    return EXIT_OK


def _analysis_dist(name: str, T: int):
    beta = parse_tau(name) if name.startswith("beta:") else None
    if beta is not None:
        return beta_transition_distribution(*beta, T)
    if name == "uniform":
        return DiscreteTransitionDist(np.full(T, 1.0 / T), "uniform")
    if name in SCHEDULES or name == "cosine_squared":
        return transition_distribution(build_schedule(name, T))
    raise UsageError(f"unknown --dist {name!r}; use uniform, beta:a,b or a schedule name")


def cmd_nfe_analysis(args) -> int:
    Ts = _int_list(args.steps, "--steps")
    Ns = _int_list(args.N, "--N")
    dists = args.dist or ["uniform", "beta:3,3"]
    if min(Ts) < 1 or min(Ns) < 1:
        raise UsageError("--steps and --N values must be >= 1")
    if args.trials < 0:
        raise UsageError("--trials must be >= 0")
    rows, k = [], 0
    for T in Ts:
        for N in Ns:
            for name in dists:
                dist = _analysis_dist(name, T)
                if args.trials > 0:
                    rep = monte_carlo_nfe(dist, N, args.trials, args.seed + k)
                    mc = (_num(rep.empirical_mean), _num(rep.stderr) if args.trials > 1 else "")
                else:
                    rep = expected_nfe(dist, N)
                    mc = ("", "")
                k += 1
                rows.append((T, N, name, _num(rep.expected_nfe), _num(rep.c_constant), *mc))
    header = ("T", "N", "dist", "expected_nfe", "c_constant", "empirical_mean", "stderr")
    _emit(_csv_text(header, rows), args.output)
    return EXIT_OK


def cmd_verify(args) -> int:
    checks = tuple(_int_list(args.checks, "--checks")) if args.checks else None
    if checks and any(c not in CHECKS for c in checks):
        raise UsageError(f"--checks must be drawn from 1..{len(CHECKS)}")
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    cfg = VerifyConfig(trials=args.trials, seed=args.seed, parallelism=args.parallelism,
                       corrupt_pmf=args.corrupt_pmf, checks=checks)
    report = verify_suite(cfg)
    if args.format == "json":
        _emit(report.to_json() + "\n", args.output)
    else:
        sys.stdout.write(report.to_table() + "\n")
        if args.output:
            _emit(report.to_json() + "\n", args.output)
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED,
                        help=f"base seed (default {DEFAULT_SEED})")
    common.add_argument("--output", "-o", help="output file (default: stdout)")
    common.add_argument("--parallelism", "-j", type=int, default=1,
                        help="worker processes for batched runs")

    sched = argparse.ArgumentParser(add_help=False)
    sched.add_argument("--schedule", choices=("linear", "cosine", "cosine2"), default="linear")
    sched.add_argument("--steps", default="50", help="number of steps T, or 'inf'")
    sched.add_argument("--offset", type=float, default=DEFAULT_COSINE_OFFSET,
                       help="cosine schedule offset s")

    parser = _Parser(prog="dndm", description="Discrete non-Markov diffusion toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("schedules", parents=[common, sched], help="dump alpha_t and p_tau as CSV")
    p.add_argument("--tau", default="schedule", help="'schedule' or 'beta:a,b'")
    p.set_defaults(func=cmd_schedules, format="csv")

    p = sub.add_parser("simulate-forward", parents=[common, sched],
                       help="simulate the forward process (JSONL)")
    p.add_argument("--process", choices=("markov", "nonmarkov"), default="nonmarkov")
    p.add_argument("--noise", choices=("absorbing", "uniform"), default="absorbing")
    p.add_argument("--x0", required=True, help="clean sequence, e.g. 0,2,4")
    p.add_argument("--vocab", type=int, help="vocabulary size K (default: max token + 1)")
    p.add_argument("--times", help="comma-separated times to record (default: all)")
    p.add_argument("--trials", type=int, default=1)
    p.set_defaults(func=cmd_simulate_forward, format="jsonl")

    p = sub.add_parser("sample", parents=[common, sched], help="run a reverse sampler")
    p.add_argument("--sampler", choices=SAMPLERS, required=True)
    p.add_argument("--tau", default="schedule", help="'schedule' or 'beta:a,b'")
    p.add_argument("--model", required=True, help="data model file")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--decode", choices=("sample", "argmax"), default="sample")
    p.add_argument("--noise", choices=("absorbing", "uniform"),
                   help="default: uniform for baseline-multi, absorbing otherwise")
    p.add_argument("--joint", action="store_true", help="joint (not per-position) oracle")
    p.add_argument("--order", choices=("none", "left-to-right", "right-to-left"), default="none")
    p.add_argument("--record-x0", action="store_true", help="keep predictions in traces")
    p.add_argument("--summary", help="also write the CSV summary here")
    p.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("nfe-analysis", parents=[common], help="expected vs simulated NFE (CSV)")
    p.add_argument("--steps", default="4,50,1000", help="comma-separated T values")
    p.add_argument("--N", default="2,25", help="comma-separated sequence lengths")
    p.add_argument("--dist", action="append",
                   help="uniform, beta:a,b, or a schedule name (repeatable)")
    p.add_argument("--trials", type=int, default=DEFAULT_TRIALS)
    p.set_defaults(func=cmd_nfe_analysis, format="csv")

    p = sub.add_parser("verify", parents=[common], help="run the self-check battery")
    p.add_argument("--trials", type=int, default=DEFAULT_TRIALS)
    p.add_argument("--checks", help="comma-separated check numbers (default: all)")
    p.add_argument("--corrupt-pmf", action="store_true", help=argparse.SUPPRESS)
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.parallelism < 1:
            raise UsageError("--parallelism must be >= 1")
        _check_output_path(args.output)
        return args.func(args)
    except (UsageError, ValidationError, DataModelError) as exc:
        print(f"dndm: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
