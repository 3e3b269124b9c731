"""Self-check battery: forward equivalence, transition-time law, NFE formula and
bounds, copy-step freedom, sampler exactness, the Bayes oracle and the
multinomial kernel, NFE reduction, and CLI determinism.

Every check is deterministic given ``VerifyConfig.seed`` and reports what it
measured next to the tolerance it was held to. Failures are recorded in the
report, never raised.
"""
from __future__ import annotations

import io
import itertools
import json
import math
import tempfile
import time
import traceback
from contextlib import redirect_stderr, redirect_stdout
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .analytics import (
    DEFAULT_SIGNIFICANCE,
    chi_square_gof,
    empirical_distribution,
    expected_nfe,
    monte_carlo_nfe,
    tv_distance,
)
from .core import NoiseModel, RngStream
from .datamodel import (
    OracleDenoiser,
    RecordingDenoiser,
    ToyDataModel,
    exact_posterior,
    teacher_denoiser,
)
from .forward import marginal_at, simulate_forward_batch
from .runner import SampleJob, run_job
from .sampler import (
    baseline_multinomial_sample,
    dndm_continuous_sample,
    dndm_sample,
    dndm_topk_sample,
    dndm_v2_sample,
    multinomial_posterior,
)
from .schedule import (
    DiscreteTransitionDist,
    beta_transition_distribution,
    build_cosine,
    build_cosine_squared,
    build_linear,
    continuous_linear,
    transition_distribution,
)

DEFAULT_SEED = 7
DEFAULT_TRIALS = 100_000
# wall-clock budget of each check at full power, single process
BUDGET_S = {1: 30, 2: 10, 3: 60, 4: 30, 5: 10, 6: 60, 7: 60, 8: 1, 9: 1, 10: 5, 11: 10}

# chain used by the exactness checks: K=3 first-order Markov data
CHAIN_INITIAL = (0.5, 0.3, 0.2)
CHAIN_TRANSITION = ((0.1, 0.6, 0.3), (0.3, 0.3, 0.4), (0.8, 0.1, 0.1))
SINGLE_TOKEN_PROBS = (0.1, 0.2, 0.3, 0.4)


@dataclass
class VerifyConfig:
    """``trials`` is the base Monte Carlo size (1e5 gives full power); checks
    that need more or fewer draws scale it. ``corrupt_pmf`` perturbs the
    reference transition-time pmf so the schedule checks must fail."""

    trials: int = DEFAULT_TRIALS
    seed: int = DEFAULT_SEED
    parallelism: int = 1
    corrupt_pmf: bool = False
    checks: tuple[int, ...] | None = None
    significance: float = DEFAULT_SIGNIFICANCE

    @property
    def reduced_power(self) -> bool:
        return self.trials < DEFAULT_TRIALS


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    measured: dict
    tolerance: str
    trials: int
    elapsed_s: float = 0.0
    error: str | None = None
    budget_s: float | None = None

    @property
    def within_budget(self) -> bool:
        return self.budget_s is None or self.elapsed_s < self.budget_s


@dataclass
class VerifyReport:
    seed: int
    trials: int
    reduced_power: bool
    backend: str
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "schema": "dndm.verify/1",
            "seed": self.seed,
            "trials": self.trials,
            "reduced_power": self.reduced_power,
            "backend": self.backend,
            "passed": self.passed,
            "checks": [_jsonable(asdict(c)) for c in self.checks],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        rows = [("#", "check", "status", "measured", "tolerance", "time")]
        for c in self.checks:
            meas = ", ".join(f"{k}={_fmt(v)}" for k, v in c.measured.items() if not isinstance(v, (list, dict)))
            rows.append((str(c.number), c.name, "PASS" if c.passed else "FAIL",
                         meas if c.error is None else f"error: {c.error}", c.tolerance,
                         f"{c.elapsed_s:.1f}s / {c.budget_s:g}s" if c.budget_s else f"{c.elapsed_s:.1f}s"))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        tail = f"{sum(c.passed for c in self.checks)}/{len(self.checks)} passed"
        if self.reduced_power:
            tail += f" (reduced statistical power: {self.trials} trials < {DEFAULT_TRIALS})"
        return "\n".join(lines + [tail])


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def chain_model() -> ToyDataModel:
    return ToyDataModel.chain(3, 2, CHAIN_INITIAL, CHAIN_TRANSITION)


def single_token_model() -> ToyDataModel:
    return ToyDataModel.factorized(len(SINGLE_TOKEN_PROBS), [SINGLE_TOKEN_PROBS])


# ---------------------------------------------------------------------------
# individual checks; each returns (passed, measured, tolerance, trials)
# ---------------------------------------------------------------------------


def check_forward_equivalence(cfg: VerifyConfig):
    K, T, times = 5, 50, (10, 25, 40)
    x0 = np.array([0, 2, 4])
    schedule = build_linear(T)
    worst, per = 0.0, {}
    for kind, noise in (("absorbing", NoiseModel.absorbing(K)), ("uniform", NoiseModel.uniform(K))):
        S = noise.vocab.num_states
        for proc_i, process in enumerate(("markov", "nonmarkov")):
            states, _ = simulate_forward_batch(process, x0, schedule, noise, cfg.seed + proc_i,
                                               cfg.trials, times)
            for r, t in enumerate(times):
                for n in range(x0.shape[0]):
                    emp = np.bincount(states[:, r, n], minlength=S) / cfg.trials
                    tv = tv_distance(emp, marginal_at(int(x0[n]), t, schedule, noise).probs)
                    worst = max(worst, tv)
                    key = f"{kind}/{process}/t={t}"
                    per[key] = max(per.get(key, 0.0), tv)
    return worst < 0.01, {"max_tv": worst, "per_case": per}, "TV < 0.01", cfg.trials


def check_transition_law(cfg: VerifyConfig):
    T = 50
    worst_p, pmf_errors, results = 1.0, 0.0, {}
    for i, schedule in enumerate((build_linear(T), build_cosine(T), build_cosine_squared(T))):
        a = schedule.alphas
        reference = a[:-1] - a[1:]
        if cfg.corrupt_pmf:
            reference = reference.copy()
            reference[0] *= 1.5
        pmf_errors = max(pmf_errors, abs(reference.sum() - 1.0))
        # draw through the sampler's own law: stream trial << 32, counter 0
        streams = np.arange(cfg.trials, dtype=np.uint64) << np.uint64(32)
        dist = transition_distribution(schedule)
        tau = kernels.transition_batch(dist.cdf_table(), cfg.seed + i, streams, 1)[:, 0]
        counts = np.bincount(tau, minlength=T + 1)[1:]
        gof = chi_square_gof(counts, np.clip(reference, 0.0, None), cfg.significance)
        # the chi-square test renormalises, so mass errors are checked separately
        ok = gof.passed and abs(reference.sum() - 1.0) <= 1e-9
        results[schedule.name] = {"statistic": gof.statistic, "p_value": gof.p_value,
                                  "dof": gof.dof, "passed": ok}
        worst_p = min(worst_p, gof.p_value)
    passed = all(r["passed"] for r in results.values())
    return (passed, {"min_p_value": worst_p, "pmf_mass_error": pmf_errors, "per_schedule": results},
            f"p >= {cfg.significance:g} and pmf sums to 1", cfg.trials)


def _uniform_dist(T: int) -> DiscreteTransitionDist:
    return DiscreteTransitionDist(np.full(T, 1.0 / T), f"uniform(T={T})")


def check_nfe_formula(cfg: VerifyConfig):
    worst_z, cases = 0.0, {}
    k = 0
    for T in (4, 50, 1000):
        for N in (2, 25):
            for label, dist in (("uniform", _uniform_dist(T)),
                                ("beta(3,3)", beta_transition_distribution(3, 3, T))):
                rep = monte_carlo_nfe(dist, N, cfg.trials, cfg.seed + k)
                k += 1
                z = 0.0 if rep.stderr == 0 else rep.z_score()
                worst_z = max(worst_z, abs(z))
                cases[f"T={T},N={N},{label}"] = {"expected": rep.expected_nfe,
                                                 "mc_mean": rep.empirical_mean, "z": z}
    # exhaustive enumeration: 16 ordered pairs of times for T=4, N=2
    enum = sum(len({a, b}) for a, b in itertools.product(range(1, 5), repeat=2)) / 16.0
    formula = expected_nfe(_uniform_dist(4), 2).expected_nfe
    enum_err = abs(enum - formula)
    passed = worst_z <= 3.0 and enum_err <= 1e-12 and enum == 1.75
    return (passed, {"max_abs_z": worst_z, "enumerated": enum, "formula": formula,
                     "enumeration_error": enum_err, "cases": cases},
            "|z| <= 3; enumeration 1.75 to 1e-12", cfg.trials)


def check_nfe_bounds(cfg: VerifyConfig):
    total = 10 * cfg.trials
    configs = [
        (4, 4, _uniform_dist(4)),
        (50, 25, beta_transition_distribution(3, 3, 50)),
        (1000, 2, _uniform_dist(1000)),
        (10, 100, transition_distribution(build_cosine(10))),
        (1000, 25, beta_transition_distribution(3, 3, 1000)),
    ]
    per = total // len(configs)
    violations, drawn = 0, 0
    for i, (T, N, dist) in enumerate(configs):
        streams = np.arange(per, dtype=np.uint64) << np.uint64(32)
        counts = kernels.distinct_counts(dist.cdf_table(), cfg.seed + i, streams, N)
        violations += int(np.count_nonzero((counts < 1) | (counts > min(N, T))))
        drawn += per
    rep = expected_nfe(_uniform_dist(4), 4)
    exact_ok = abs(rep.expected_nfe - 2.734375) <= 1e-12 and abs(rep.c_constant - 0.31640625) <= 1e-12
    passed = violations == 0 and exact_ok and rep.expected_nfe <= 0.7 * 4
    return (passed, {"draws": drawn, "violations": violations, "uniform_T4_N4": rep.expected_nfe,
                     "c_constant": rep.c_constant},
            "1 <= |T| <= min(N,T); E = 2.734375 <= 2.8", drawn)


def check_copy_steps(cfg: VerifyConfig):
    runs = max(1, cfg.trials // 10)
    K, N = 3, 3
    model = ToyDataModel.factorized(K, [[0.2, 0.5, 0.3], [0.6, 0.2, 0.2], [0.1, 0.1, 0.8]])
    noise = NoiseModel.absorbing(K)
    discrete, continuous = build_linear(50), continuous_linear()
    offenders, per = 0, {}
    for name, fn, schedule in (("dndm", dndm_sample, discrete), ("dndm-v2", dndm_v2_sample, discrete),
                               ("dndm-topk", dndm_topk_sample, discrete),
                               ("dndm-c", dndm_continuous_sample, continuous)):
        rec = RecordingDenoiser(OracleDenoiser(model, schedule, noise))
        bad = 0
        for r in range(runs):
            rec.calls.clear()
            trace = fn(rec, schedule, noise, N, RngStream.for_trial(cfg.seed, r))
            expected = sorted(set(trace.transition_times.tolist()), reverse=True)
            calls = [float(c) for c in rec.calls]
            if calls != expected or trace.nfe != len(calls):
                bad += 1
        per[name] = bad
        offenders += bad
    return offenders == 0, {"runs_per_sampler": runs, "bad_runs": per}, "0 off-transition calls", runs


def _sampler_tv(cfg: VerifyConfig, job: SampleJob, model: ToyDataModel, runs: int) -> float:
    traces = run_job(job, runs, cfg.seed, cfg.parallelism)
    finals = np.array([t.final for t in traces])
    return tv_distance(empirical_distribution(finals, model.support), model.weights)


def check_dndm_c_exact(cfg: VerifyConfig):
    model = chain_model()
    job = SampleJob("dndm-c", model.to_text(), steps=None, joint=True, noise="absorbing")
    tv = _sampler_tv(cfg, job, model, cfg.trials)
    return tv < 0.02, {"tv": tv}, "TV < 0.02", cfg.trials


def check_single_token(cfg: VerifyConfig):
    model = single_token_model()
    text = model.to_text()
    per = {}
    for sampler in ("baseline-absorb", "dndm", "dndm-v2", "dndm-topk", "dndm-c"):
        steps = None if sampler == "dndm-c" else 10
        job = SampleJob(sampler, text, steps=steps, noise="absorbing")
        per[sampler] = _sampler_tv(cfg, job, model, cfg.trials)
    worst = max(per.values())
    return worst < 0.01, {"max_tv": worst, "per_sampler": per}, "TV < 0.01", cfg.trials


def _brute_force_conditionals(model: ToyDataModel, schedule, noise: NoiseModel) -> dict:
    """``P(x0 | x_t)`` by summing over every Markov path ``x_1 .. x_t``."""
    S = noise.vocab.num_states
    q = noise.probs()
    states = list(itertools.product(range(S), repeat=model.N))
    b = schedule.betas
    out = {}
    for x0, w0 in zip(model.support, model.weights):
        # forward the exact joint over sequences one step at a time
        probs = {tuple(int(v) for v in x0): float(w0)}
        for t in range(1, schedule.T + 1):
            nxt = {}
            for prev, p in probs.items():
                for cur in states:
                    step = 1.0
                    for a, c in zip(prev, cur):
                        step *= b[t] * (a == c) + (1.0 - b[t]) * q[c]
                    if step > 0:
                        nxt[cur] = nxt.get(cur, 0.0) + p * step
            probs = nxt
            for xt, p in probs.items():
                out.setdefault((t, xt), {})[tuple(int(v) for v in x0)] = p
    return out


def check_bayes_oracle(cfg: VerifyConfig):
    model = ToyDataModel.from_support(2, [[0, 0], [0, 1], [1, 0], [1, 1]], [0.4, 0.1, 0.2, 0.3])
    noise = NoiseModel.absorbing(2)
    schedule = build_linear(3)
    worst, compared = 0.0, 0
    for (t, xt), joint in _brute_force_conditionals(model, schedule, noise).items():
        z = sum(joint.values())
        if z <= 0:
            continue
        post = exact_posterior(np.array(xt), t, model, schedule, noise).as_dict()
        for x0 in set(joint) | set(post):
            worst = max(worst, abs(joint.get(x0, 0.0) / z - post.get(x0, 0.0)))
        compared += 1
    return worst <= 1e-9, {"max_abs_error": worst, "reachable_states": compared}, "<= 1e-9", 0


def check_multinomial_kernel(cfg: VerifyConfig):
    unnorm = multinomial_posterior([0], [1], 0.5, 0.5, 2, normalize=False)[0]
    probs = multinomial_posterior([0], [1], 0.5, 0.5, 2)[0]
    err = max(np.abs(unnorm - [0.75 * 0.25, 0.25 * 0.75]).max(), np.abs(probs - [0.5, 0.5]).max())
    x0_true = np.array([3, 0, 2, 1, 3])
    noise = NoiseModel.uniform(4)
    schedule = build_linear(10)
    teacher = teacher_denoiser(x0_true)
    runs = 200
    mismatches = sum(
        int(np.any(baseline_multinomial_sample(teacher, schedule, noise, x0_true.shape[0],
                                               RngStream.for_trial(cfg.seed, r)).final != x0_true))
        for r in range(runs))
    # the last step has alpha_0 = 1: the kernel collapses onto the prediction
    last = multinomial_posterior(np.arange(4), x0_true[:4], schedule.alphas[0], schedule.betas[1], 4)
    collapse_err = float(np.abs(last - np.eye(4)[x0_true[:4]]).max())
    passed = err <= 1e-12 and mismatches == 0 and collapse_err <= 1e-12
    return (passed, {"theta_error": float(err), "teacher_mismatches": mismatches,
                     "final_step_error": collapse_err},
            "theta to 1e-12; teacher reproduced exactly", runs)


def check_nfe_reduction(cfg: VerifyConfig):
    N = 25
    values = {T: expected_nfe(beta_transition_distribution(3, 3, T), N).expected_nfe
              for T in (25, 50, 1000)}
    passed = all(v < T for T, v in values.items()) and values[1000] <= N
    return (passed, {f"T={T}": v for T, v in values.items()} | {"ratio_T1000": values[1000] / 1000},
            "E < T; E(T=1000) <= 25", 0)


def _cli_outputs(argv: list[str]) -> tuple[int, str]:
    from .cli import main

    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = main(argv)
    return code, out.getvalue()


def check_cli_determinism(cfg: VerifyConfig):
    from .cli import normalize_jsonl, normalize_summary

    runs = 64
    with tempfile.TemporaryDirectory() as tmp:
        model = Path(tmp) / "model.txt"
        model.write_text(chain_model().to_text(), encoding="utf-8")
        outputs = {}
        for par in (1, 8):
            for rep in (0, 1):
                trace = Path(tmp) / f"trace-{par}-{rep}.jsonl"
                summary = Path(tmp) / f"summary-{par}-{rep}.csv"
                code, _ = _cli_outputs([
                    "sample", "--sampler", "dndm", "--steps", "50", "--schedule", "linear",
                    "--model", str(model), "--runs", str(runs), "--seed", str(cfg.seed),
                    "--parallelism", str(par), "--output", str(trace), "--summary", str(summary),
                ])
                if code != 0:
                    return False, {"exit_code": code}, "byte-identical", runs
                outputs[(par, rep)] = (normalize_jsonl(trace.read_text(encoding="utf-8")),
                                       normalize_summary(summary.read_text(encoding="utf-8")))
    reference = outputs[(1, 0)]
    same = {f"p{par}r{rep}": v == reference for (par, rep), v in outputs.items()}
    return all(same.values()), {"identical": same}, "byte-identical after normalisation", runs


CHECKS = {
    1: ("forward equivalence", check_forward_equivalence),
    2: ("transition-time law", check_transition_law),
    3: ("expected NFE formula", check_nfe_formula),
    4: ("NFE bounds", check_nfe_bounds),
    5: ("copy-step freedom", check_copy_steps),
    6: ("dndm-c exactness", check_dndm_c_exact),
    7: ("single-token samplers", check_single_token),
    8: ("Bayes oracle brute force", check_bayes_oracle),
    9: ("multinomial kernel", check_multinomial_kernel),
    10: ("NFE reduction", check_nfe_reduction),
    11: ("CLI determinism", check_cli_determinism),
}


def run_check(number: int, cfg: VerifyConfig) -> CheckResult:
    name, fn = CHECKS[number]
    start = time.perf_counter()
    try:
        passed, measured, tol, trials = fn(cfg)
        error = None
    except Exception as exc:  # a crash is a failed check, not a crashed suite
        passed, measured, tol, trials = False, {}, "", 0
        error = f"{type(exc).__name__}: {exc}"
        measured["traceback"] = traceback.format_exc(limit=3)
    return CheckResult(number, name, bool(passed), _jsonable(measured), tol, trials,
                       time.perf_counter() - start, error, BUDGET_S.get(number))


def verify_suite(config: VerifyConfig | None = None) -> VerifyReport:
    cfg = config or VerifyConfig()
    numbers = sorted(cfg.checks) if cfg.checks else sorted(CHECKS)
    unknown = [n for n in numbers if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown check numbers {unknown}; valid are 1..{len(CHECKS)}")
    report = VerifyReport(cfg.seed, cfg.trials, cfg.reduced_power, kernels.BACKEND)
    report.checks = [run_check(n, cfg) for n in numbers]
    return report
