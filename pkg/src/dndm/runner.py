"""Batched sampling runs, optionally fanned out over worker processes.

Run ``r`` always draws from stream ``r << 32`` of the job seed, so results do
not depend on how runs are split between workers. Workers rebuild the
schedule, model and denoiser from the picklable :class:`SampleJob`.
"""
from __future__ import annotations

import gc
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass

from .core import NoiseModel, RngStream, ValidationError
from .datamodel import OracleDenoiser, parse_data_model
from .sampler import SamplerConfig, SampleTrace, get_sampler
from .schedule import (
    DEFAULT_COSINE_OFFSET,
    beta_transition_distribution,
    build_schedule,
    schedule_from_transition,
)


def parse_tau(text: str):
    """``"schedule"`` -> None, ``"beta:a,b"`` -> (a, b)."""
    if text in (None, "schedule"):
        return None
    if text.startswith("beta:"):
        try:
            a, b = (float(v) for v in text[5:].split(","))
        except ValueError:
            raise ValidationError(f"bad Beta argument {text!r}; expected beta:a,b") from None
        return a, b
    raise ValidationError(f"bad --tau {text!r}; expected 'schedule' or 'beta:a,b'")


def parse_steps(text) -> int | None:
    if text in (None, "inf", "infinity", "∞"):
        return None
    try:
        T = int(text)
    except (TypeError, ValueError):
        raise ValidationError(f"--steps must be a positive integer or 'inf', got {text!r}") from None
    if T < 1:
        raise ValidationError("--steps must be >= 1")
    return T


@dataclass(frozen=True)
class SampleJob:
    sampler: str
    model_text: str
    steps: int | None = 50
    schedule: str = "linear"
    tau: str = "schedule"
    noise: str | None = None
    decode: str = "sample"
    joint: bool = False
    order: str = "none"
    offset: float = DEFAULT_COSINE_OFFSET
    record_x0: bool = False

    def build(self):
        """Return ``(sample_fn, denoiser, schedule, noise, N, config)``."""
        fn = get_sampler(self.sampler)
        if self.sampler == "dndm-c" and self.steps is not None:
            raise ValidationError("dndm-c runs in continuous time; use --steps inf")
        if self.sampler != "dndm-c" and self.steps is None:
            raise ValidationError(f"{self.sampler} needs a finite --steps")
        model = parse_data_model(self.model_text)
        kind = self.noise or ("uniform" if self.sampler == "baseline-multi" else "absorbing")
        if kind == "absorbing":
            noise = NoiseModel.absorbing(model.K)
        elif kind == "uniform":
            noise = NoiseModel.uniform(model.K)
        else:
            raise ValidationError(f"unknown noise {kind!r}")
        schedule = build_schedule(self.schedule, self.steps, self.offset)
        config = SamplerConfig(order=self.order, record_x0=self.record_x0)
        beta = parse_tau(self.tau)
        posterior_schedule = schedule
        if beta is not None and self.sampler.startswith("dndm"):
            config.transition_dist = beta_transition_distribution(*beta, self.steps)
            posterior_schedule = schedule_from_transition(config.transition_dist)
        denoiser = OracleDenoiser(model, posterior_schedule, noise, joint=self.joint,
                                  decode=self.decode)
        return fn, denoiser, schedule, noise, model.N, config


@contextmanager
def _gc_paused():
    # traces are acyclic; the cyclic collector only rescans the growing batch
    enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if enabled:
            gc.enable()


def _run_range(job: SampleJob, seed: int, start: int, stop: int) -> list[SampleTrace]:
    fn, denoiser, schedule, noise, N, config = job.build()
    with _gc_paused():
        return [fn(denoiser, schedule, noise, N, RngStream.for_trial(seed, r), config)
                for r in range(start, stop)]


def run_job(job: SampleJob, runs: int, seed: int, parallelism: int = 1) -> list[SampleTrace]:
    if runs < 0:
        raise ValidationError("--runs must be >= 0")
    job.build()  # validate before fanning out
    workers = max(1, min(int(parallelism), runs))
    if workers == 1:
        return _run_range(job, seed, 0, runs)
    bounds = [runs * i // workers for i in range(workers + 1)]
    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        futures = [pool.submit(_run_range, job, seed, lo, hi)
                   for lo, hi in zip(bounds[:-1], bounds[1:])]
        return [trace for f in futures for trace in f.result()]
