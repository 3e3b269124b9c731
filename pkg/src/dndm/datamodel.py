"""Enumerable toy data distributions and exact-posterior denoisers.

A :class:`ToyDataModel` is always held as an explicit support (sequence,
weight) table, whichever form it was built from, so the posterior
``q(x_0 | x_t)`` is an exact finite sum. Positions are independent in the
likelihood but the prior may couple them.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from . import kernels
from .core import (
    PROB_ATOL,
    NoiseModel,
    RngStream,
    ValidationError,
    VocabSpec,
    cdf_from_probs,
    cdf_rows_from_probs,
)
from .schedule import AlphaSchedule

MAX_SUPPORT = 4096
KINDS = ("support", "factorized", "chain")


class DataModelError(ValidationError):
    """Malformed or inconsistent data-model definition."""


class ImpossibleObservationError(ValidationError):
    """The noisy sequence has zero probability under the model."""


@dataclass(frozen=True, eq=False)
class ToyDataModel:
    vocab: VocabSpec
    N: int
    support: np.ndarray  # (S, N) int64, base tokens only
    weights: np.ndarray  # (S,) positive, sums to 1
    kind: str = "support"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        sup = np.asarray(self.support, dtype=np.int64)
        w = np.asarray(self.weights, dtype=np.float64)
        if sup.ndim != 2 or sup.shape[1] != self.N or sup.shape[0] != w.shape[0]:
            raise DataModelError("support must be an (S, N) table matching the weights")
        if sup.shape[0] == 0:
            raise DataModelError("empty support")
        if sup.shape[0] > MAX_SUPPORT:
            raise DataModelError(f"support of {sup.shape[0]} sequences exceeds {MAX_SUPPORT}")
        if sup.min() < 0 or sup.max() >= self.vocab.base_size:
            raise DataModelError("support tokens must be base categories")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise DataModelError("support weights must be positive")
        if abs(w.sum() - 1.0) > PROB_ATOL:
            raise DataModelError(f"weights sum to {w.sum()!r}, not 1")
        if len({row.tobytes() for row in sup}) != sup.shape[0]:
            raise DataModelError("duplicate sequences in support")
        sup.setflags(write=False)
        w = w / w.sum()
        w.setflags(write=False)
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "weights", w)

    @property
    def K(self) -> int:
        return self.vocab.base_size

    def as_dict(self) -> dict[tuple, float]:
        return {tuple(int(v) for v in row): float(p) for row, p in zip(self.support, self.weights)}

    def probability(self, seq) -> float:
        return self.as_dict().get(tuple(int(v) for v in seq), 0.0)

    def marginals(self) -> np.ndarray:
        return _marginals(self.support, self.weights, self.K)

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_support(cls, K: int, sequences, weights) -> ToyDataModel:
        sup = np.atleast_2d(np.asarray(sequences, dtype=np.int64))
        return cls(VocabSpec(K), sup.shape[1], sup, np.asarray(weights, dtype=np.float64))

    @classmethod
    def point_mass(cls, K: int, sequence) -> ToyDataModel:
        return cls.from_support(K, [sequence], [1.0])

    @classmethod
    def factorized(cls, K: int, probs) -> ToyDataModel:
        p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
        if p.shape[1] != K:
            raise DataModelError(f"factorized rows need {K} probabilities")
        _check_rows(p, "factorized position")
        N = p.shape[0]
        seqs, weights = _enumerate(K, N, lambda s: float(np.prod(p[np.arange(N), s])))
        return cls(VocabSpec(K), N, seqs, weights, "factorized", {"probs": p})

    @classmethod
    def chain(cls, K: int, N: int, initial, transition) -> ToyDataModel:
        init = np.asarray(initial, dtype=np.float64)
        trans = np.asarray(transition, dtype=np.float64)
        if init.shape != (K,) or trans.shape != (K, K):
            raise DataModelError("chain needs K initial probabilities and a K x K table")
        _check_rows(init[None, :], "initial distribution")
        _check_rows(trans, "transition row")

        def weight(s):
            w = init[s[0]]
            for a, b in zip(s[:-1], s[1:]):
                w *= trans[a, b]
            return float(w)

        seqs, weights = _enumerate(K, N, weight)
        return cls(VocabSpec(K), N, seqs, weights, "chain", {"initial": init, "transition": trans})

    def to_text(self) -> str:
        head = f"vocab {self.K} {self.N} {self.kind}\n"
        if self.kind == "factorized":
            rows = self.params["probs"]
            return head + "".join(" ".join(repr(float(v)) for v in r) + "\n" for r in rows)
        if self.kind == "chain":
            rows = [self.params["initial"], *self.params["transition"]]
            return head + "".join(" ".join(repr(float(v)) for v in r) + "\n" for r in rows)
        return head + "".join(
            f"{float(w)!r} " + " ".join(str(int(v)) for v in s) + "\n"
            for s, w in zip(self.support, self.weights)
        )


def _check_rows(rows: np.ndarray, what: str):
    if np.any(rows < 0) or not np.all(np.isfinite(rows)):
        raise DataModelError(f"{what} has negative or non-finite entries")
    bad = np.flatnonzero(np.abs(rows.sum(axis=1) - 1.0) > PROB_ATOL)
    if bad.size:
        raise DataModelError(f"{what} {int(bad[0])} is not stochastic (sums to {rows[bad[0]].sum()!r})")


def _enumerate(K: int, N: int, weight_fn):
    if K ** N > MAX_SUPPORT:
        raise DataModelError(f"K^N = {K ** N} sequences exceeds the enumeration bound {MAX_SUPPORT}")
    seqs, weights = [], []
    for s in itertools.product(range(K), repeat=N):
        w = weight_fn(np.array(s))
        if w > 0:
            seqs.append(s)
            weights.append(w)
    return np.array(seqs, dtype=np.int64).reshape(-1, N), np.array(weights)


def _marginals(support: np.ndarray, probs: np.ndarray, num_states: int) -> np.ndarray:
    N = support.shape[1]
    out = np.zeros((N, num_states))
    for n in range(N):
        out[n] = np.bincount(support[:, n], weights=probs, minlength=num_states)
    return out


def load_data_model(path) -> ToyDataModel:
    """Parse the line-oriented data-model format (``#`` starts a comment)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataModelError(f"cannot read data model {path}: {exc}") from exc
    return parse_data_model(text)


def parse_data_model(text: str) -> ToyDataModel:
    lines = [ln.split("#", 1)[0].split() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise DataModelError("empty data-model file")
    head, body = lines[0], lines[1:]
    if len(head) != 4 or head[0] != "vocab" or head[3] not in KINDS:
        raise DataModelError(f"header must be 'vocab K N kind' with kind in {KINDS}")
    try:
        K, N = int(head[1]), int(head[2])
        rows = [[float(v) for v in ln] for ln in body]
    except ValueError as exc:
        raise DataModelError(f"unparseable number: {exc}") from exc
    if N < 1:
        raise DataModelError("sequence length must be >= 1")
    kind = head[3]
    if kind == "support":
        if any(len(r) != N + 1 for r in rows):
            raise DataModelError(f"support lines need a weight and {N} tokens")
        toks = np.array([r[1:] for r in rows])
        if np.any(toks != np.round(toks)):
            raise DataModelError("tokens must be integers")
        return ToyDataModel.from_support(K, toks.astype(np.int64), [r[0] for r in rows])
    if any(len(r) != K for r in rows):
        raise DataModelError(f"{kind} lines need {K} probabilities")
    if kind == "factorized":
        if len(rows) != N:
            raise DataModelError(f"factorized form needs {N} lines")
        return ToyDataModel.factorized(K, rows)
    if len(rows) != K + 1:
        raise DataModelError(f"chain form needs 1 + {K} lines")
    return ToyDataModel.chain(K, N, rows[0], rows[1:])


# ---------------------------------------------------------------------------
# posterior
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Posterior:
    support: np.ndarray
    probs: np.ndarray

    def marginals(self, num_states: int) -> np.ndarray:
        return _marginals(self.support, self.probs, num_states)

    def as_dict(self) -> dict[tuple, float]:
        return {tuple(int(v) for v in row): float(p) for row, p in zip(self.support, self.probs)}


def likelihood(xt: np.ndarray, alpha: float, support: np.ndarray, noise: NoiseModel) -> np.ndarray:
    """``q(x_t | x_0)`` for every support row, factorised over positions."""
    return _likelihood(xt, alpha, support, noise.probs())


def _likelihood(xt, alpha, support, noise_probs) -> np.ndarray:
    q = noise_probs[xt]
    per_pos = np.where(support == xt[None, :], alpha + (1.0 - alpha) * q, (1.0 - alpha) * q)
    return per_pos.prod(axis=1)


def _check_observation(xt, model: ToyDataModel, noise: NoiseModel) -> np.ndarray:
    if noise.K != model.K:
        raise ValidationError(f"noise has K={noise.K} but the data model has K={model.K}")
    xt = noise.vocab.check_tokens(xt)
    if xt.shape[0] != model.N:
        raise ValidationError(f"x_t has length {xt.shape[0]}, model length is {model.N}")
    return xt


def _posterior_probs(xt, t, alpha, model: ToyDataModel, noise_probs) -> np.ndarray:
    joint = model.weights * _likelihood(xt, alpha, model.support, noise_probs)
    total = joint.sum()
    if not total > 0:
        raise ImpossibleObservationError(f"x_t={xt.tolist()} has zero probability at t={t}")
    return joint / total


def exact_posterior(xt, t, model: ToyDataModel, schedule: AlphaSchedule, noise: NoiseModel) -> Posterior:
    xt = _check_observation(xt, model, noise)
    return Posterior(model.support, _posterior_probs(xt, t, schedule.alpha(t), model, noise.probs()))


# ---------------------------------------------------------------------------
# denoisers
# ---------------------------------------------------------------------------


class Denoiser(Protocol):
    """Predicts a clean sequence and per-position confidence scores."""

    factorized: bool

    def predict(self, xt: np.ndarray, t, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
        ...


DECODE_MODES = ("sample", "argmax")


@dataclass(eq=False)
class OracleDenoiser:
    """Samples ``x0_hat`` from the exact posterior.

    ``joint=True`` draws a whole support sequence (one uniform);
    otherwise each position is drawn from its posterior marginal (one uniform
    per position), like a network decoding all positions in parallel.
    ``decode="argmax"`` takes the mode instead and consumes no randomness.
    Scores are the largest posterior marginal at each position (a read-only
    array shared between calls).
    """

    model: ToyDataModel
    schedule: AlphaSchedule
    noise: NoiseModel
    joint: bool = False
    decode: str = "sample"
    cache_limit: int = 1 << 18
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.decode not in DECODE_MODES:
            raise ValidationError(f"decode must be one of {DECODE_MODES}")
        if self.noise.K != self.model.K:
            raise ValidationError("noise and data model disagree on K")
        # marginals of a posterior are one matrix product with the one-hot support
        sup, K = self.model.support, self.model.K
        self._onehot = (sup[:, :, None] == np.arange(K)).reshape(sup.shape[0], -1).astype(np.float64)
        self._noise_probs = self.noise.probs()

    @property
    def factorized(self) -> bool:
        return not self.joint

    def _tables(self, xt: np.ndarray, t):
        key = (xt.tobytes(), float(t))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        xt = _check_observation(xt, self.model, self.noise)
        probs = _posterior_probs(xt, t, self.schedule.alpha(t), self.model, self._noise_probs)
        marg = (probs @ self._onehot).reshape(self.model.N, self.model.K)
        # only the tables the configured mode reads are built
        sampling, joint = self.decode == "sample", self.joint
        entry = (
            cdf_from_probs(probs) if sampling and joint else None,
            cdf_rows_from_probs(marg) if sampling and not joint else None,
            self.model.support[int(np.argmax(probs))] if joint else None,
            marg.argmax(axis=1),
            marg.max(axis=1),
        )
        for arr in entry:
            if arr is not None:
                arr.setflags(write=False)
        if len(self._cache) >= self.cache_limit:
            self._cache.clear()
        self._cache[key] = entry
        return entry

    def posterior(self, xt, t) -> Posterior:
        return exact_posterior(xt, t, self.model, self.schedule, self.noise)

    def predict(self, xt, t, rng: RngStream):
        xt = np.asarray(xt, dtype=np.int64)
        joint_cdf, marg_cdfs, joint_mode, marg_mode, scores = self._tables(xt, t)
        if self.decode == "argmax":
            x0 = joint_mode if self.joint else marg_mode
            return x0.copy(), scores
        if self.joint:
            idx = int(np.searchsorted(joint_cdf, rng.uniform(), side="right"))
            return self.model.support[idx].copy(), scores
        return kernels.rows_inverse_cdf(marg_cdfs, rng.uniforms(marg_cdfs.shape[0])), scores


def oracle_denoiser(model: ToyDataModel, schedule: AlphaSchedule, noise: NoiseModel,
                    joint: bool = False, decode: str = "sample") -> OracleDenoiser:
    return OracleDenoiser(model, schedule, noise, joint=joint, decode=decode)


@dataclass(eq=False)
class TeacherDenoiser:
    """Always predicts the true sequence with full confidence."""

    x0_true: np.ndarray
    factorized: bool = True

    def __post_init__(self):
        self.x0_true = np.asarray(self.x0_true, dtype=np.int64)

    def predict(self, xt, t, rng: RngStream):
        return self.x0_true.copy(), np.ones(self.x0_true.shape[0])


def teacher_denoiser(x0_true) -> TeacherDenoiser:
    return TeacherDenoiser(x0_true)


@dataclass(eq=False)
class RecordingDenoiser:
    """Wraps a denoiser and records the time of every call."""

    inner: Denoiser
    calls: list = field(default_factory=list)

    @property
    def factorized(self) -> bool:
        return self.inner.factorized

    def predict(self, xt, t, rng: RngStream):
        self.calls.append(t)
        return self.inner.predict(xt, t, rng)
