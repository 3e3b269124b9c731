"""Shared domain types: vocabularies, noise models, categorical distributions
and the counter-based random stream.

Tokens are integer indices. When a vocabulary carries an absorbing state it is
appended at index ``K``, so the state space has ``K + 1`` entries and the base
categories keep indices ``0..K-1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import kernels

PROB_ATOL = 1e-9
_BLOCK = 64


class ValidationError(ValueError):
    """Raised when an input violates a documented invariant."""


@dataclass(frozen=True)
class VocabSpec:
    base_size: int
    has_absorbing: bool = False

    def __post_init__(self):
        if int(self.base_size) != self.base_size or self.base_size < 2:
            raise ValidationError(f"vocabulary needs K >= 2 categories, got {self.base_size}")

    @property
    def num_states(self) -> int:
        return self.base_size + int(self.has_absorbing)

    @property
    def mask_index(self) -> int | None:
        return self.base_size if self.has_absorbing else None

    def check_tokens(self, tokens, *, allow_mask: bool = True) -> np.ndarray:
        """Return ``tokens`` as an int64 array after range checks."""
        arr = np.asarray(tokens, dtype=np.int64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValidationError("a sequence is a non-empty 1-d array of tokens")
        hi = self.num_states if allow_mask else self.base_size
        if arr.min() < 0 or arr.max() >= hi:
            raise ValidationError(f"token outside [0, {hi}): {arr.tolist()}")
        return arr


class NoiseKind(str, Enum):
    UNIFORM = "uniform"
    ABSORBING = "absorbing"


@dataclass(frozen=True, eq=False)
class CategoricalDist:
    """A probability vector over the full state space."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise ValidationError("probs must be a non-empty 1-d array")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValidationError("probs must be finite and non-negative")
        if abs(p.sum() - 1.0) > PROB_ATOL:
            raise ValidationError(f"probs sum to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __len__(self) -> int:
        return self.probs.shape[0]

    def cdf(self) -> np.ndarray:
        return cdf_from_probs(self.probs)


def cdf_from_probs(probs) -> np.ndarray:
    """Cumulative table for inverse-CDF lookup with ``searchsorted(side="right")``.

    The table is renormalised and pinned to exactly 1 from the last state with
    positive mass onward, so a uniform in [0, 1) never lands on a zero-mass
    state or past the end.
    """
    p = np.asarray(probs, dtype=np.float64)
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    last = int(np.flatnonzero(p > 0)[-1])
    cdf[last:] = 1.0
    return cdf


def cdf_rows_from_probs(probs) -> np.ndarray:
    """Row-wise :func:`cdf_from_probs` for a 2-D probability table."""
    # adding exact zeros leaves the running sum unchanged, so from the last
    # positive entry onward each row divides by itself and is exactly 1
    cdf = np.cumsum(np.asarray(probs, dtype=np.float64), axis=1)
    cdf /= cdf[:, -1:]
    return cdf


@dataclass(frozen=True)
class NoiseModel:
    """The stationary noise distribution of the forward process."""

    kind: NoiseKind
    vocab: VocabSpec

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if self.kind is NoiseKind.ABSORBING and not self.vocab.has_absorbing:
            raise ValidationError("absorbing noise needs a vocabulary with a mask state")

    @classmethod
    def uniform(cls, K: int, *, with_mask: bool = False) -> NoiseModel:
        return cls(NoiseKind.UNIFORM, VocabSpec(K, with_mask))

    @classmethod
    def absorbing(cls, K: int) -> NoiseModel:
        return cls(NoiseKind.ABSORBING, VocabSpec(K, True))

    @property
    def K(self) -> int:
        return self.vocab.base_size

    @property
    def is_absorbing(self) -> bool:
        return self.kind is NoiseKind.ABSORBING

    def probs(self) -> np.ndarray:
        p = np.zeros(self.vocab.num_states)
        if self.is_absorbing:
            p[self.vocab.mask_index] = 1.0
        else:
            p[: self.K] = 1.0 / self.K
        return p

    def dist(self) -> CategoricalDist:
        return CategoricalDist(self.probs())


def stream_id(trial: int, position: int = 0) -> int:
    """Substream id for a (trial, position) pair: ``trial * 2**32 + position``."""
    if trial < 0 or not 0 <= position < 2**32:
        raise ValidationError("trial must be >= 0 and position in [0, 2**32)")
    return (trial << 32) + position


@dataclass
class RngStream:
    """Deterministic stream of uniforms keyed by ``(seed, stream_id)``.

    Draw ``i`` of a stream is a pure function of ``(seed, stream_id, i)``, so
    equal pairs replay identically and different trials can run on any worker.
    A stream is mutable (it tracks its draw counter) and should be owned by one
    worker at a time.
    """

    seed: int
    stream_id: int = 0
    counter: int = 0
    _buf: np.ndarray = field(default=None, init=False, repr=False, compare=False)
    _buf_start: int = field(default=0, init=False, repr=False, compare=False)
    _buf_key: tuple = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("seed", "stream_id", "counter"):
            v = getattr(self, name)
            if not 0 <= int(v) < 2**64:
                raise ValidationError(f"{name} must fit in an unsigned 64-bit integer")
            setattr(self, name, int(v))

    @classmethod
    def for_trial(cls, seed: int, trial: int, position: int = 0) -> RngStream:
        return cls(seed, stream_id(trial, position))

    def substream(self, offset: int) -> RngStream:
        """Fresh stream at ``stream_id + offset`` (per-position streams)."""
        return RngStream(self.seed, self.stream_id + offset)

    def _buffered(self, n: int) -> tuple[np.ndarray, int]:
        # draws are a pure function of the counter, so a cached block is exact
        i = self.counter - self._buf_start
        key = (self.seed, self.stream_id)
        if self._buf is None or self._buf_key != key or i < 0 or i + n > self._buf.shape[0]:
            self._buf = kernels.uniform_block(self.seed, self.stream_id, self.counter, max(n, _BLOCK))
            self._buf.setflags(write=False)
            self._buf_start, self._buf_key = self.counter, key
            i = 0
        self.counter += n
        return self._buf, i

    def uniform(self) -> float:
        buf, i = self._buffered(1)
        return float(buf[i])

    def skip(self, n: int) -> None:
        """Advance past ``n`` draws without producing them."""
        if n < 0:
            raise ValidationError("cannot skip a negative number of draws")
        self.counter += int(n)

    def uniforms(self, n: int) -> np.ndarray:
        """The next ``n`` uniforms as a read-only array."""
        buf, i = self._buffered(int(n))
        return buf[i:i + n]


def sample_categorical(dist: CategoricalDist, rng: RngStream) -> int:
    """Draw one state index; consumes one uniform."""
    if not isinstance(dist, CategoricalDist):
        dist = CategoricalDist(dist)
    return int(np.searchsorted(dist.cdf(), rng.uniform(), side="right"))


def sample_from_cdf(cdf: np.ndarray, rng: RngStream, n: int | None = None):
    """Inverse-CDF draw(s) from a table built by :func:`cdf_from_probs`."""
    if n is None:
        return int(np.searchsorted(cdf, rng.uniform(), side="right"))
    return np.searchsorted(cdf, rng.uniforms(n), side="right").astype(np.int64)


def sample_bernoulli(p: float, rng: RngStream) -> int:
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"Bernoulli probability {p!r} outside [0, 1]")
    return int(rng.uniform() < p)
