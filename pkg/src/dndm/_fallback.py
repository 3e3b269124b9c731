"""Vectorised numpy implementation of the Monte Carlo kernels.

Every function here has a compiled twin in ``_kernels.pyx`` with the same
signature and bit-identical output. The random numbers come from a
Philox4x32-10 counter-based generator keyed by the 64-bit seed; the 128-bit
counter is ``(draw index, stream id)``. Because a draw is a pure function of
``(seed, stream, index)``, batches of trials vectorise without any shared
generator state.

Draw layouts (per stream, by counter index):

* markov forward, stream ``base + n`` for position ``n``: step ``t`` uses
  counter ``2(t-1)`` for the keep/resample coin and ``2(t-1)+1`` for the noise
  token (always consumed).
* non-Markov forward: counter 0 is the transition time, counter 1 the noise
  token.
* transition batches: ``n`` consecutive counters from ``start``.
"""
from __future__ import annotations

import numpy as np

BACKEND = "python"

_M32 = 0xFFFFFFFF
_MUL0 = np.uint64(0xD2511F53)
_MUL1 = np.uint64(0xCD9E8D57)
_WEYL0 = 0x9E3779B9
_WEYL1 = 0xBB67AE85
_ROUNDS = 10
_U53 = 1.0 / 9007199254740992.0

# rows per vectorised chunk; bounds peak memory of the fallback
_CHUNK = 1 << 15


def _round_keys(seed: int) -> list[tuple[np.uint64, np.uint64]]:
    k0, k1 = seed & _M32, (seed >> 32) & _M32
    keys = []
    for _ in range(_ROUNDS):
        keys.append((np.uint64(k0), np.uint64(k1)))
        k0 = (k0 + _WEYL0) & _M32
        k1 = (k1 + _WEYL1) & _M32
    return keys


def philox4x32(seed: int, counter: tuple) -> tuple[np.ndarray, ...]:
    """Raw Philox4x32-10 block for counter words ``(c0, c1, c2, c3)``.

    Words are uint64 arrays holding 32-bit values; the key is the seed split
    into low and high halves.
    """
    m32 = np.uint64(_M32)
    s32 = np.uint64(32)
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) for c in counter)
    for k0, k1 in _round_keys(int(seed)):
        p0 = _MUL0 * c0
        p1 = _MUL1 * c2
        c0, c1, c2, c3 = (
            (p1 >> s32) ^ c1 ^ k0,
            p1 & m32,
            (p0 >> s32) ^ c3 ^ k1,
            p0 & m32,
        )
    return c0, c1, c2, c3


def philox_uniform(seed, streams, counters) -> np.ndarray:
    """Uniform doubles in [0, 1) for broadcast ``streams`` x ``counters``."""
    streams = np.asarray(streams, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    streams, counters = np.broadcast_arrays(streams, counters)
    m32 = np.uint64(_M32)
    s32 = np.uint64(32)
    w0, w1, _, _ = philox4x32(
        seed, (counters & m32, counters >> s32, streams & m32, streams >> s32)
    )
    hi = (w0 >> np.uint64(5)).astype(np.float64)
    lo = (w1 >> np.uint64(6)).astype(np.float64)
    return (hi * 67108864.0 + lo) * _U53


def uniform_block(seed: int, stream: int, start: int, count: int) -> np.ndarray:
    counters = np.arange(count, dtype=np.uint64) + np.uint64(start)
    return philox_uniform(seed, np.uint64(stream), counters)


def _lookup(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.searchsorted(cdf, u, side="right").astype(np.int64)


def markov_forward_batch(x0, betas, noise_cdf, seed, stream_base, times):
    x0 = np.asarray(x0, dtype=np.int64)
    betas = np.asarray(betas, dtype=np.float64)
    noise_cdf = np.asarray(noise_cdf, dtype=np.float64)
    stream_base = np.asarray(stream_base, dtype=np.uint64)
    times = np.asarray(times, dtype=np.int64)
    n_pos = x0.shape[0]
    horizon = int(times.max()) if times.size else 0
    out = np.empty((stream_base.shape[0], times.shape[0], n_pos), dtype=np.int64)
    offsets = np.arange(n_pos, dtype=np.uint64)
    for lo in range(0, stream_base.shape[0], _CHUNK):
        base = stream_base[lo:lo + _CHUNK]
        streams = base[:, None] + offsets[None, :]
        x = np.broadcast_to(x0, streams.shape).copy()
        out[lo:lo + _CHUNK, times == 0, :] = x[:, None, :]
        for t in range(1, horizon + 1):
            u_keep = philox_uniform(seed, streams, np.uint64(2 * (t - 1)))
            u_noise = philox_uniform(seed, streams, np.uint64(2 * (t - 1) + 1))
            resample = ~(u_keep < betas[t])
            x[resample] = _lookup(noise_cdf, u_noise[resample])
            hit = times == t
            if hit.any():
                out[lo:lo + _CHUNK, hit, :] = x[:, None, :]
    return out


def nonmarkov_forward_batch(x0, tau_cdf, noise_cdf, seed, stream_base, times):
    x0 = np.asarray(x0, dtype=np.int64)
    tau_cdf = np.asarray(tau_cdf, dtype=np.float64)
    noise_cdf = np.asarray(noise_cdf, dtype=np.float64)
    stream_base = np.asarray(stream_base, dtype=np.uint64)
    times = np.asarray(times, dtype=np.int64)
    n_pos = x0.shape[0]
    streams = stream_base[:, None] + np.arange(n_pos, dtype=np.uint64)[None, :]
    tau = _lookup(tau_cdf, philox_uniform(seed, streams, np.uint64(0))) + 1
    w = _lookup(noise_cdf, philox_uniform(seed, streams, np.uint64(1)))
    clean = times[None, :, None] < tau[:, None, :]
    states = np.where(clean, x0[None, None, :], w[:, None, :])
    return states, tau


def transition_batch(cdf, seed, streams, n, start=0):
    cdf = np.asarray(cdf, dtype=np.float64)
    streams = np.asarray(streams, dtype=np.uint64)
    counters = np.arange(n, dtype=np.uint64) + np.uint64(start)
    u = philox_uniform(seed, streams[:, None], counters[None, :])
    return _lookup(cdf, u) + 1


def distinct_counts(cdf, seed, streams, n, start=0):
    streams = np.asarray(streams, dtype=np.uint64)
    out = np.empty(streams.shape[0], dtype=np.int64)
    for lo in range(0, streams.shape[0], _CHUNK):
        tau = np.sort(transition_batch(cdf, seed, streams[lo:lo + _CHUNK], n, start), axis=1)
        out[lo:lo + _CHUNK] = 1 + np.count_nonzero(np.diff(tau, axis=1), axis=1)
    return out


def rows_inverse_cdf(cdfs, u) -> np.ndarray:
    """Per row, the number of cdf entries <= u[row] (row-wise searchsorted right)."""
    cdfs = np.asarray(cdfs, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    return np.count_nonzero(cdfs <= u[:, None], axis=1).astype(np.int64)
