# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Monte Carlo kernels.

Same contracts and bit-identical outputs as ``dndm._fallback``; see the
draw layouts documented there.
"""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint32_t, uint64_t, int64_t

cnp.import_array()

BACKEND = "compiled"

cdef uint32_t MUL0 = 0xD2511F53u
cdef uint32_t MUL1 = 0xCD9E8D57u
cdef uint32_t WEYL0 = 0x9E3779B9u
cdef uint32_t WEYL1 = 0xBB67AE85u
cdef double U53 = 1.0 / 9007199254740992.0


cdef inline double _uniform(uint64_t seed, uint64_t stream, uint64_t counter) noexcept nogil:
    cdef uint32_t c0 = <uint32_t>counter
    cdef uint32_t c1 = <uint32_t>(counter >> 32)
    cdef uint32_t c2 = <uint32_t>stream
    cdef uint32_t c3 = <uint32_t>(stream >> 32)
    cdef uint32_t k0 = <uint32_t>seed
    cdef uint32_t k1 = <uint32_t>(seed >> 32)
    cdef uint64_t p0, p1
    cdef int r
    for r in range(10):
        if r:
            k0 = k0 + WEYL0
            k1 = k1 + WEYL1
        p0 = <uint64_t>MUL0 * c0
        p1 = <uint64_t>MUL1 * c2
        c0 = (<uint32_t>(p1 >> 32)) ^ c1 ^ k0
        c1 = <uint32_t>p1
        c2 = (<uint32_t>(p0 >> 32)) ^ c3 ^ k1
        c3 = <uint32_t>p0
    return (<double>(c0 >> 5) * 67108864.0 + <double>(c1 >> 6)) * U53


cdef inline int64_t _lookup(const double[::1] cdf, double u) noexcept nogil:
    # number of cdf entries <= u (numpy searchsorted side="right")
    cdef int64_t lo = 0
    cdef int64_t hi = cdf.shape[0]
    cdef int64_t mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if cdf[mid] <= u:
            lo = mid + 1
        else:
            hi = mid
    return lo


def philox_uniform(seed, streams, counters):
    s, c = np.broadcast_arrays(np.asarray(streams, dtype=np.uint64),
                               np.asarray(counters, dtype=np.uint64))
    shape = s.shape
    cdef const uint64_t[::1] sv = np.ascontiguousarray(s).ravel()
    cdef const uint64_t[::1] cv = np.ascontiguousarray(c).ravel()
    out = np.empty(sv.shape[0], dtype=np.float64)
    cdef double[::1] ov = out
    cdef uint64_t key = <uint64_t>seed
    cdef Py_ssize_t i
    with nogil:
        for i in range(sv.shape[0]):
            ov[i] = _uniform(key, sv[i], cv[i])
    return out.reshape(shape)


def uniform_block(seed, stream, start, count):
    out = np.empty(count, dtype=np.float64)
    cdef double[::1] ov = out
    cdef uint64_t key = <uint64_t>seed
    cdef uint64_t st = <uint64_t>stream
    cdef uint64_t c0 = <uint64_t>start
    cdef Py_ssize_t i
    for i in range(ov.shape[0]):
        ov[i] = _uniform(key, st, c0 + i)
    return out


def markov_forward_batch(x0, betas, noise_cdf, seed, stream_base, times):
    cdef const int64_t[::1] xv = np.ascontiguousarray(x0, dtype=np.int64)
    cdef const double[::1] bv = np.ascontiguousarray(betas, dtype=np.float64)
    cdef const double[::1] nv = np.ascontiguousarray(noise_cdf, dtype=np.float64)
    cdef const uint64_t[::1] base = np.ascontiguousarray(stream_base, dtype=np.uint64)
    tarr = np.ascontiguousarray(times, dtype=np.int64)
    cdef const int64_t[::1] tv = tarr
    cdef Py_ssize_t n_pos = xv.shape[0]
    cdef Py_ssize_t n_times = tv.shape[0]
    cdef Py_ssize_t m_trials = base.shape[0]
    out = np.empty((m_trials, n_times, n_pos), dtype=np.int64)
    cdef int64_t[:, :, ::1] ov = out
    cdef int64_t horizon = int(tarr.max()) if n_times else 0
    cdef uint64_t key = <uint64_t>seed
    cdef Py_ssize_t m, n, r
    cdef int64_t t, x
    cdef uint64_t stream
    with nogil:
        for m in range(m_trials):
            for n in range(n_pos):
                stream = base[m] + <uint64_t>n
                x = xv[n]
                for r in range(n_times):
                    if tv[r] == 0:
                        ov[m, r, n] = x
                for t in range(1, horizon + 1):
                    if not (_uniform(key, stream, <uint64_t>(2 * (t - 1))) < bv[t]):
                        x = _lookup(nv, _uniform(key, stream, <uint64_t>(2 * (t - 1) + 1)))
                    for r in range(n_times):
                        if tv[r] == t:
                            ov[m, r, n] = x
    return out


def nonmarkov_forward_batch(x0, tau_cdf, noise_cdf, seed, stream_base, times):
    cdef const int64_t[::1] xv = np.ascontiguousarray(x0, dtype=np.int64)
    cdef const double[::1] cv = np.ascontiguousarray(tau_cdf, dtype=np.float64)
    cdef const double[::1] nv = np.ascontiguousarray(noise_cdf, dtype=np.float64)
    cdef const uint64_t[::1] base = np.ascontiguousarray(stream_base, dtype=np.uint64)
    cdef const int64_t[::1] tv = np.ascontiguousarray(times, dtype=np.int64)
    cdef Py_ssize_t n_pos = xv.shape[0]
    cdef Py_ssize_t n_times = tv.shape[0]
    cdef Py_ssize_t m_trials = base.shape[0]
    states = np.empty((m_trials, n_times, n_pos), dtype=np.int64)
    taus = np.empty((m_trials, n_pos), dtype=np.int64)
    cdef int64_t[:, :, ::1] sv = states
    cdef int64_t[:, ::1] tauv = taus
    cdef uint64_t key = <uint64_t>seed
    cdef Py_ssize_t m, n, r
    cdef int64_t tau, w
    cdef uint64_t stream
    with nogil:
        for m in range(m_trials):
            for n in range(n_pos):
                stream = base[m] + <uint64_t>n
                tau = _lookup(cv, _uniform(key, stream, 0)) + 1
                w = _lookup(nv, _uniform(key, stream, 1))
                tauv[m, n] = tau
                for r in range(n_times):
                    sv[m, r, n] = xv[n] if tv[r] < tau else w
    return states, taus


def transition_batch(cdf, seed, streams, n, start=0):
    cdef const double[::1] cv = np.ascontiguousarray(cdf, dtype=np.float64)
    cdef const uint64_t[::1] sv = np.ascontiguousarray(streams, dtype=np.uint64)
    cdef Py_ssize_t n_draw = n
    out = np.empty((sv.shape[0], n_draw), dtype=np.int64)
    cdef int64_t[:, ::1] ov = out
    cdef uint64_t key = <uint64_t>seed
    cdef uint64_t c0 = <uint64_t>start
    cdef Py_ssize_t m, j
    with nogil:
        for m in range(sv.shape[0]):
            for j in range(n_draw):
                ov[m, j] = _lookup(cv, _uniform(key, sv[m], c0 + j)) + 1
    return out


def distinct_counts(cdf, seed, streams, n, start=0):
    cdef const double[::1] cv = np.ascontiguousarray(cdf, dtype=np.float64)
    cdef const uint64_t[::1] sv = np.ascontiguousarray(streams, dtype=np.uint64)
    cdef Py_ssize_t n_draw = n
    out = np.empty(sv.shape[0], dtype=np.int64)
    cdef int64_t[::1] ov = out
    # stamp[t] == m + 1 marks time t as seen in row m; avoids per-row resets
    stamp_arr = np.zeros(cv.shape[0] + 2, dtype=np.int64)
    cdef int64_t[::1] stamp = stamp_arr
    cdef uint64_t key = <uint64_t>seed
    cdef uint64_t c0 = <uint64_t>start
    cdef Py_ssize_t m, j
    cdef int64_t t, count
    with nogil:
        for m in range(sv.shape[0]):
            count = 0
            for j in range(n_draw):
                t = _lookup(cv, _uniform(key, sv[m], c0 + j)) + 1
                if stamp[t] != m + 1:
                    stamp[t] = m + 1
                    count += 1
            ov[m] = count
    return out


def rows_inverse_cdf(cdfs, u):
    """Per row, the number of cdf entries <= u[row] (row-wise searchsorted right)."""
    cdef const double[:, ::1] cv = np.ascontiguousarray(cdfs, dtype=np.float64)
    cdef const double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    out = np.empty(cv.shape[0], dtype=np.int64)
    cdef int64_t[::1] ov = out
    cdef Py_ssize_t i
    for i in range(cv.shape[0]):
        ov[i] = _lookup(cv[i], uv[i])
    return out
