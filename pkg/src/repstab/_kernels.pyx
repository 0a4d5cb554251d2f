# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Pauli-frame sampler: one shot at a time, frames as 64-bit masks."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t, int32_t, uint8_t

cnp.import_array()

cdef enum:
    OP_H = 0
    OP_X = 1
    OP_CZ = 2
    OP_M = 3
    OP_R = 4
    OP_IDLE = 5
    OP_PAIRFLIP = 6
    OP_LEAK = 7
    MAX_SLOTS = 64

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double TO_UNIT = 1.0 / 9007199254740992.0


cdef inline uint64_t mix(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double uniform(uint64_t key, int64_t counter) nogil:
    cdef uint64_t step = (<uint64_t>(counter + 1)) * GOLDEN
    return <double>(mix(key + step) >> 11) * TO_UNIT


cdef inline void flip(uint64_t* x, uint64_t* z, int q, int code) nogil:
    cdef uint64_t bit = (<uint64_t>1) << q
    if code == 1 or code == 2:
        x[0] ^= bit
    if code == 2 or code == 3:
        z[0] ^= bit


def sample_flips(const int32_t[::1] op, const int32_t[::1] q0, const int32_t[::1] q1,
                 const int32_t[::1] cls, const int32_t[::1] meas, const int64_t[::1] draw,
                 const uint64_t[::1] mask, const int32_t[::1] pauli,
                 const double[::1] prob, const double[::1] prob2,
                 const double[:, ::1] rates, const uint64_t[::1] keys, int n_meas):
    cdef Py_ssize_t n = keys.shape[0]
    cdef Py_ssize_t size = op.shape[0]
    out = np.zeros((n, n_meas), dtype=np.uint8)
    cdef uint8_t[:, ::1] rec = out
    cdef Py_ssize_t j, i
    cdef uint64_t x, z, key, bit, xa, xb, m
    cdef int k, a, b, c, nm, idx, code, q
    cdef double p, u, u2
    cdef bint stuck[MAX_SLOTS]
    with nogil:
        for j in range(n):
            x = 0
            z = 0
            key = keys[j]
            for q in range(MAX_SLOTS):
                stuck[q] = False
            for i in range(size):
                k = op[i]
                a = q0[i]
                if k == OP_PAIRFLIP:
                    if uniform(key, draw[i]) < prob[i]:
                        m = mask[i]
                        if pauli[i] == 1:
                            x ^= m
                        else:
                            z ^= m
                    continue
                if k == OP_LEAK:
                    u = uniform(key, draw[i])
                    u2 = uniform(key, draw[i] + 1)
                    if stuck[q1[i]]:
                        stuck[q1[i]] = u < prob2[i]
                    else:
                        stuck[q1[i]] = u < prob[i]
                    if stuck[q1[i]] and u2 < 0.5:
                        flip(&x, &z, a, pauli[i])
                    continue
                bit = (<uint64_t>1) << a
                if k == OP_H:
                    xa = x & bit
                    if ((z & bit) != 0) != (xa != 0):
                        x ^= bit
                        z ^= bit
                elif k == OP_CZ:
                    b = q1[i]
                    xa = (x >> a) & 1
                    xb = (x >> b) & 1
                    z ^= (xa << b) | (xb << a)
                elif k == OP_M:
                    rec[j, meas[i]] = (x >> a) & 1
                elif k == OP_R:
                    x &= ~bit
                    z &= ~bit
                c = cls[i]
                if c < 0:
                    continue
                p = rates[j, c]
                if p <= 0.0:
                    continue
                u = uniform(key, draw[i])
                if not (u < p):
                    continue
                if k == OP_CZ:
                    nm = 15
                elif k == OP_M or k == OP_R:
                    nm = 1
                else:
                    nm = 3
                idx = <int>(u * nm / p)
                if idx > nm - 1:
                    idx = nm - 1
                if k == OP_CZ:
                    code = idx + 1
                    flip(&x, &z, a, code >> 2)
                    flip(&x, &z, q1[i], code & 3)
                elif k == OP_M:
                    rec[j, meas[i]] ^= 1
                elif k == OP_R:
                    x ^= bit
                else:
                    flip(&x, &z, a, idx + 1)
    return out
