# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled Levenshtein core.

Alignment weights are packed as ``cost*K*K + subs*K + ins`` so one integer
minimum picks the cheapest alignment, then fewest substitutions, then fewest
insertions.
"""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, uint32_t

cnp.import_array()


def _codepoints(str s):
    return np.frombuffer(s.encode("utf-32-le"), dtype=np.uint32)


def edit_ops(str ref, str hyp):
    cdef const uint32_t[:] a = _codepoints(ref)
    cdef const uint32_t[:] b = _codepoints(hyp)
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = b.shape[0]
    cdef int64_t K = n + m + 1
    cdef int64_t DEL = K * K
    cdef int64_t INS = K * K + 1
    cdef int64_t SUB = K * K + K
    cdef int64_t[:] prev = np.empty(m + 1, dtype=np.int64)
    cdef int64_t[:] cur = np.empty(m + 1, dtype=np.int64)
    cdef int64_t[:] tmp
    cdef Py_ssize_t i, j
    cdef int64_t best, cand
    cdef uint32_t ai

    for j in range(m + 1):
        prev[j] = j * INS
    for i in range(1, n + 1):
        ai = a[i - 1]
        cur[0] = i * DEL
        for j in range(1, m + 1):
            best = prev[j - 1] + (0 if b[j - 1] == ai else SUB)
            cand = prev[j] + DEL
            if cand < best:
                best = cand
            cand = cur[j - 1] + INS
            if cand < best:
                best = cand
            cur[j] = best
        tmp = prev
        prev = cur
        cur = tmp

    cdef int64_t w = prev[m]
    cdef int64_t ins = w % K
    cdef int64_t subs = (w // K) % K
    cdef int64_t cost = w // (K * K)
    return int(subs), int(ins), int(cost - subs - ins)
