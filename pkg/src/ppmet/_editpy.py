"""Pure numpy Levenshtein core, row-vectorized.

Same packed-weight trick as the compiled kernel; the in-row insertion chain
is resolved with a running minimum.
"""
import numpy as np


def _codepoints(s: str) -> np.ndarray:
    return np.frombuffer(s.encode("utf-32-le"), dtype=np.uint32)


def edit_ops(ref: str, hyp: str) -> tuple[int, int, int]:
    a = _codepoints(ref)
    b = _codepoints(hyp)
    n, m = len(a), len(b)
    K = n + m + 1
    DEL = K * K
    INS = K * K + 1
    SUB = K * K + K
    ramp = np.arange(m + 1, dtype=np.int64) * INS
    prev = ramp.copy()
    cur = np.empty(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        diag = prev[:-1] + np.where(b == a[i - 1], 0, SUB)
        cur[0] = i * DEL
        np.minimum(diag, prev[1:] + DEL, out=cur[1:])
        cur -= ramp
        np.minimum.accumulate(cur, out=cur)
        cur += ramp
        prev, cur = cur, prev
    w = int(prev[m])
    ins = w % K
    subs = (w // K) % K
    cost = w // (K * K)
    return subs, ins, cost - subs - ins
