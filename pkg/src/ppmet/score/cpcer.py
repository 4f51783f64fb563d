"""Concatenated minimum-permutation character error rate."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..ingest import AttributedTranscript
from .text import TextNormPolicy, edit_distance, normalize_text

BRUTEFORCE_MAX_SPEAKERS = 8


@dataclass(frozen=True)
class CpCerReport:
    substitutions: int
    insertions: int
    deletions: int
    ref_chars: int
    mapping: dict = field(default_factory=dict)

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def cp_cer(self) -> float:
        if self.ref_chars > 0:
            return self.errors / self.ref_chars
        return math.inf if self.errors else 0.0


def speaker_texts(t: AttributedTranscript, norm: TextNormPolicy = TextNormPolicy()) -> dict[str, str]:
    """Per-speaker text, utterances joined in onset order (ties keep input order)."""
    parts: dict[str, list[str]] = {}
    for u in t.utterances:
        parts.setdefault(u.speaker, []).append(normalize_text(u.text, norm))
    return {spk: "".join(p) for spk, p in parts.items()}


def _pair_ops(ref: dict[str, str], hyp: dict[str, str]):
    rl, hl = sorted(ref), sorted(hyp)
    ops = {(r, h): edit_distance(ref[r], hyp[h]) for r in rl for h in hl}
    return rl, hl, ops


def _packer(ref: dict[str, str], hyp: dict[str, str]):
    # lexicographic (errors, subs, ins) packed into one exact float64 integer
    k = sum(map(len, ref.values())) + sum(map(len, hyp.values())) + 1
    if k**3 >= 2**53:
        # float64 can no longer hold the packed key exactly; rank by errors alone
        return lambda s, i, d: float(s + i + d)

    def pack(s: int, i: int, d: int) -> float:
        return float((s + i + d) * k * k + s * k + i)

    return pack


def _report(ref, hyp, pairs) -> CpCerReport:
    s = i = d = 0
    mapping = {}
    matched_r, matched_h = set(), set()
    for r, h, (ps, pi, pd) in pairs:
        s, i, d = s + ps, i + pi, d + pd
        mapping[h] = r
        matched_r.add(r)
        matched_h.add(h)
    d += sum(len(ref[r]) for r in ref if r not in matched_r)
    i += sum(len(hyp[h]) for h in hyp if h not in matched_h)
    return CpCerReport(s, i, d, sum(map(len, ref.values())), mapping)


def cp_cer(
    ref: AttributedTranscript, hyp: AttributedTranscript, norm: TextNormPolicy = TextNormPolicy()
) -> CpCerReport:
    """Hungarian assignment over per-speaker concatenated texts."""
    rt, ht = speaker_texts(ref, norm), speaker_texts(hyp, norm)
    rl, hl, ops = _pair_ops(rt, ht)
    pack = _packer(rt, ht)
    n = len(rl) + len(hl)
    # square padding: ref i ~ dummy costs all deletions, dummy ~ hyp j all insertions
    cost = np.zeros((n, n))
    for a, r in enumerate(rl):
        for b, h in enumerate(hl):
            cost[a, b] = pack(*ops[(r, h)])
        cost[a, len(hl) :] = np.inf
        cost[a, len(hl) + a] = pack(0, 0, len(rt[r]))
    for b, h in enumerate(hl):
        cost[len(rl) :, b] = np.inf
        cost[len(rl) + b, b] = pack(0, len(ht[h]), 0)
    pairs = []
    if n:
        rows, cols = linear_sum_assignment(cost)
        for a, b in zip(rows, cols):
            if a < len(rl) and b < len(hl):
                pairs.append((rl[a], hl[b], ops[(rl[a], hl[b])]))
    return _report(rt, ht, pairs)


def _matchings(rl, hl):
    """Every injective partial matching ref -> hyp (including unmatched refs)."""
    def rec(i, used):
        if i == len(rl):
            yield ()
            return
        yield from rec(i + 1, used)
        for h in hl:
            if h not in used:
                for rest in rec(i + 1, used | {h}):
                    yield ((rl[i], h),) + rest

    return rec(0, frozenset())


def cp_cer_bruteforce(
    ref: AttributedTranscript, hyp: AttributedTranscript, norm: TextNormPolicy = TextNormPolicy()
) -> CpCerReport:
    """Exhaustive search over speaker matchings; reference oracle for :func:`cp_cer`."""
    rt, ht = speaker_texts(ref, norm), speaker_texts(hyp, norm)
    if max(len(rt), len(ht)) > BRUTEFORCE_MAX_SPEAKERS:
        raise ValueError(f"brute force limited to {BRUTEFORCE_MAX_SPEAKERS} speakers per side")
    rl, hl, ops = _pair_ops(rt, ht)
    pack = _packer(rt, ht)
    best_key, best = None, None
    for m in _matchings(rl, hl):
        rep = _report(rt, ht, [(r, h, ops[(r, h)]) for r, h in m])
        key = pack(rep.substitutions, rep.insertions, rep.deletions)
        if best_key is None or key < best_key:
            best_key, best = key, rep
    return best

