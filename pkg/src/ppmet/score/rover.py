"""ROVER: align hypotheses into a transition network and vote per slot."""
from __future__ import annotations

from typing import Hashable, Sequence

NULL = None

# alignment moves; listed in tie-break preference order
_MATCH, _SKIP, _INSERT = 0, 1, 2


class _Network:
    """Slots of aligned entries; ``slots[j][k]`` is hypothesis k's token (or NULL)."""

    def __init__(self, first: Sequence[Hashable]):
        self.n_hyps = 1
        self.slots: list[list] = [[tok] for tok in first]

    def add(self, hyp: Sequence[Hashable]) -> None:
        slots, k = self.slots, self.n_hyps
        n, m = len(slots), len(hyp)
        tokens = [set(s) - {NULL} for s in slots]
        has_null = [NULL in s for s in slots]
        inf = n + m + 1
        skip = [0 if z else 1 for z in has_null]
        prev = [inf] * (m + 1)
        move = [[_INSERT] * (m + 1) for _ in range(n + 1)]
        prev[0] = 0
        for j in range(1, m + 1):
            prev[j] = j
        for i in range(1, n + 1):
            toks, sk = tokens[i - 1], skip[i - 1]
            cur = [prev[0] + sk] + [0] * m
            row = move[i]
            row[0] = _SKIP
            for j in range(1, m + 1):
                best = prev[j - 1] + (0 if hyp[j - 1] in toks else 1)
                arg = _MATCH
                c = prev[j] + sk
                if c < best:
                    best, arg = c, _SKIP
                c = cur[j - 1] + 1
                if c < best:
                    best, arg = c, _INSERT
                cur[j] = best
                row[j] = arg
            prev = cur
        # backtrace into a new slot list
        out: list[list] = []
        i, j = n, m
        while i or j:
            mv = move[i][j]
            if mv == _MATCH:
                out.append(slots[i - 1] + [hyp[j - 1]])
                i, j = i - 1, j - 1
            elif mv == _SKIP:
                out.append(slots[i - 1] + [NULL])
                i -= 1
            else:
                out.append([NULL] * k + [hyp[j - 1]])
                j -= 1
        out.reverse()
        self.slots = out
        self.n_hyps += 1


def _sort_key(tok):
    # NULL sorts before any token in the final lexicographic tie-break
    return (0, "") if tok is NULL else (1, str(tok))


def rover(hyps: Sequence[Sequence[Hashable]], weights: Sequence[float] | None = None) -> list:
    """Slot-wise weighted vote; NULL is a votable entry and is dropped when it wins.

    Ties go to the token placed by the earliest hypothesis, then lexicographic.
    """
    if not hyps:
        raise ValueError("rover needs at least one hypothesis")
    w = [1.0] * len(hyps) if weights is None else [float(x) for x in weights]
    if len(w) != len(hyps) or any(x <= 0 for x in w):
        raise ValueError("weights must be positive, one per hypothesis")
    net = _Network(list(hyps[0]))
    for h in hyps[1:]:
        net.add(list(h))
    out = []
    for slot in net.slots:
        score: dict = {}
        first: dict = {}
        for k, tok in enumerate(slot):
            score[tok] = score.get(tok, 0.0) + w[k]
            first.setdefault(tok, k)
        win = min(score, key=lambda t: (-round(score[t], 12), first[t], _sort_key(t)))
        if win is not NULL:
            out.append(win)
    return out


def rover_text(texts: Sequence[str], weights: Sequence[float] | None = None) -> str:
    return "".join(rover([list(t) for t in texts], weights))
