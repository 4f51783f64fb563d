"""Diarization error rate with the optimal one-to-one speaker mapping."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..timeline import TOL, Diarization, Segment, homogeneous_regions, merge_intervals, normalize


@dataclass(frozen=True)
class DerReport:
    miss: float
    false_alarm: float
    confusion: float
    total_ref: float
    mapping: dict = field(default_factory=dict)

    @property
    def der(self) -> float:
        err = self.miss + self.false_alarm + self.confusion
        if self.total_ref > 0:
            return err / self.total_ref
        return math.inf if err > 0 else 0.0


def _no_score_zones(ref: Diarization, collar: float) -> list[Segment]:
    if collar <= 0:
        return []
    zones = []
    for s in ref.segments:
        for t in (s.onset, s.offset):
            zones.append(Segment(max(0.0, t - collar), t + collar))
    return merge_intervals(zones)


def _scored_pieces(region: Segment, zones: list[Segment]) -> float:
    """Duration of ``region`` outside the collar zones."""
    dur = region.duration
    for z in zones:
        if z.onset >= region.offset:
            break
        dur -= region.overlap(z)
    return max(dur, 0.0)


def der(ref: Diarization, hyp: Diarization, collar: float = 0.0, score_overlap: bool = True) -> DerReport:
    ref, hyp = normalize(ref), normalize(hyp)
    zones = _no_score_zones(ref, collar)
    rows = []
    for region, (r, h) in homogeneous_regions([ref, hyp]):
        if not score_overlap and len(r) > 1:
            continue
        dur = _scored_pieces(region, zones) if zones else region.duration
        if dur > TOL * 1e-3:
            rows.append((dur, r, h))

    ref_labels = sorted({x for _, r, _ in rows for x in r})
    hyp_labels = sorted({x for _, _, h in rows for x in h})
    ri = {x: i for i, x in enumerate(ref_labels)}
    hi = {x: i for i, x in enumerate(hyp_labels)}
    co = np.zeros((len(hyp_labels), len(ref_labels)))
    for dur, r, h in rows:
        for a in h:
            for b in r:
                co[hi[a], ri[b]] += dur
    mapping = {}
    if co.size:
        rr, cc = linear_sum_assignment(co, maximize=True)
        mapping = {hyp_labels[a]: ref_labels[b] for a, b in zip(rr, cc) if co[a, b] > 0}

    miss = fa = conf = total = 0.0
    for dur, r, h in rows:
        nr, nh = len(r), len(h)
        correct = sum(1 for a in h if mapping.get(a) in r)
        total += nr * dur
        miss += max(0, nr - nh) * dur
        fa += max(0, nh - nr) * dur
        conf += (min(nr, nh) - correct) * dur
    return DerReport(miss, fa, conf, total, mapping)
