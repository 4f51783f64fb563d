"""Overlap-aware fusion of diarization hypotheses (DOVER-Lap style)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .timeline import TOL, Diarization, Segment, SpeakerSegment, homogeneous_regions, normalize


@dataclass(frozen=True)
class FusionPolicy:
    weights: tuple[float, ...] | None = None
    rank_weighting: bool = False

    def resolve(self, m: int) -> np.ndarray:
        """Normalized per-hypothesis weights for ``m`` inputs."""
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != (m,):
                raise ValueError(f"{len(w)} weights for {m} hypotheses")
            if (w <= 0).any():
                raise ValueError("weights must be positive")
        elif self.rank_weighting:
            w = np.arange(m, 0, -1, dtype=np.float64)
        else:
            w = np.ones(m)
        return w / w.sum()


def map_labels(ds: Sequence[Diarization], weights: Sequence[float] | None = None) -> list[Diarization]:
    """Relabel every hypothesis onto the label space of the first one.

    Each hypothesis is matched against the weighted union of those already
    mapped by maximum total overlap; unmatched speakers get fresh labels.
    """
    if not ds:
        raise ValueError("map_labels needs at least one hypothesis")
    w = np.ones(len(ds)) if weights is None else np.asarray(weights, dtype=np.float64)
    ds = [normalize(d) for d in ds]
    out = [ds[0]]
    # cumulative weighted activity per mapped label
    pool: dict[str, list[tuple[Segment, float]]] = {}
    used: set[str] = set()
    for s in ds[0].segments:
        pool.setdefault(s.speaker, []).append((s.segment, w[0]))
        used.add(s.speaker)

    for k in range(1, len(ds)):
        hyp = ds[k].by_speaker()
        hyp_labels = sorted(hyp)
        pool_labels = sorted(pool)
        mapping: dict[str, str] = {}
        if hyp_labels and pool_labels:
            score = np.zeros((len(hyp_labels), len(pool_labels)))
            for i, h in enumerate(hyp_labels):
                for j, p in enumerate(pool_labels):
                    score[i, j] = sum(wt * s.overlap(t) for t, wt in pool[p] for s in hyp[h])
            rows, cols = linear_sum_assignment(score, maximize=True)
            for r, c in zip(rows, cols):
                if score[r, c] > TOL:
                    mapping[hyp_labels[r]] = pool_labels[c]
        for h in hyp_labels:
            if h in mapping:
                continue
            name = h
            n = 1
            while name in used:
                name = f"{h}_{n}"
                n += 1
            mapping[h] = name
            used.add(name)
        mapped = ds[k].relabel(mapping)
        for s in mapped.segments:
            pool.setdefault(s.speaker, []).append((s.segment, w[k]))
        out.append(mapped)
    return out


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-9))


def vote(ds: Sequence[Diarization], policy: FusionPolicy = FusionPolicy()) -> Diarization:
    """Regional weighted voting over label-mapped hypotheses.

    Per region, the speaker count is the weighted mean of the hypotheses'
    counts (rounded half up), raised to include every label backed by more
    than half the weight, and capped at the largest count any hypothesis
    reports there. Equal scores go to the label with more weighted speech in
    the whole session, then to the lexicographically smaller label.
    """
    if not ds:
        raise ValueError("vote needs at least one hypothesis")
    w = policy.resolve(len(ds))
    session = ds[0].session
    # name-free tie-break: labels with more weighted speech overall rank first
    mass: dict[str, float] = {}
    for wt, d in zip(w, ds):
        for s in d.segments:
            mass[s.speaker] = mass.get(s.speaker, 0.0) + wt * s.duration
    segs = []
    for region, sets in homogeneous_regions(ds):
        counts = np.array([len(s) for s in sets], dtype=np.float64)
        n = _round_half_up(float(w @ counts))
        if n == 0:
            continue
        score: dict[str, float] = {}
        for wt, active in zip(w, sets):
            for lab in active:
                score[lab] = score.get(lab, 0.0) + wt
        majority = sum(1 for v in score.values() if v > 0.5 + 1e-12)
        n = min(max(n, majority), int(counts.max()))
        ranked = sorted(score, key=lambda lab: (-round(score[lab], 12), -round(mass[lab], 9), lab))
        segs.extend(SpeakerSegment(region, lab) for lab in ranked[:n])
    return normalize(Diarization(session, tuple(segs)))


def dover_lap(ds: Sequence[Diarization], policy: FusionPolicy = FusionPolicy()) -> Diarization:
    w = policy.resolve(len(ds)) if ds else None
    return vote(map_labels(ds, w), policy)
