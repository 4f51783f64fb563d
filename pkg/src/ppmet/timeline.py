"""Interval algebra over speaker-labelled segments."""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

TOL = 1e-6


class SegmentError(ValueError):
    """Invalid segment; ``index`` points at the offending record when known."""

    def __init__(self, message: str, index: int | None = None):
        if index is not None:
            message = f"{message} (record {index})"
        super().__init__(message)
        self.index = index


@dataclass(frozen=True, order=True, slots=True)
class Segment:
    onset: float
    offset: float

    def __post_init__(self):
        if not (self.onset >= 0.0):
            raise SegmentError(f"negative onset {self.onset}")
        if not (self.offset - self.onset > 0.0) or self.offset == float("inf"):
            raise SegmentError(f"non-positive duration [{self.onset}, {self.offset})")

    @property
    def duration(self) -> float:
        return self.offset - self.onset

    def overlap(self, other: "Segment") -> float:
        return max(0.0, min(self.offset, other.offset) - max(self.onset, other.onset))


@dataclass(frozen=True, slots=True)
class SpeakerSegment:
    segment: Segment
    speaker: str

    def __post_init__(self):
        if not self.speaker:
            raise SegmentError("empty speaker label")

    @property
    def onset(self) -> float:
        return self.segment.onset

    @property
    def offset(self) -> float:
        return self.segment.offset

    @property
    def duration(self) -> float:
        return self.segment.duration


def _sort_key(s: SpeakerSegment):
    return (s.segment.onset, s.speaker, s.segment.offset)


@dataclass(frozen=True)
class Diarization:
    session: str
    segments: tuple[SpeakerSegment, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(sorted(self.segments, key=_sort_key)))

    @classmethod
    def from_tuples(cls, session: str, rows: Iterable[tuple[str, float, float]]) -> "Diarization":
        """Build from ``(speaker, onset, offset)`` rows; errors carry the row index."""
        segs = []
        for i, (spk, on, off) in enumerate(rows):
            try:
                segs.append(SpeakerSegment(Segment(float(on), float(off)), spk))
            except SegmentError as e:
                raise SegmentError(str(e), i) from None
        return cls(session, tuple(segs))

    @property
    def speakers(self) -> list[str]:
        return sorted({s.speaker for s in self.segments})

    def by_speaker(self) -> dict[str, list[Segment]]:
        out: dict[str, list[Segment]] = {}
        for s in self.segments:
            out.setdefault(s.speaker, []).append(s.segment)
        return out

    def relabel(self, mapping: Mapping[str, str]) -> "Diarization":
        return Diarization(
            self.session,
            tuple(SpeakerSegment(s.segment, mapping.get(s.speaker, s.speaker)) for s in self.segments),
        )

    def to_tuples(self) -> list[tuple[str, float, float]]:
        return [(s.speaker, s.onset, s.offset) for s in self.segments]


def merge_intervals(segs: Iterable[Segment]) -> list[Segment]:
    """Union of intervals; pieces closer than ``TOL`` are joined."""
    out: list[list[float]] = []
    for s in sorted(segs):
        if out and s.onset <= out[-1][1] + TOL:
            out[-1][1] = max(out[-1][1], s.offset)
        else:
            out.append([s.onset, s.offset])
    return [Segment(a, b) for a, b in out]


def normalize(d: Diarization) -> Diarization:
    """Merge overlapping or touching same-speaker segments."""
    merged = []
    for spk, segs in d.by_speaker().items():
        merged.extend(SpeakerSegment(s, spk) for s in merge_intervals(segs))
    return Diarization(d.session, tuple(merged))


def crop(d: Diarization, span: Segment) -> Diarization:
    keep = []
    for s in d.segments:
        on, off = max(s.onset, span.onset), min(s.offset, span.offset)
        if off - on > TOL:
            keep.append(SpeakerSegment(Segment(on, off), s.speaker))
    return Diarization(d.session, tuple(keep))


def speech_union(d: Diarization) -> list[Segment]:
    return merge_intervals(s.segment for s in d.segments)


def total_speech(d: Diarization) -> float:
    return sum(s.duration for s in d.segments)


def _snap_boundaries(values: Iterable[float]) -> list[float]:
    pts: list[float] = []
    for v in sorted(values):
        if not pts or v - pts[-1] > TOL:
            pts.append(v)
    return pts


def _index(pts: list[float], v: float) -> int:
    # nearest snapped boundary; every raw value is within TOL of one
    i = bisect.bisect_left(pts, v - TOL)
    return i


def homogeneous_regions(ds: Sequence[Diarization]) -> list[tuple[Segment, tuple[frozenset, ...]]]:
    """Split the union of activity into regions with constant per-input speaker sets.

    Gaps where no input has any active speaker are not returned.
    """
    if not ds:
        raise ValueError("homogeneous_regions needs at least one diarization")
    pts = _snap_boundaries(v for d in ds for s in d.segments for v in (s.onset, s.offset))
    if len(pts) < 2:
        return []
    # per input, per elementary interval: counts of active speakers
    starts: list[list[list[str]]] = [[[] for _ in pts] for _ in ds]
    ends: list[list[list[str]]] = [[[] for _ in pts] for _ in ds]
    for k, d in enumerate(ds):
        for s in d.segments:
            a, b = _index(pts, s.onset), _index(pts, s.offset)
            if a < b:
                starts[k][a].append(s.speaker)
                ends[k][b].append(s.speaker)
    active: list[dict[str, int]] = [{} for _ in ds]
    regions = []
    for i in range(len(pts) - 1):
        for k in range(len(ds)):
            for spk in ends[k][i]:
                active[k][spk] -= 1
                if active[k][spk] == 0:
                    del active[k][spk]
            for spk in starts[k][i]:
                active[k][spk] = active[k].get(spk, 0) + 1
        sets = tuple(frozenset(a) for a in active)
        if any(sets):
            regions.append((Segment(pts[i], pts[i + 1]), sets))
    return regions


def single_speaker_regions(d: Diarization, speaker: str) -> list[Segment]:
    """Maximal intervals where ``speaker`` is the only active speaker."""
    if speaker not in {s.speaker for s in d.segments}:
        return []
    solo = [seg for seg, (active,) in homogeneous_regions([d]) if active == {speaker}]
    return merge_intervals(solo)
