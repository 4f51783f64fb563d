"""TS-VAD posterior post-processing and decode-time prompt refinement."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy.ndimage import median_filter

from .ingest import ActivityMatrix, EmbeddingSequence
from .timeline import TOL, Diarization, Segment, SpeakerSegment, normalize
from .windowing import Prompt, extract_prompts, is_padding_label, pad_prompts

log = logging.getLogger(__name__)


class OracleError(RuntimeError):
    def __init__(self, message: str, iteration: int | None = None):
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)
        self.iteration = iteration


class ActivityOracle(Protocol):
    def __call__(self, session: str, prompts: Sequence[Prompt]) -> ActivityMatrix: ...


@dataclass(frozen=True)
class PostPolicy:
    median_width: int = 11
    threshold: float = 0.5
    min_on: float = 0.2
    min_off: float = 0.3

    def __post_init__(self):
        if self.median_width < 1 or self.median_width % 2 == 0:
            raise ValueError("median_width must be odd and >= 1")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must be in (0, 1)")
        if self.min_on < 0 or self.min_off < 0:
            raise ValueError("min_on/min_off must be non-negative")


def smooth(m: ActivityMatrix, width: int) -> ActivityMatrix:
    if width < 1 or width % 2 == 0:
        raise ValueError(f"median width must be odd, got {width}")
    if width == 1:
        return m
    probs = median_filter(m.probs, size=(width, 1), mode="nearest")
    return ActivityMatrix(m.session, m.speakers, probs, m.frame_shift)


def _runs(on: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate([[False], on, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def binarize(m: ActivityMatrix, policy: PostPolicy = PostPolicy()) -> Diarization:
    """Threshold each column, close short gaps, drop short segments."""
    shift = m.frame_shift
    segs = []
    for col, spk in enumerate(m.speakers):
        if is_padding_label(spk):
            continue
        runs = _runs(m.probs[:, col] >= policy.threshold)
        merged: list[list[int]] = []
        for a, b in runs:
            if merged and (a - merged[-1][1]) * shift < policy.min_off - TOL:
                merged[-1][1] = b
            else:
                merged.append([a, b])
        for a, b in merged:
            if (b - a) * shift < policy.min_on - TOL:
                continue
            segs.append(SpeakerSegment(Segment(round(a * shift, 9), round(b * shift, 9)), spk))
    return normalize(Diarization(m.session, tuple(segs)))


def segments_to_activity(
    d: Diarization, frame_shift: float, speakers: Sequence[str], n_frames: int | None = None
) -> ActivityMatrix:
    """Hard 0/1 activity: a frame is on when its centre lies inside a segment."""
    speakers = tuple(speakers)
    col = {s: i for i, s in enumerate(speakers)}
    unknown = {s.speaker for s in d.segments} - set(col)
    if unknown:
        raise ValueError(f"speakers missing from column list: {sorted(unknown)}")
    if n_frames is None:
        end = max((s.offset for s in d.segments), default=0.0)
        n_frames = max(1, int(np.ceil(end / frame_shift - 1e-9)))
    probs = np.zeros((n_frames, len(speakers)))
    centres = (np.arange(n_frames) + 0.5) * frame_shift
    for s in d.segments:
        lo = np.searchsorted(centres, s.onset, side="left")
        hi = np.searchsorted(centres, s.offset, side="left")
        probs[lo:hi, col[s.speaker]] = 1.0
    return ActivityMatrix(d.session, speakers, probs, frame_shift)


@dataclass
class RefineTrace:
    diarizations: list[Diarization] = field(default_factory=list)
    prompts: list[list[Prompt]] = field(default_factory=list)


def _initial_prompts(d: Diarization, emb: EmbeddingSequence, max_speakers: int) -> list[Prompt]:
    prompts = extract_prompts(d, emb)
    if len(prompts) > max_speakers:
        keep = sorted(prompts, key=lambda p: (-p.support, p.speaker))[:max_speakers]
        dropped = sorted({p.speaker for p in prompts} - {p.speaker for p in keep})
        log.warning("%s: keeping %d of %d speakers, dropped %s", d.session, max_speakers, len(prompts), dropped)
        prompts = [p for p in prompts if p in keep]
    return pad_prompts(prompts, max_speakers)


def refine(
    d0: Diarization,
    emb: EmbeddingSequence,
    oracle: ActivityOracle,
    policy: PostPolicy = PostPolicy(),
    iterations: int = 1,
    max_speakers: int = 4,
) -> tuple[Diarization, list[Prompt], RefineTrace]:
    """Alternate prompt extraction and oracle decoding for ``iterations`` rounds."""
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    d = normalize(d0)
    trace = RefineTrace([d], [])
    prompts = _initial_prompts(d, emb, max_speakers)
    trace.prompts.append(prompts)
    for it in range(1, iterations + 1):
        try:
            m = oracle(d.session, prompts)
        except Exception as e:
            raise OracleError(str(e), it) from e
        if not isinstance(m, ActivityMatrix) or len(m.speakers) != len(prompts):
            raise OracleError("oracle output does not match the prompt list", it)
        m = ActivityMatrix(m.session, tuple(p.speaker for p in prompts), m.probs, m.frame_shift)
        d = binarize(smooth(m, policy.median_width), policy)
        trace.diarizations.append(d)
        if not d.segments:
            log.warning("%s: iteration %d produced no speech; keeping previous prompts", d.session, it)
            continue
        prompts = _initial_prompts(d, emb, max_speakers)
        trace.prompts.append(prompts)
    return d, prompts, trace
