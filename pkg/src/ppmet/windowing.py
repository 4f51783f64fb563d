"""Embedding windows over VAD regions and pooling of windows into speaker prompts."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ingest import EmbeddingSequence
from .timeline import TOL, Diarization, Segment, single_speaker_regions

PAD_PREFIX = "<pad"


class DegeneratePoolError(ValueError):
    pass


@dataclass(frozen=True)
class WindowingPolicy:
    window: float = 3.0
    shift: float = 1.5
    min_window: float = 1.5

    def __post_init__(self):
        if not self.window > 0 or not self.shift > 0:
            raise ValueError("window and shift must be positive")
        if self.shift > self.window:
            raise ValueError("shift > window")
        if not 0 < self.min_window <= self.window:
            raise ValueError("min_window must be in (0, window]")


@dataclass(frozen=True, eq=False)
class Prompt:
    speaker: str
    vector: np.ndarray
    support: float

    @property
    def is_padding(self) -> bool:
        return self.support == 0.0

    def __eq__(self, other):
        if not isinstance(other, Prompt):
            return NotImplemented
        return (
            self.speaker == other.speaker
            and self.support == other.support
            and np.array_equal(self.vector, other.vector)
        )


def padding_label(i: int) -> str:
    return f"{PAD_PREFIX}{i}>"


def is_padding_label(label: str) -> bool:
    return label.startswith(PAD_PREFIX)


def subsegment(vad: Sequence[Segment], policy: WindowingPolicy = WindowingPolicy()) -> list[Segment]:
    """Cut each VAD region into fixed windows, right-aligning a tail window.

    Regions shorter than ``policy.window`` give one window spanning the region.
    """
    out = []
    for seg in sorted(vad):
        if seg.duration < policy.window - TOL:
            out.append(seg)
            continue
        k = 0
        last_end = seg.onset
        while seg.onset + k * policy.shift + policy.window <= seg.offset + TOL:
            on = seg.onset + k * policy.shift
            last_end = min(on + policy.window, seg.offset)
            out.append(Segment(on, last_end))
            k += 1
        if last_end < seg.offset - TOL:
            out.append(Segment(seg.offset - policy.window, seg.offset))
    return out


def pool(vectors) -> np.ndarray:
    """Normalize each vector, average, normalize the mean.

    Rows are summed in a canonical order so the result does not depend on
    input order.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("pool needs a non-empty list of vectors")
    if not np.isfinite(x).all():
        raise ValueError("non-finite component")
    norms = np.linalg.norm(x, axis=1)
    if (norms == 0).any():
        raise DegeneratePoolError("zero vector in pool input")
    x = x / norms[:, None]
    x = x[np.lexsort(x.T[::-1])]
    mean = x.sum(axis=0) / x.shape[0]
    n = np.linalg.norm(mean)
    if n < 1e-9:
        raise DegeneratePoolError("pooled mean has near-zero norm")
    return mean / n


def _overlap_with(win: Segment, regions: list[Segment]) -> float:
    return sum(win.overlap(r) for r in regions)


def extract_prompts(
    d: Diarization, emb: EmbeddingSequence, min_inside: float = 1.0
) -> list["Prompt"]:
    """One prompt per speaker from windows that hold only that speaker.

    Falls back to windows at least half inside, then to any window touching
    the speaker; a speaker with no usable window gets a zero prompt.
    """
    speakers = d.speakers
    if not speakers:
        raise ValueError("diarization has no speakers")
    by_spk = d.by_speaker()
    wins = emb.segments
    prompts = []
    for spk in speakers:
        solo = single_speaker_regions(d, spk)
        frac = np.array([_overlap_with(w, solo) / w.duration for w in wins])
        chosen = np.flatnonzero(frac >= min_inside - TOL)
        if chosen.size == 0 and min_inside > 0.5:
            chosen = np.flatnonzero(frac >= 0.5 - TOL)
        if chosen.size == 0:
            touch = np.array([_overlap_with(w, by_spk[spk]) for w in wins])
            chosen = np.flatnonzero(touch > TOL)
        vec = None
        if chosen.size:
            try:
                vec = pool(emb.vectors[chosen])
            except DegeneratePoolError:
                vec = None
        if vec is None:
            prompts.append(Prompt(spk, np.zeros(emb.dim), 0.0))
        else:
            support = float(sum(wins[i].duration for i in chosen))
            prompts.append(Prompt(spk, vec, support))
    return prompts


def pad_prompts(prompts: Sequence[Prompt], target_count: int) -> list[Prompt]:
    if target_count < len(prompts):
        raise ValueError(f"{len(prompts)} prompts exceed target count {target_count}")
    if not prompts:
        raise ValueError("cannot infer prompt dimension from an empty list")
    dim = len(prompts[0].vector)
    out = list(prompts)
    for i in range(target_count - len(prompts)):
        out.append(Prompt(padding_label(i), np.zeros(dim), 0.0))
    return out
