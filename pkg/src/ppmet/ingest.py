"""Readers and writers for RTTM, transcript TSV, PPEMB1 and PPMAT1."""
from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from decimal import Decimal
from typing import BinaryIO, Iterable, Mapping

import numpy as np

from .timeline import Diarization, Segment, SegmentError, SpeakerSegment

log = logging.getLogger(__name__)

EMB_MAGIC = b"PPEMB1\n"
MAT_MAGIC = b"PPMAT1\n"


class FormatError(ValueError):
    """Malformed input. ``kind`` names the failure, ``line``/``record`` locate it."""

    def __init__(self, kind: str, message: str, line: int | None = None, record: int | None = None):
        loc = f", line {line}" if line is not None else ""
        super().__init__(f"{message}{loc}")
        self.kind = kind
        self.line = line
        self.record = record


@dataclass(frozen=True, eq=False)
class EmbeddingSequence:
    session: str
    segments: tuple[Segment, ...]
    vectors: np.ndarray  # (n, dim) float32

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=np.float32)
        if vec.ndim != 2 or vec.shape[0] != len(self.segments):
            raise ValueError("vectors must be (len(segments), dim)")
        if not np.isfinite(vec).all():
            raise ValueError("non-finite embedding component")
        order = sorted(range(len(self.segments)), key=lambda i: (self.segments[i].onset, i))
        if order != list(range(len(order))):
            vec = vec[order]
            object.__setattr__(self, "segments", tuple(self.segments[i] for i in order))
        object.__setattr__(self, "vectors", vec)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self):
        return len(self.segments)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingSequence):
            return NotImplemented
        return (
            self.session == other.session
            and self.segments == other.segments
            and self.vectors.shape == other.vectors.shape
            and bool(np.array_equal(self.vectors, other.vectors))
        )


@dataclass(frozen=True)
class Utterance:
    speaker: str
    segment: Segment
    text: str


@dataclass(frozen=True)
class AttributedTranscript:
    session: str
    utterances: tuple[Utterance, ...] = field(default_factory=tuple)

    def __post_init__(self):
        # stable sort keeps input order for equal (onset, speaker)
        ordered = sorted(self.utterances, key=lambda u: (u.segment.onset, u.speaker))
        object.__setattr__(self, "utterances", tuple(ordered))

    @property
    def speakers(self) -> list[str]:
        return sorted({u.speaker for u in self.utterances})


@dataclass(frozen=True, eq=False)
class ActivityMatrix:
    session: str
    speakers: tuple[str, ...]
    probs: np.ndarray  # (frames, speakers)
    frame_shift: float = 0.08

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
            raise FormatError("empty", "empty matrix")
        if p.shape[1] != len(self.speakers):
            raise ValueError("speaker labels do not match matrix columns")
        if not np.isfinite(p).all() or p.min() < 0.0 or p.max() > 1.0:
            raise FormatError("range", "probability out of range")
        if not self.frame_shift > 0:
            raise ValueError("frame_shift must be positive")
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "speakers", tuple(self.speakers))

    @property
    def n_frames(self) -> int:
        return self.probs.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ActivityMatrix):
            return NotImplemented
        return (
            self.session == other.session
            and self.speakers == other.speakers
            and self.frame_shift == other.frame_shift
            and bool(np.array_equal(self.probs, other.probs))
        )


# ---------------------------------------------------------------- RTTM


def parse_rttm(lines: Iterable[str]) -> dict[str, Diarization]:
    """Parse SPEAKER records; other record types are skipped and counted."""
    rows: dict[str, list[SpeakerSegment]] = {}
    skipped = 0
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if fields[0] != "SPEAKER":
            skipped += 1
            continue
        if len(fields) < 8:
            raise FormatError("fields", f"expected at least 8 fields, got {len(fields)}", line=lineno)
        try:
            tbeg, tdur = float(fields[3]), float(fields[4])
        except ValueError:
            raise FormatError("time", "unparsable time", line=lineno) from None
        if not (math.isfinite(tbeg) and math.isfinite(tdur)):
            raise FormatError("time", "non-finite time", line=lineno)
        if tdur <= 0:
            raise FormatError("duration", "non-positive duration", line=lineno)
        try:
            # decimal sum: "9.760 7.680" must end at exactly 17.44, not 17.439999...
            tend = float(Decimal(fields[3]) + Decimal(fields[4]))
            seg = SpeakerSegment(Segment(tbeg, tend), fields[7])
        except SegmentError as e:
            raise FormatError("segment", str(e), line=lineno) from None
        rows.setdefault(fields[1], []).append(seg)
    if skipped:
        log.warning("skipped %d non-SPEAKER RTTM records", skipped)
    return {sess: Diarization(sess, tuple(segs)) for sess, segs in rows.items()}


def read_rttm(path) -> dict[str, Diarization]:
    with open(path, encoding="utf-8") as f:
        return parse_rttm(f)


def write_rttm(ds: Mapping[str, Diarization]) -> str:
    out = []
    for sess in sorted(ds):
        for s in ds[sess].segments:
            out.append(
                f"SPEAKER {sess} 1 {s.onset:.3f} {s.offset - s.onset:.3f} <NA> <NA> {s.speaker} <NA> <NA>\n"
            )
    return "".join(out)


# ---------------------------------------------------------------- transcripts


def parse_transcript(lines: Iterable[str]) -> dict[str, AttributedTranscript]:
    rows: dict[str, list[Utterance]] = {}
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\n").rstrip("\r")
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise FormatError("fields", f"expected 5 tab-separated fields, got {len(fields)}", line=lineno)
        sess, spk, start, end, text = fields
        try:
            seg = Segment(float(start), float(end))
        except SegmentError as e:
            raise FormatError("segment", str(e), line=lineno) from None
        except ValueError:
            raise FormatError("time", "unparsable time", line=lineno) from None
        if not spk:
            raise FormatError("speaker", "empty speaker", line=lineno)
        rows.setdefault(sess, []).append(Utterance(spk, seg, text))
    return {sess: AttributedTranscript(sess, tuple(u)) for sess, u in rows.items()}


def read_transcript(path) -> dict[str, AttributedTranscript]:
    with open(path, encoding="utf-8", newline="") as f:
        return parse_transcript(f)


def write_transcript(ts: Mapping[str, AttributedTranscript]) -> str:
    out = []
    for sess in sorted(ts):
        for u in ts[sess].utterances:
            if "\t" in u.text or "\n" in u.text:
                raise ValueError("transcript text may not contain tabs or newlines")
            out.append(f"{sess}\t{u.speaker}\t{u.segment.onset:.3f}\t{u.segment.offset:.3f}\t{u.text}\n")
    return "".join(out)


# ---------------------------------------------------------------- binary helpers


def _header(fields: list[tuple[str, str]]) -> bytes:
    for k, v in fields:
        if not v or any(c.isspace() for c in v):
            raise ValueError(f"header value for {k!r} must be non-empty without whitespace")
    return (" ".join(f"{k}={v}" for k, v in fields) + "\n").encode("utf-8")


def _read_header(stream: BinaryIO, magic: bytes) -> dict[str, str]:
    got = stream.read(len(magic))
    if got != magic:
        raise FormatError("magic", "bad magic")
    line = stream.readline()
    if not line.endswith(b"\n"):
        raise FormatError("header", "truncated header")
    out = {}
    for tok in line.decode("utf-8").split():
        k, sep, v = tok.partition("=")
        if not sep:
            raise FormatError("header", f"bad header token {tok!r}")
        out[k] = v
    return out


def _int_field(h: dict[str, str], key: str) -> int:
    try:
        v = int(h[key])
    except (KeyError, ValueError):
        raise FormatError("header", f"missing or invalid {key}") from None
    if v < 0:
        raise FormatError("header", f"negative {key}")
    return v


def _labels(h: dict[str, str], n: int, prefix: str) -> tuple[str, ...]:
    if "labels" in h:
        labels = tuple(h["labels"].split(","))
        if len(labels) != n:
            raise FormatError("header", "label count mismatch")
        return labels
    return tuple(f"{prefix}{i}" for i in range(n))


# ---------------------------------------------------------------- PPEMB1


def _pack_records(onsets, offsets, vectors: np.ndarray) -> bytes:
    n, dim = vectors.shape
    rec = np.dtype([("on", "<f8"), ("off", "<f8"), ("v", "<f4", (dim,))])
    arr = np.empty(n, dtype=rec)
    arr["on"] = onsets
    arr["off"] = offsets
    arr["v"] = vectors
    return arr.tobytes()


def _unpack_records(stream: BinaryIO, count: int, dim: int):
    rec = np.dtype([("on", "<f8"), ("off", "<f8"), ("v", "<f4", (dim,))])
    raw = stream.read(rec.itemsize * count)
    got = len(raw) // rec.itemsize
    if got < count:
        raise FormatError("truncated", f"truncated at record {got}", record=got)
    if stream.read(1):
        raise FormatError("trailing", "trailing bytes after last record")
    arr = np.frombuffer(raw, dtype=rec)
    vec = np.ascontiguousarray(arr["v"]).reshape(count, dim)
    bad = ~np.isfinite(vec).all(axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        raise FormatError("nan", f"non-finite component in record {i}", record=i)
    return arr["on"].astype(float), arr["off"].astype(float), vec


def write_embeddings(emb: EmbeddingSequence) -> bytes:
    head = _header([("dim", str(emb.dim)), ("count", str(len(emb))), ("session", emb.session)])
    on = [s.onset for s in emb.segments]
    off = [s.offset for s in emb.segments]
    return EMB_MAGIC + head + _pack_records(on, off, emb.vectors)


def read_embeddings(stream: BinaryIO | bytes) -> EmbeddingSequence:
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    h = _read_header(stream, EMB_MAGIC)
    dim, count = _int_field(h, "dim"), _int_field(h, "count")
    if dim < 1:
        raise FormatError("dim", "dim mismatch: dim must be positive")
    on, off, vec = _unpack_records(stream, count, dim)
    segs = []
    for i, (a, b) in enumerate(zip(on, off)):
        try:
            segs.append(Segment(float(a), float(b)))
        except SegmentError as e:
            raise FormatError("segment", f"{e} in record {i}", record=i) from None
    return EmbeddingSequence(h.get("session", ""), tuple(segs), vec)


# prompt files reuse PPEMB1: onset = offset = support seconds, labels in the header


def write_prompts(session: str, prompts) -> bytes:
    if not prompts:
        raise ValueError("no prompts to write")
    vec = np.stack([np.asarray(p.vector, dtype=np.float32) for p in prompts])
    head = _header(
        [
            ("dim", str(vec.shape[1])),
            ("count", str(len(prompts))),
            ("session", session),
            ("labels", ",".join(p.speaker for p in prompts)),
        ]
    )
    sup = [float(p.support) for p in prompts]
    return EMB_MAGIC + head + _pack_records(sup, sup, vec)


def read_prompts(stream: BinaryIO | bytes):
    from .windowing import Prompt

    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    h = _read_header(stream, EMB_MAGIC)
    dim, count = _int_field(h, "dim"), _int_field(h, "count")
    on, _, vec = _unpack_records(stream, count, dim)
    labels = _labels(h, count, "spk")
    return h.get("session", ""), [Prompt(lab, v.astype(np.float64), float(s)) for lab, v, s in zip(labels, vec, on)]


# ---------------------------------------------------------------- PPMAT1


def write_activity(m: ActivityMatrix) -> bytes:
    fields = [
        ("frames", str(m.n_frames)),
        ("speakers", str(len(m.speakers))),
        ("frame_shift", repr(float(m.frame_shift))),
        ("session", m.session),
    ]
    if any("," in s for s in m.speakers):
        raise ValueError("speaker labels may not contain commas")
    fields.append(("labels", ",".join(m.speakers)))
    return MAT_MAGIC + _header(fields) + m.probs.astype("<f4").tobytes()


def read_activity(stream: BinaryIO | bytes) -> ActivityMatrix:
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    h = _read_header(stream, MAT_MAGIC)
    frames, speakers = _int_field(h, "frames"), _int_field(h, "speakers")
    if frames == 0 or speakers == 0:
        raise FormatError("empty", "empty matrix")
    try:
        shift = float(h.get("frame_shift", "0.08"))
    except ValueError:
        raise FormatError("header", "invalid frame_shift") from None
    need = frames * speakers * 4
    raw = stream.read(need)
    if len(raw) < need:
        got = len(raw) // (4 * speakers)
        raise FormatError("truncated", f"truncated at frame {got}", record=got)
    if stream.read(1):
        raise FormatError("trailing", "trailing bytes after matrix")
    probs = np.frombuffer(raw, dtype="<f4").reshape(frames, speakers).astype(np.float64)
    if not np.isfinite(probs).all() or probs.min() < 0.0 or probs.max() > 1.0:
        raise FormatError("range", "probability out of range")
    return ActivityMatrix(h.get("session", ""), _labels(h, speakers, "spk"), probs, shift)
