"""Deterministic synthetic sessions: diarizations, embeddings, oracles, transcripts.

All randomness comes from ``numpy.random.Generator(PCG64(...))`` seeded with
integer lists, so reruns are byte-identical.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .ingest import ActivityMatrix, AttributedTranscript, EmbeddingSequence, Utterance
from .timeline import Diarization, Segment, SpeakerSegment, homogeneous_regions, normalize, speech_union
from .tsvad_post import segments_to_activity
from .windowing import Prompt, WindowingPolicy, subsegment

RNG_ALGORITHM = "numpy PCG64"

# stream tags keep independent draws from sharing a generator
_TURNS, _PROTO, _EMB, _ORACLE, _TEXT, _CORRUPT, _PERTURB = range(7)

DEFAULT_ALPHABET = "".join(chr(c) for c in range(0x4E00, 0x4E00 + 400))


def _rng(seed: int, tag: int, *extra: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64([int(seed) & 0xFFFFFFFF, tag, *extra]))


@dataclass(frozen=True)
class SessionSpec:
    n_speakers: int = 3
    duration: float = 300.0
    overlap_ratio: float = 0.15
    mean_turn: float = 8.0
    dim: int = 16
    separation_deg: float = 60.0
    noise_deg: float = 5.0
    seed: int = 0
    grid: float = 0.08
    min_turn: float = 2.0
    mix_exponent: float = 2.0
    session: str = ""

    def __post_init__(self):
        if self.n_speakers < 1:
            raise ValueError("n_speakers must be >= 1")
        if not 0.0 <= self.overlap_ratio < 1.0:
            raise ValueError("overlap_ratio must be in [0, 1)")
        if self.duration <= 0 or self.mean_turn <= 0 or self.min_turn <= 0:
            raise ValueError("duration, mean_turn and min_turn must be positive")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.grid < 0:
            raise ValueError("grid must be >= 0")
        if self.duration < self.n_speakers * self.min_turn:
            raise ValueError(
                f"infeasible spec: duration {self.duration} < {self.n_speakers} speakers x min turn {self.min_turn}"
            )

    @property
    def name(self) -> str:
        return self.session or f"sim{self.seed:06d}"

    @classmethod
    def from_dict(cls, d: Mapping) -> "SessionSpec":
        known = set(asdict(cls()).keys())
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown session spec fields: {sorted(unknown)}")
        return cls(**d)


def speaker_labels(n: int) -> list[str]:
    return [f"S{i + 1}" for i in range(n)]


def overlap_fraction(d: Diarization) -> float:
    """Share of speech time (union) with two or more active speakers."""
    union = sum(s.duration for s in speech_union(d))
    if union == 0:
        return 0.0
    over = sum(seg.duration for seg, (act,) in homogeneous_regions([d]) if len(act) >= 2)
    return over / union


def _snap(t: float, grid: float) -> float:
    if grid <= 0:
        return round(t, 6)
    return round(round(t / grid) * grid, 6)


def gen_diarization(spec: SessionSpec) -> Diarization:
    """Alternating turns with exponential lengths; overlap tuned by bisection."""
    rng = _rng(spec.seed, _TURNS)
    n = spec.n_speakers
    labels = speaker_labels(n)
    extra_mean = max(spec.mean_turn - spec.min_turn, 0.0)

    lengths, who = [], []
    total = 0.0
    order = list(rng.permutation(n))
    while total < 2.5 * spec.duration or len(lengths) < n:
        if len(who) < n:
            s = int(order[len(who)])
        else:
            others = [k for k in range(n) if k != who[-1]] or [who[-1]]
            s = int(others[rng.integers(len(others))])
        ln = spec.min_turn + (rng.exponential(extra_mean) if extra_mean > 0 else 0.0)
        lengths.append(ln)
        who.append(s)
        total += ln
    t = len(lengths)
    push = rng.exponential(1.0, size=t)
    pause = rng.uniform(0.0, 1.0, size=t)

    def layout(c: float) -> Diarization:
        segs = []
        on = 0.0
        for i in range(t):
            off = on + lengths[i]
            a, b = _snap(on, spec.grid), _snap(min(off, spec.duration), spec.grid)
            if b - a >= min(1.0, spec.min_turn) - 1e-9 or (i < n and b > a):
                segs.append(SpeakerSegment(Segment(a, b), labels[who[i]]))
            if off >= spec.duration or i + 1 == t:
                break
            cap = 0.4 * min(lengths[i], lengths[i + 1])
            step = min(c * push[i] - pause[i], cap)
            on = off - step
            if on >= spec.duration:
                break
        return normalize(Diarization(spec.name, tuple(segs)))

    target = spec.overlap_ratio
    if target <= 0:
        return layout(0.0)
    lo, hi = 0.0, 4.0 * spec.mean_turn
    best = layout(hi)
    best_err = abs(overlap_fraction(best) - target)
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        d = layout(mid)
        f = overlap_fraction(d)
        if abs(f - target) < best_err:
            best, best_err = d, abs(f - target)
        if f < target:
            lo = mid
        else:
            hi = mid
        if best_err < 1e-3:
            break
    return best


def gen_prototypes(n: int, dim: int, separation_deg: float, seed: int, max_tries: int = 10_000) -> np.ndarray:
    """Unit vectors with pairwise angle at least ``separation_deg``.

    ``n == dim`` yields a randomly rotated orthonormal basis; otherwise
    directions are drawn uniformly on the sphere with rejection.
    """
    if n < 1 or dim < 1:
        raise ValueError("n and dim must be positive")
    rng = _rng(seed, _PROTO)
    cos_max = math.cos(math.radians(separation_deg))

    def rotated_basis():
        q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
        q = q * np.sign(np.diag(r))
        return q[:, :n].T.copy()

    if n == dim and separation_deg <= 90.0:
        return rotated_basis()
    out: list[np.ndarray] = []
    tries = 0
    while len(out) < n:
        if tries >= max_tries:
            if n <= dim and separation_deg <= 90.0:
                return rotated_basis()
            raise ValueError(f"could not place {n} prototypes {separation_deg} deg apart in dim {dim}")
        tries += 1
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        if all(float(v @ u) <= cos_max + 1e-12 for u in out):
            out.append(v)
    return np.stack(out)


def _perturb(v: np.ndarray, noise_rad: float, rng: np.random.Generator) -> np.ndarray:
    if noise_rad == 0 or v.shape[0] < 2:
        return v
    g = rng.standard_normal(v.shape[0]) * (noise_rad / math.sqrt(v.shape[0] - 1))
    g -= (g @ v) * v
    w = v + g
    return w / np.linalg.norm(w)


def gen_embeddings(
    d: Diarization,
    prototypes: Mapping[str, np.ndarray],
    policy: WindowingPolicy = WindowingPolicy(),
    noise_deg: float = 5.0,
    seed: int = 0,
    mix_exponent: float = 2.0,
) -> EmbeddingSequence:
    """Window embeddings: prototype (or duration-weighted prototype mix) plus angular noise.

    A speaker's weight in a mixed window is its active duration raised to
    ``mix_exponent``; values above 1 pull mixed windows toward the dominant
    speaker, as real extractors do. ``mix_exponent=1`` is a plain linear mix.
    """
    missing = set(d.speakers) - set(prototypes)
    if missing:
        raise ValueError(f"missing prototype for speakers {sorted(missing)}")
    if not d.segments:
        raise ValueError("diarization has no speech")
    rng = _rng(seed, _EMB)
    windows = subsegment(speech_union(d), policy)
    by_spk = d.by_speaker()
    noise = math.radians(noise_deg)
    dim = len(next(iter(prototypes.values())))
    vecs = np.empty((len(windows), dim))
    for i, w in enumerate(windows):
        share = {s: sum(w.overlap(x) for x in segs) for s, segs in by_spk.items()}
        share = {s: v for s, v in share.items() if v > 0}
        if len(share) == 1:
            (s,) = share
            v = np.asarray(prototypes[s], dtype=np.float64)
        else:
            v = sum(share[s] ** mix_exponent * np.asarray(prototypes[s], dtype=np.float64) for s in sorted(share))
            v = v / np.linalg.norm(v)
        vecs[i] = _perturb(v, noise, rng)
    return EmbeddingSequence(d.session, tuple(windows), vecs.astype(np.float32))


class SimOracle:
    """Stand-in for a TS-VAD forward pass built from the true diarization.

    Each prompt is matched to the closest prototype by cosine; its column is the
    matched speaker's true activity, with cells flipped at ``confusion_noise``.
    """

    def __init__(
        self,
        d_true: Diarization,
        prototypes: Mapping[str, np.ndarray],
        confusion_noise: float = 0.0,
        seed: int = 0,
        frame_shift: float = 0.08,
    ):
        if not 0.0 <= confusion_noise <= 1.0:
            raise ValueError("confusion_noise must be in [0, 1]")
        self.truth = normalize(d_true)
        self.labels = sorted(prototypes)
        self.protos = np.stack([np.asarray(prototypes[s], dtype=np.float64) for s in self.labels])
        self.protos /= np.linalg.norm(self.protos, axis=1, keepdims=True)
        self.noise = confusion_noise
        self.seed = seed
        self.frame_shift = frame_shift
        self.activity = segments_to_activity(self.truth, frame_shift, self.labels)

    def match(self, prompt: Prompt) -> str | None:
        v = np.asarray(prompt.vector, dtype=np.float64)
        nv = np.linalg.norm(v)
        if nv == 0:
            return None
        return self.labels[int(np.argmax(self.protos @ (v / nv)))]

    def __call__(self, session: str, prompts: Sequence[Prompt]) -> ActivityMatrix:
        frames = self.activity.n_frames
        probs = np.zeros((frames, len(prompts)))
        for j, p in enumerate(prompts):
            s = self.match(p)
            if s is not None:
                probs[:, j] = self.activity.probs[:, self.labels.index(s)]
        if self.noise > 0:
            h = hashlib.sha256()
            for p in prompts:
                h.update(np.asarray(p.vector, dtype="<f8").tobytes())
            key = int.from_bytes(h.digest()[:4], "little")
            rng = _rng(self.seed, _ORACLE, key)
            flip = rng.random(probs.shape) < self.noise
            probs = np.where(flip, 1.0 - probs, probs)
        return ActivityMatrix(session, tuple(p.speaker for p in prompts), probs, self.frame_shift)


def gen_oracle(
    d_true: Diarization,
    prototypes: Mapping[str, np.ndarray],
    confusion_noise: float = 0.0,
    seed: int = 0,
    frame_shift: float = 0.08,
) -> SimOracle:
    return SimOracle(d_true, prototypes, confusion_noise, seed, frame_shift)


def gen_transcript(
    d: Diarization, alphabet: str = DEFAULT_ALPHABET, chars_per_second: float = 3.0, seed: int = 0
) -> AttributedTranscript:
    """One utterance of random characters per segment."""
    rng = _rng(seed, _TEXT)
    utts = []
    for s in d.segments:
        n = max(1, int(round(s.duration * chars_per_second)))
        text = "".join(alphabet[i] for i in rng.integers(len(alphabet), size=n))
        utts.append(Utterance(s.speaker, s.segment, text))
    return AttributedTranscript(d.session, tuple(utts))


def corrupt_transcript(
    ref: AttributedTranscript, target_cer: float, alphabet: str = DEFAULT_ALPHABET, seed: int = 0
) -> AttributedTranscript:
    """Inject substitutions, insertions and deletions (equal thirds) at ``target_cer``."""
    if not 0.0 <= target_cer < 1.0:
        raise ValueError("target_cer must be in [0, 1)")
    total = sum(len(u.text) for u in ref.utterances)
    n_err = int(round(target_cer * total))
    if n_err == 0:
        return ref
    rng = _rng(seed, _CORRUPT)
    n_sub = n_err // 3 + (1 if n_err % 3 >= 1 else 0)
    n_del = n_err // 3 + (1 if n_err % 3 >= 2 else 0)
    n_ins = n_err - n_sub - n_del
    pos = rng.permutation(total)
    sub = set(pos[:n_sub].tolist())
    dele = set(pos[n_sub : n_sub + n_del].tolist())
    ins = set(pos[n_sub + n_del : n_sub + n_del + n_ins].tolist())
    utts = []
    g = 0
    for u in ref.utterances:
        out = []
        for ch in u.text:
            if g in ins:
                out.append(alphabet[rng.integers(len(alphabet))])
            if g in sub:
                c = ch
                while c == ch:
                    c = alphabet[rng.integers(len(alphabet))]
                out.append(c)
            elif g not in dele:
                out.append(ch)
            g += 1
        utts.append(Utterance(u.speaker, u.segment, "".join(out)))
    return AttributedTranscript(ref.session, tuple(utts))


def perturb_diarization(
    d: Diarization,
    jitter: float = 0.25,
    dropout: float = 0.05,
    seed: int = 0,
    label_prefix: str = "c",
) -> Diarization:
    """A noisy copy: boundary jitter, segment dropout and shuffled label names."""
    rng = _rng(seed, _PERTURB)
    speakers = d.speakers
    perm = rng.permutation(len(speakers))
    rename = {s: f"{label_prefix}{int(perm[i])}" for i, s in enumerate(speakers)}
    segs = []
    for s in d.segments:
        keep = rng.random() >= dropout
        da, db = rng.uniform(-jitter, jitter, size=2)
        if not keep:
            continue
        a = round(max(0.0, s.onset + da), 3)
        b = round(s.offset + db, 3)
        if b - a > 0:
            segs.append(SpeakerSegment(Segment(a, b), rename[s.speaker]))
    return normalize(Diarization(d.session, tuple(segs)))


@dataclass
class SimSession:
    spec: SessionSpec
    truth: Diarization
    prototypes: dict[str, np.ndarray]
    embeddings: EmbeddingSequence


def simulate_session(spec: SessionSpec, policy: WindowingPolicy = WindowingPolicy()) -> SimSession:
    truth = gen_diarization(spec)
    protos = gen_prototypes(spec.n_speakers, spec.dim, spec.separation_deg, spec.seed)
    proto_map = dict(zip(speaker_labels(spec.n_speakers), protos))
    emb = gen_embeddings(truth, proto_map, policy, spec.noise_deg, spec.seed, spec.mix_exponent)
    return SimSession(spec, truth, proto_map, emb)
