"""Speaker clustering over embedding windows: NME-SC spectral clustering and AHC."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg
from sklearn.cluster import KMeans

from .ingest import EmbeddingSequence
from .timeline import Diarization, Segment, SpeakerSegment, normalize

EIG_CLIP = 1e-8
COINCIDENT = 1e-9  # cosine distance below which two embeddings are the same point


class ClusteringError(RuntimeError):
    pass


@dataclass(frozen=True)
class TuningStep:
    p: int
    ratio: float
    best_k: int
    eigengaps: tuple[float, ...]


@dataclass(frozen=True)
class ClusteringResult:
    k: int
    labels: tuple[int, ...]
    diagnostics: tuple[TuningStep, ...] = field(default_factory=tuple)

    def diagnostics_tsv(self) -> str:
        lines = ["p\tr\tbest_k\teigengaps\n"]
        for s in self.diagnostics:
            gaps = ",".join(f"{g:.6g}" for g in s.eigengaps)
            lines.append(f"{s.p}\t{s.ratio:.6g}\t{s.best_k}\t{gaps}\n")
        return "".join(lines)


def cosine_affinity(emb) -> np.ndarray:
    """Cosine similarity matrix with an exact unit diagonal."""
    x = emb.vectors if isinstance(emb, EmbeddingSequence) else emb
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("need at least two embeddings")
    norms = np.linalg.norm(x, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"zero-norm embedding at index {int(zero[0])}")
    x = x / norms[:, None]
    a = np.clip(x @ x.T, -1.0, 1.0)
    a = 0.5 * (a + a.T)
    np.fill_diagonal(a, 1.0)
    return a


def binarize_topp(a: np.ndarray, p: int) -> np.ndarray:
    """Keep the ``p`` strongest positive neighbours of each row, then symmetrize.

    Ties at the cut go to the lower column index.
    """
    n = a.shape[0]
    if not 1 <= p <= n - 1:
        raise ValueError(f"p={p} outside [1, {n - 1}]")
    masked = a.astype(np.float64, copy=True)
    np.fill_diagonal(masked, -np.inf)
    order = np.argsort(-masked, axis=1, kind="stable")[:, :p]
    b = np.zeros_like(masked)
    rows = np.repeat(np.arange(n), p)
    cols = order.ravel()
    keep = a[rows, cols] > 0
    b[rows[keep], cols[keep]] = 1.0
    np.fill_diagonal(b, 1.0)
    return np.maximum(b, b.T)


def laplacian(b: np.ndarray) -> np.ndarray:
    return np.diag(b.sum(axis=1)) - b


def _eigvals(lap: np.ndarray) -> np.ndarray:
    try:
        lam = linalg.eigvalsh(lap)
    except linalg.LinAlgError as e:
        raise ClusteringError(f"eigensolver failed: {e}") from e
    if lam[0] < -EIG_CLIP * max(1.0, abs(lam[-1])):
        raise ClusteringError(f"negative Laplacian eigenvalue {lam[0]:.3g}")
    return np.clip(lam, 0.0, None)


def relabel_by_first_occurrence(labels: Sequence[int]) -> tuple[int, ...]:
    seen: dict[int, int] = {}
    return tuple(seen.setdefault(int(l), len(seen)) for l in labels)


def _representatives(a: np.ndarray) -> np.ndarray:
    """Map each point to the first point it coincides with (itself if none)."""
    n = a.shape[0]
    rep = np.arange(n)
    for i in range(n):
        if rep[i] != i:
            continue
        same = np.flatnonzero(a[i, i + 1 :] >= 1.0 - COINCIDENT) + i + 1
        same = same[rep[same] == same]
        rep[same] = i
    return rep


def nme_sc(
    a: np.ndarray,
    p_candidates: Sequence[int] | None = None,
    k_max: int = 8,
    seed: int = 0,
) -> ClusteringResult:
    """Auto-tuned spectral clustering with the normalized maximum eigengap."""
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if n < 2:
        raise ValueError("nme_sc needs at least two points")
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    # exact duplicates would make top-p ties build star graphs; cluster distinct points
    rep = _representatives(a)
    uniq = np.unique(rep)
    if len(uniq) == 1:
        return ClusteringResult(1, (0,) * n)
    if len(uniq) < n:
        if p_candidates is not None:
            p_candidates = [p for p in p_candidates if p <= len(uniq) - 1] or None
        sub = nme_sc(a[np.ix_(uniq, uniq)], p_candidates, k_max, seed)
        pos = np.searchsorted(uniq, rep)
        labels = relabel_by_first_occurrence([sub.labels[i] for i in pos])
        return ClusteringResult(sub.k, labels, sub.diagnostics)
    if p_candidates is None:
        p_candidates = range(1, min(n - 1, math.ceil(n / 2)) + 1)
    kk = min(k_max, n - 1)

    trace = []
    best = None  # (ratio, p, k)
    for p in p_candidates:
        b = binarize_topp(a, p)
        lam = _eigvals(laplacian(b))
        if lam[-1] <= 0.0:
            continue
        gaps = lam[1 : kk + 1] - lam[:kk]
        k_p = int(np.argmax(gaps)) + 1
        g = gaps[k_p - 1] / lam[-1]
        ratio = (p / n) / g if g > 0 else math.inf
        trace.append(TuningStep(int(p), float(ratio), k_p, tuple(float(x) for x in gaps)))
        if best is None or ratio < best[0]:
            best = (ratio, int(p), k_p)

    if best is None:
        # every candidate graph is edgeless: no point has a positive neighbour
        lab = relabel_by_first_occurrence(range(n))
        return ClusteringResult(n, lab, tuple(trace))

    _, p_star, k = best
    if k == 1:
        return ClusteringResult(1, (0,) * n, tuple(trace))
    lap = laplacian(binarize_topp(a, p_star))
    try:
        _, vecs = linalg.eigh(lap, subset_by_index=[0, k - 1])
    except linalg.LinAlgError as e:
        raise ClusteringError(f"eigensolver failed: {e}") from e
    km = KMeans(n_clusters=k, init="k-means++", n_init=10, max_iter=300, random_state=seed)
    raw = km.fit_predict(vecs)
    labels = relabel_by_first_occurrence(raw)
    return ClusteringResult(len(set(labels)), labels, tuple(trace))


def ahc(a: np.ndarray, threshold: float) -> ClusteringResult:
    """Average-linkage agglomeration on ``1 - affinity``, stopping at ``threshold``."""
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if n < 1:
        raise ValueError("ahc needs at least one point")
    dist = 1.0 - a
    np.fill_diagonal(dist, np.inf)
    size = np.ones(n)
    alive = np.ones(n, dtype=bool)
    owner = np.arange(n)
    while alive.sum() > 1:
        # row-major argmin = lexicographically smallest (i, j) among ties
        masked = np.where(np.triu(np.ones_like(dist, dtype=bool), 1), dist, np.inf)
        idx = int(np.argmin(masked))
        i, j = divmod(idx, n)
        if not masked[i, j] < threshold:
            break
        merged = (size[i] * dist[i] + size[j] * dist[j]) / (size[i] + size[j])
        dist[i, :] = merged
        dist[:, i] = merged
        dist[i, i] = np.inf
        dist[j, :] = np.inf
        dist[:, j] = np.inf
        size[i] += size[j]
        alive[j] = False
        owner[owner == j] = i
    labels = relabel_by_first_occurrence(owner)
    return ClusteringResult(len(set(labels)), labels)


def labels_to_diarization(
    result: ClusteringResult, windows: Sequence[Segment], session: str, prefix: str = "spk"
) -> Diarization:
    """Turn window labels into segments; overlapping windows split at the overlap midpoint."""
    labels = result.labels
    if len(labels) != len(windows):
        raise ValueError(f"{len(labels)} labels for {len(windows)} windows")
    order = sorted(range(len(windows)), key=lambda i: (windows[i].onset, windows[i].offset))
    segs = []
    for pos, i in enumerate(order):
        w = windows[i]
        start, end = w.onset, w.offset
        if pos > 0:
            prev = windows[order[pos - 1]]
            if prev.offset > w.onset:
                start = max(start, 0.5 * (w.onset + prev.offset))
        if pos + 1 < len(order):
            nxt = windows[order[pos + 1]]
            if nxt.onset < w.offset:
                end = min(end, 0.5 * (nxt.onset + w.offset))
        if end > start:
            segs.append(SpeakerSegment(Segment(start, end), f"{prefix}{labels[i]}"))
    return normalize(Diarization(session, tuple(segs)))
