import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ppmet.ingest import EmbeddingSequence
from ppmet.timeline import Diarization, Segment
from ppmet.windowing import (
    DegeneratePoolError,
    Prompt,
    WindowingPolicy,
    extract_prompts,
    pad_prompts,
    pool,
    subsegment,
)


def spans(ws):
    return [(w.onset, w.offset) for w in ws]


class TestSubsegment:
    def test_worked_example(self):
        assert spans(subsegment([Segment(0, 7.5)])) == [(0, 3), (1.5, 4.5), (3, 6), (4.5, 7.5)]

    def test_exact_fit(self):
        assert spans(subsegment([Segment(0, 3)])) == [(0, 3)]

    def test_short(self):
        assert spans(subsegment([Segment(0, 2)])) == [(0, 2)]
        assert spans(subsegment([Segment(0, 1)])) == [(0, 1)]

    def test_tail_right_aligned(self):
        assert spans(subsegment([Segment(0, 7)])) == [(0, 3), (1.5, 4.5), (3, 6), (4, 7)]

    def test_policy_validation(self):
        with pytest.raises(ValueError, match="shift > window"):
            WindowingPolicy(3.0, 4.0)
        with pytest.raises(ValueError):
            WindowingPolicy(3.0, 1.5, 0.0)

    @given(st.lists(st.tuples(st.integers(0, 200), st.integers(1, 80)), min_size=1, max_size=6))
    def test_windows_inside_and_cover(self, raw):
        pos, vad = 0.0, []
        for gap, dur in raw:
            on = pos + gap / 10
            vad.append(Segment(on, on + dur / 10))
            pos = on + dur / 10
        pol = WindowingPolicy()
        ws = subsegment(vad, pol)
        for v in vad:
            inside = [w for w in ws if w.onset >= v.onset - 1e-9 and w.offset <= v.offset + 1e-9]
            assert inside, v
            covered = sum(w.overlap(v) for w in inside)
            assert covered >= v.duration - 1e-9
            if v.duration >= pol.window:
                steps = np.diff([w.onset for w in inside])[:-1]
                assert np.allclose(steps, pol.shift)
                # union coverage: adjacent windows touch or overlap
                assert all(b.onset <= a.offset + 1e-9 for a, b in zip(inside, inside[1:]))
        assert sum(len([w for w in ws if w.onset >= v.onset - 1e-9 and w.offset <= v.offset + 1e-9]) for v in vad) == len(ws)


class TestPool:
    def test_identical(self):
        assert np.allclose(pool([[1, 0, 0], [1, 0, 0]]), [1, 0, 0])

    def test_orthonormal(self):
        assert np.allclose(pool([[1, 0, 0], [0, 1, 0]]), [2**-0.5, 2**-0.5, 0])

    def test_scale(self):
        assert np.allclose(pool([[2, 0, 0]]), [1, 0, 0])

    def test_errors(self):
        with pytest.raises(ValueError):
            pool(np.zeros((0, 3)))
        with pytest.raises(DegeneratePoolError):
            pool([[1, 0], [-1, 0]])

    @given(st.integers(1, 12), st.integers(2, 8), st.integers(0, 2**31))
    def test_unit_norm_and_invariances(self, n, dim, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((n, dim)) + 3.0
        v = pool(x)
        assert abs(np.linalg.norm(v) - 1) < 1e-12
        perm = rng.permutation(n)
        scale = rng.uniform(0.1, 10, size=(n, 1))
        assert np.array_equal(pool(x[perm]), v)
        assert np.allclose(pool(x * scale), v, atol=1e-12)


def _emb(windows, vectors, session="s"):
    return EmbeddingSequence(session, tuple(Segment(*w) for w in windows), np.asarray(vectors, dtype=np.float32))


class TestExtractPrompts:
    def test_all_inside(self):
        d = Diarization.from_tuples("s", [("A", 0, 6)])
        e = _emb([(0, 3), (1.5, 4.5), (3, 6)], [[1, 0], [1, 0.1], [1, -0.1]])
        (p,) = extract_prompts(d, e)
        assert p.speaker == "A" and p.support == 9.0
        assert np.allclose(p.vector, pool(e.vectors))

    def test_fallback_chain(self):
        # A and B overlap everywhere, so only the touch fallback applies
        d = Diarization.from_tuples("s", [("A", 0, 6), ("B", 0, 6)])
        e = _emb([(0, 3), (3, 6)], [[1, 0], [0, 1]])
        ps = extract_prompts(d, e)
        assert [p.speaker for p in ps] == ["A", "B"]
        assert all(np.allclose(p.vector, pool(e.vectors)) for p in ps)
        # half-inside tier wins over touching when available
        d = Diarization.from_tuples("s", [("A", 0, 4.4), ("B", 2.0, 6)])
        e = _emb([(0, 3), (3, 6)], [[1, 0], [0, 1]])
        a = extract_prompts(d, e)[0]
        assert np.allclose(a.vector, [1, 0]) and a.support == 3.0

    def test_no_window_gives_zero_prompt(self):
        d = Diarization.from_tuples("s", [("A", 0, 3), ("B", 20, 21)])
        e = _emb([(0, 3)], [[1, 0]])
        b = extract_prompts(d, e)[1]
        assert b.is_padding and not b.vector.any()

    def test_empty_speakers(self):
        with pytest.raises(ValueError):
            extract_prompts(Diarization("s"), _emb([(0, 3)], [[1, 0]]))

    def test_relabel_and_record_permutation(self):
        rng = np.random.default_rng(3)
        d = Diarization.from_tuples("s", [("A", 0, 9), ("B", 7, 15)])
        wins = [(0, 3), (1.5, 4.5), (3, 6), (4.5, 7.5), (6, 9), (7.5, 10.5), (9, 12), (10.5, 13.5), (12, 15)]
        vec = rng.standard_normal((len(wins), 5))
        e = _emb(wins, vec)
        perm = rng.permutation(len(wins))
        e2 = _emb([wins[i] for i in perm], vec[perm])
        base = extract_prompts(d, e)
        assert [p for p in extract_prompts(d, e2)] == base
        renamed = extract_prompts(d.relabel({"A": "Z", "B": "Y"}), e)
        by = {p.speaker: p for p in renamed}
        assert np.array_equal(by["Z"].vector, base[0].vector)
        assert np.array_equal(by["Y"].vector, base[1].vector)


class TestPadPrompts:
    def _p(self, n):
        return [Prompt(f"S{i}", np.eye(3)[i % 3], 1.0) for i in range(n)]

    def test_pad_to_four(self):
        out = pad_prompts(self._p(2), 4)
        assert len(out) == 4
        assert [p.is_padding for p in out] == [False, False, True, True]
        assert not out[2].vector.any() and len(out[3].vector) == 3

    def test_unchanged(self):
        assert pad_prompts(self._p(4), 4) == self._p(4)

    def test_too_many(self):
        with pytest.raises(ValueError):
            pad_prompts(self._p(5), 4)
