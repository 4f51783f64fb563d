import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ppmet.ingest import ActivityMatrix, EmbeddingSequence
from ppmet.timeline import Diarization, Segment, normalize
from ppmet.tsvad_post import OracleError, PostPolicy, binarize, refine, segments_to_activity, smooth
from ppmet.windowing import WindowingPolicy, padding_label, subsegment

SHIFT = 0.08


def M(cols, speakers=None):
    p = np.asarray(cols, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    speakers = speakers or tuple(f"S{i}" for i in range(p.shape[1]))
    return ActivityMatrix("s", tuple(speakers), p, SHIFT)


@st.composite
def grid_diarizations(draw):
    """Frame-aligned segments with on-runs >= 6 frames and gaps >= 6 frames."""
    rows = []
    for spk in draw(st.lists(st.sampled_from("ABC"), min_size=1, max_size=3, unique=True)):
        t = draw(st.integers(0, 20))
        for _ in range(draw(st.integers(1, 4))):
            n = draw(st.integers(6, 30))
            rows.append((spk, round(t * SHIFT, 9), round((t + n) * SHIFT, 9)))
            t += n + draw(st.integers(6, 30))
    return normalize(Diarization.from_tuples("s", rows))


class TestSmooth:
    def test_identity(self):
        m = M(np.random.default_rng(0).random(20))
        assert smooth(m, 1) == m

    def test_spike_removed(self):
        x = np.zeros(9)
        x[4] = 1
        assert not smooth(M(x), 3).probs.any()

    def test_constant(self):
        m = M(np.full(12, 0.7))
        assert smooth(m, 5) == m

    def test_even_width(self):
        with pytest.raises(ValueError):
            smooth(M(np.zeros(4)), 4)

    def test_column_equivariance(self):
        p = np.random.default_rng(2).random((40, 3))
        a = smooth(M(p), 5).probs
        b = smooth(M(p[:, ::-1]), 5).probs
        assert np.array_equal(a[:, ::-1], b)


class TestBinarize:
    def test_zero_column(self):
        assert binarize(M(np.zeros(30))).segments == ()

    def test_frame_arithmetic(self):
        x = np.zeros(30)
        x[10:20] = 1
        assert binarize(M(x)).to_tuples() == [("S0", 0.8, 1.6)]

    def test_gap_merge(self):
        x = np.zeros(20)
        x[0:5] = 1
        x[7:12] = 1
        assert binarize(M(x)).to_tuples() == [("S0", 0.0, 0.96)]

    def test_min_on_drop(self):
        x = np.zeros(20)
        x[3:5] = 1  # 0.16 s < 0.2 s
        assert binarize(M(x)).segments == ()

    def test_padding_never_emits(self):
        x = np.ones((10, 2))
        d = binarize(M(x, ("A", padding_label(0))))
        assert d.speakers == ["A"]

    def test_speaker_permutation(self):
        p = (np.random.default_rng(5).random((60, 3)) > 0.4).astype(float)
        a = binarize(M(p, ("A", "B", "C")))
        b = binarize(M(p[:, [2, 0, 1]], ("C", "A", "B")))
        assert a == b

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            PostPolicy(median_width=4)
        with pytest.raises(ValueError):
            PostPolicy(threshold=1.0)


class TestSegmentsToActivity:
    def test_empty(self):
        m = segments_to_activity(Diarization("s"), SHIFT, ["A"], n_frames=5)
        assert not m.probs.any()

    def test_frame_centres(self):
        m = segments_to_activity(Diarization.from_tuples("s", [("A", 0, 0.8)]), SHIFT, ["A"], n_frames=15)
        assert m.probs[:, 0].tolist() == [1.0] * 10 + [0.0] * 5

    def test_unknown_speaker(self):
        with pytest.raises(ValueError):
            segments_to_activity(Diarization.from_tuples("s", [("Z", 0, 1)]), SHIFT, ["A"])

    @given(grid_diarizations())
    def test_round_trip(self, d):
        m = segments_to_activity(d, SHIFT, d.speakers)
        assert binarize(m) == d
        assert binarize(smooth(m, 11)) == d


def _fixture():
    """Two speakers with clean solo stretches and one overlap."""
    truth = Diarization.from_tuples("s", [("A", 0.0, 12.0), ("B", 9.6, 24.0), ("A", 26.4, 36.0)])
    protos = {"A": np.eye(4)[0], "B": np.eye(4)[1]}
    wins = subsegment([Segment(0.0, 24.0), Segment(26.4, 36.0)], WindowingPolicy())
    vecs = []
    for w in wins:
        act = {s.speaker for s in truth.segments if s.segment.overlap(w) > 0}
        v = sum(protos[s] * sum(x.segment.overlap(w) for x in truth.segments if x.speaker == s) for s in act)
        vecs.append(v / np.linalg.norm(v))
    emb = EmbeddingSequence("s", tuple(wins), np.array(vecs, dtype=np.float32))
    return truth, protos, emb


class TruthOracle:
    """Matches prompts to prototypes and emits the true activity."""

    def __init__(self, truth, protos):
        self.truth, self.protos = truth, protos
        self.act = segments_to_activity(truth, SHIFT, sorted(protos))

    def __call__(self, session, prompts):
        cols = np.zeros((self.act.n_frames, len(prompts)))
        labs = sorted(self.protos)
        for j, p in enumerate(prompts):
            if p.vector.any():
                k = int(np.argmax([p.vector @ self.protos[s] for s in labs]))
                cols[:, j] = self.act.probs[:, k]
        return ActivityMatrix(session, tuple(p.speaker for p in prompts), cols, SHIFT)


class TestRefine:
    def test_zero_iterations(self):
        truth, _, emb = _fixture()
        d0 = Diarization.from_tuples("s", [("x", 0, 20), ("y", 20, 36)])
        d, prompts, trace = refine(d0, emb, None, iterations=0)
        assert d == d0 and len(prompts) == 4 and trace.diarizations == [d0]

    def test_reaches_truth(self):
        truth, protos, emb = _fixture()
        # poor start: boundaries off by seconds, but each speaker owns a clean window
        d0 = Diarization.from_tuples("s", [("x", 0, 7.5), ("y", 15, 24), ("x", 30, 36)])
        d, prompts, trace = refine(d0, emb, TruthOracle(truth, protos))
        assert d.relabel({"x": "A", "y": "B"}) == truth
        assert sum(not p.is_padding for p in prompts) == 2
        assert len(trace.diarizations) == 2

    def test_fixed_point(self):
        _, _, emb = _fixture()
        d0 = Diarization.from_tuples("s", [("x", 0, 12), ("y", 12.8, 24)])

        def echo(session, prompts):
            return segments_to_activity(d0, SHIFT, [p.speaker for p in prompts])

        d1, _, _ = refine(d0, emb, echo)
        d2, _, _ = refine(d1, emb, echo, iterations=2)
        assert d1 == binarize(smooth(segments_to_activity(d0, SHIFT, d0.speakers), 11)) == d2

    def test_oracle_failure_has_iteration(self):
        _, _, emb = _fixture()
        d0 = Diarization.from_tuples("s", [("x", 0, 12)])
        calls = []

        def flaky(session, prompts):
            calls.append(1)
            if len(calls) == 2:
                raise RuntimeError("boom")
            return segments_to_activity(d0, SHIFT, [p.speaker for p in prompts])

        with pytest.raises(OracleError) as e:
            refine(d0, emb, flaky, iterations=3)
        assert e.value.iteration == 2 and "iteration 2" in str(e.value)

    def test_truncates_to_max_speakers(self, caplog):
        _, _, emb = _fixture()
        d0 = Diarization.from_tuples("s", [("a", 0, 6), ("b", 6, 12), ("c", 12, 24), ("d", 26.4, 36)])
        _, prompts, _ = refine(d0, emb, None, iterations=0, max_speakers=3)
        assert len(prompts) == 3 and "dropped" in caplog.text
