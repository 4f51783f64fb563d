import math

import numpy as np
import pytest

from ppmet.ingest import write_embeddings
from ppmet.score import cp_cer, edit_distance
from ppmet.simkit import (
    SessionSpec,
    corrupt_transcript,
    gen_diarization,
    gen_embeddings,
    gen_oracle,
    gen_prototypes,
    gen_transcript,
    perturb_diarization,
    simulate_session,
    speaker_labels,
)
from ppmet.timeline import Diarization, homogeneous_regions, normalize, speech_union
from ppmet.tsvad_post import segments_to_activity
from ppmet.windowing import Prompt, WindowingPolicy, padding_label


def overlap_share(d):
    """Independent of simkit's own helper: a fine frame sweep over the session."""
    end = max(s.offset for s in d.segments)
    t = (np.arange(int(end / 0.01)) + 0.5) * 0.01
    count = np.zeros_like(t)
    for s in d.segments:
        count += (t >= s.onset) & (t < s.offset)
    return (count >= 2).sum() / (count >= 1).sum()


class TestDiarization:
    def test_no_overlap(self):
        d = gen_diarization(SessionSpec(n_speakers=2, overlap_ratio=0.0, seed=3))
        assert all(len(a) == 1 for _, (a,) in homogeneous_regions([d]))

    def test_deterministic(self):
        spec = SessionSpec(seed=11)
        assert gen_diarization(spec) == gen_diarization(spec)
        assert gen_diarization(spec) != gen_diarization(SessionSpec(seed=12))

    def test_infeasible(self):
        with pytest.raises(ValueError, match="infeasible"):
            SessionSpec(n_speakers=4, duration=5.0)

    def test_overlap_target(self):
        fr = [overlap_share(gen_diarization(SessionSpec(seed=s, duration=600, overlap_ratio=0.2))) for s in range(100)]
        assert max(abs(f - 0.2) for f in fr) <= 0.05

    def test_grid_and_labels(self):
        d = gen_diarization(SessionSpec(n_speakers=4, seed=5))
        assert d.speakers == speaker_labels(4)
        for s in d.segments:
            for t in (s.onset, s.offset):
                assert abs(t / 0.08 - round(t / 0.08)) < 1e-6
        assert max(s.offset for s in d.segments) <= 300.0 + 1e-9

    def test_from_dict(self):
        assert SessionSpec.from_dict({"seed": 4}).name == "sim000004"
        with pytest.raises(ValueError):
            SessionSpec.from_dict({"bogus": 1})


class TestPrototypes:
    def test_orthonormal_when_square(self):
        p = gen_prototypes(8, 8, 60, 0)
        assert np.allclose(p @ p.T, np.eye(8), atol=1e-12)

    def test_separation(self):
        for seed in range(20):
            p = gen_prototypes(2, 16, 60, seed)
            assert p[0] @ p[1] <= math.cos(math.radians(60)) + 1e-12
        p = gen_prototypes(4, 16, 60, 1)
        g = p @ p.T
        assert np.all(g[~np.eye(4, dtype=bool)] <= 0.5 + 1e-12)

    def test_deterministic(self):
        assert np.array_equal(gen_prototypes(3, 16, 60, 9), gen_prototypes(3, 16, 60, 9))

    def test_infeasible(self):
        with pytest.raises(ValueError):
            gen_prototypes(5, 2, 100, 0, max_tries=200)


class TestEmbeddings:
    def setup_method(self):
        self.protos = dict(zip("AB", np.eye(4)[:2]))

    def test_noise_free_solo(self):
        d = Diarization.from_tuples("s", [("A", 0, 9)])
        e = gen_embeddings(d, self.protos, noise_deg=0.0)
        assert np.array_equal(e.vectors, np.tile(np.float32([1, 0, 0, 0]), (len(e), 1)))

    def test_mean_cosine(self):
        d = Diarization.from_tuples("s", [("A", 0.0, 1501.5)])
        e = gen_embeddings(d, self.protos, noise_deg=5.0, seed=1)
        assert len(e) >= 1000
        cos = e.vectors.astype(float) @ np.array([1.0, 0, 0, 0])
        assert cos.mean() >= math.cos(math.radians(10))

    def test_equal_mix(self):
        d = Diarization.from_tuples("s", [("A", 0, 3), ("B", 0, 3)])
        e = gen_embeddings(d, self.protos, noise_deg=0.0)
        assert np.allclose(e.vectors[0], [2**-0.5, 2**-0.5, 0, 0], atol=1e-7)

    def test_linear_mix_option(self):
        d = Diarization.from_tuples("s", [("A", 0, 2), ("B", 2, 3)])
        lin = gen_embeddings(d, self.protos, noise_deg=0.0, mix_exponent=1.0).vectors[0]
        sq = gen_embeddings(d, self.protos, noise_deg=0.0).vectors[0]
        assert np.allclose(lin, np.array([2, 1, 0, 0]) / math.sqrt(5), atol=1e-7)
        assert np.allclose(sq, np.array([4, 1, 0, 0]) / math.sqrt(17), atol=1e-7)

    def test_missing_prototype(self):
        with pytest.raises(ValueError):
            gen_embeddings(Diarization.from_tuples("s", [("C", 0, 3)]), self.protos)

    def test_windows_follow_policy(self):
        d = Diarization.from_tuples("s", [("A", 0, 7.5)])
        e = gen_embeddings(d, self.protos, WindowingPolicy(), noise_deg=0.0)
        assert [(w.onset, w.offset) for w in e.segments] == [(0, 3), (1.5, 4.5), (3, 6), (4.5, 7.5)]


class TestOracle:
    def setup_method(self):
        self.s = simulate_session(SessionSpec(seed=2, duration=60))
        self.labels = sorted(self.s.prototypes)

    def test_exact_with_true_prompts(self):
        o = gen_oracle(self.s.truth, self.s.prototypes)
        ps = [Prompt(k, self.s.prototypes[k], 1.0) for k in self.labels]
        m = o("x", ps)
        assert np.array_equal(m.probs, segments_to_activity(self.s.truth, 0.08, self.labels).probs)

    def test_padding_column_zero(self):
        o = gen_oracle(self.s.truth, self.s.prototypes, confusion_noise=0.0)
        m = o("x", [Prompt(padding_label(0), np.zeros(16), 0.0)])
        assert not m.probs.any()

    def test_single_prototype_column(self):
        o = gen_oracle(self.s.truth, self.s.prototypes)
        k = self.labels[1]
        m = o("x", [Prompt("p", self.s.prototypes[k], 1.0)])
        truth = segments_to_activity(self.s.truth, 0.08, self.labels).probs[:, 1]
        assert np.array_equal(m.probs[:, 0], truth)

    def test_noise_deterministic(self):
        o = gen_oracle(self.s.truth, self.s.prototypes, confusion_noise=0.1, seed=4)
        ps = [Prompt(k, self.s.prototypes[k], 1.0) for k in self.labels]
        a, b = o("x", ps).probs, o("x", ps).probs
        assert np.array_equal(a, b)
        clean = segments_to_activity(self.s.truth, 0.08, self.labels).probs
        assert abs((a != clean).mean() - 0.1) < 0.02


class TestTranscripts:
    def setup_method(self):
        self.d = simulate_session(SessionSpec(seed=6, duration=300)).truth
        self.ref = gen_transcript(self.d, seed=6)

    def test_zero_target(self):
        assert corrupt_transcript(self.ref, 0.0) == self.ref

    def test_realized_cer(self):
        for seed in range(10):
            hyp = corrupt_transcript(self.ref, 0.15, seed=seed)
            ref_text = "".join(u.text for u in self.ref.utterances)
            hyp_text = "".join(u.text for u in hyp.utterances)
            assert len(ref_text) >= 500
            assert abs(sum(edit_distance(ref_text, hyp_text)) / len(ref_text) - 0.15) <= 0.02
            assert abs(cp_cer(self.ref, hyp).cp_cer - 0.15) <= 0.02

    def test_deterministic(self):
        assert corrupt_transcript(self.ref, 0.15, seed=1) == corrupt_transcript(self.ref, 0.15, seed=1)

    def test_speakers_match_segments(self):
        assert [u.speaker for u in self.ref.utterances] == [s.speaker for s in self.d.segments]


class TestSession:
    def test_bytes_identical(self):
        a = simulate_session(SessionSpec(seed=8, duration=60))
        b = simulate_session(SessionSpec(seed=8, duration=60))
        assert write_embeddings(a.embeddings) == write_embeddings(b.embeddings)

    def test_perturb(self):
        d = simulate_session(SessionSpec(seed=8, duration=120)).truth
        p = perturb_diarization(d, 0.25, 0.05, seed=1, label_prefix="c")
        assert all(s.startswith("c") for s in p.speakers) and len(p.speakers) == len(d.speakers)
        assert normalize(p) == p
        assert speech_union(perturb_diarization(d, 0.0, 0.0, seed=2)) == speech_union(d)
