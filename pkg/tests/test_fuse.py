import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ppmet.fuse import FusionPolicy, dover_lap, map_labels, vote
from ppmet.score import der
from ppmet.simkit import SessionSpec, perturb_diarization, simulate_session
from ppmet.timeline import Diarization, homogeneous_regions, normalize


def D(*rows):
    return Diarization.from_tuples("s", rows)


@st.composite
def hyps(draw, m=3):
    out = []
    for k in range(m):
        rows = []
        for _ in range(draw(st.integers(0, 6))):
            on = draw(st.integers(0, 30)) / 2
            rows.append((draw(st.sampled_from(["a", "b", "c"])) + str(k), on, on + draw(st.integers(1, 10)) / 2))
        out.append(normalize(D(*rows)))
    return out


def region_checks(ds, policy=FusionPolicy()):
    """Assert the cap and majority properties region by region; returns #regions checked."""
    mapped = map_labels(ds, policy.resolve(len(ds)))
    out = vote(mapped, policy)
    w = policy.resolve(len(ds))
    checked = 0
    for _, sets in homogeneous_regions(mapped + [out]):
        ins, got = sets[:-1], sets[-1]
        counts = [len(s) for s in ins]
        n = math.floor(float(np.dot(w, counts)) + 0.5 + 1e-9)
        assert len(got) <= max(counts)
        score = {}
        for wt, s in zip(w, ins):
            for lab in s:
                score[lab] = score.get(lab, 0) + wt
        majority = {lab for lab, v in score.items() if v > 0.5 + 1e-12}
        if n >= 1 and len(majority) <= max(counts):
            assert majority <= got
            checked += 1
    return checked


class TestMapLabels:
    def test_renamed_copy(self):
        a = D(("A", 0, 5), ("B", 5, 9))
        b = a.relabel({"A": "x", "B": "y"})
        assert map_labels([a, b])[1] == a

    def test_extra_speaker_fresh_label(self):
        a = D(("A", 0, 5))
        b = D(("x", 0, 5), ("y", 6, 8))
        out = map_labels([a, b])[1]
        assert out.to_tuples() == [("A", 0, 5), ("y", 6, 8)]

    def test_fresh_label_collision(self):
        a = D(("A", 0, 5), ("y", 10, 12))
        b = D(("x", 0, 5), ("y", 6, 8))
        assert map_labels([a, b])[1].speakers == ["A", "y_1"]

    def test_single(self):
        a = D(("A", 0, 5))
        assert map_labels([a]) == [a]

    def test_empty(self):
        with pytest.raises(ValueError):
            map_labels([])


class TestVote:
    def test_identical(self):
        d = D(("A", 0, 5), ("B", 3, 8))
        assert vote([d, d, d]) == d

    def test_two_of_three(self):
        out = vote([D(("A", 0, 1)), D(("A", 0, 1)), D(("B", 0, 1))])
        assert out.to_tuples() == [("A", 0, 1)]

    def test_half_up(self):
        out = vote([D(("A", 0, 1)), D(("A", 0, 1), ("B", 0, 1))])
        assert out.to_tuples() == [("A", 0, 1), ("B", 0, 1)]

    def test_majority_floor(self):
        d = D(("A", 0, 1), ("B", 0, 1))
        assert vote([d, d, Diarization("s")]) == d

    def test_tie_lexicographic(self):
        out = vote([D(("B", 0, 1)), D(("A", 0, 1))], FusionPolicy())
        # N = round(1.0); A and B tie at 0.5, A wins lexicographically
        assert out.to_tuples() == [("A", 0, 1)]

    def test_weights(self):
        out = vote([D(("A", 0, 1)), D(("B", 0, 1)), D(("B", 0, 1))], FusionPolicy((0.6, 0.2, 0.2)))
        assert out.to_tuples() == [("A", 0, 1)]


class TestPolicy:
    def test_rank_weights(self):
        assert np.allclose(FusionPolicy(rank_weighting=True).resolve(3), [3 / 6, 2 / 6, 1 / 6])

    def test_bad_weights(self):
        with pytest.raises(ValueError):
            FusionPolicy((1.0, -1.0)).resolve(2)
        with pytest.raises(ValueError):
            FusionPolicy((1.0,)).resolve(2)


class TestDoverLap:
    def test_single_passthrough(self):
        d = D(("A", 0, 2), ("A", 1, 4))
        assert dover_lap([d]) == normalize(d)

    @given(hyps(m=1), st.lists(st.floats(0.1, 5), min_size=3, max_size=3))
    def test_unanimous_any_weights(self, h, w):
        (d,) = h
        assert dover_lap([d, d, d], FusionPolicy(tuple(w))) == d

    @given(hyps())
    def test_properties(self, ds):
        region_checks(ds)

    @pytest.mark.parametrize("seed", range(6))
    def test_order_changes_only_names(self, seed):
        s = simulate_session(SessionSpec(n_speakers=3 + seed % 2, seed=seed, duration=120))
        chs = [perturb_diarization(s.truth, 0.25, 0.05, 10 * seed + c, label_prefix=f"c{c}") for c in range(3)]
        base = dover_lap(chs)
        for perm in itertools.permutations(range(3)):
            other = dover_lap([chs[i] for i in perm])
            rep = der(base, other)
            assert rep.der == 0.0 and len(rep.mapping) == len(other.speakers)
