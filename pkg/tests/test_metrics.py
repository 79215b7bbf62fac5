import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from petforge.data import Trial, TrialSet
from petforge.errors import InputError, NumericError
from petforge.metrics import (DcfParams, attach_labels, compute_eer, compute_min_dcf, cosine_score,
                              read_scores, score_trials, write_scores)


def brute_rates(scores, labels):
    """Miss / false-alarm rates by direct counting at every candidate threshold."""
    tgt = [s for s, l in zip(scores, labels) if l]
    non = [s for s, l in zip(scores, labels) if not l]
    points = []
    for t in sorted(set(scores)) + [float("inf")]:
        miss = sum(1 for s in tgt if s < t) / len(tgt)
        fa = sum(1 for s in non if s >= t) / len(non)
        points.append((miss, fa))
    return points


def brute_eer(scores, labels):
    points = brute_rates(scores, labels)
    for (m0, f0), (m1, f1) in zip([(None, None)] + points, points):
        if m1 - f1 >= 0:
            if m1 == f1:
                return m1
            # the segment from (m0, f0) to (m1, f1) crosses miss == fa
            t = (f0 - m0) / ((m1 - m0) - (f1 - f0))
            return m0 + t * (m1 - m0)
    raise AssertionError("rates never cross")


def brute_min_dcf(scores, labels, p=0.05, c_miss=1.0, c_fa=1.0):
    costs = [p * c_miss * m + (1 - p) * c_fa * f for m, f in brute_rates(scores, labels)]
    return min(costs) / min(p * c_miss, (1 - p) * c_fa)


def random_instance(rng):
    n = int(rng.integers(2, 101))
    labels = rng.integers(0, 2, size=n)
    labels[0], labels[1] = 1, 0
    # coarse grid so ties are frequent
    scores = np.round(rng.normal(size=n) + labels * rng.uniform(0, 2), int(rng.integers(0, 3)))
    return scores.tolist(), labels.tolist()


class TestEer:
    def test_perfect_separation(self):
        assert compute_eer([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 0.0

    def test_half(self):
        assert compute_eer([0.9, 0.4, 0.6, 0.1], [1, 1, 0, 0]) == 0.5

    def test_inverted(self):
        assert compute_eer([0.1, 0.9], [1, 0]) == 1.0

    def test_single_class(self):
        with pytest.raises(InputError):
            compute_eer([0.1, 0.2], [1, 1])

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            s, l = random_instance(rng)
            assert abs(compute_eer(s, l) - brute_eer(s, l)) <= 1e-9

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.integers(-50, 50), st.booleans()), min_size=2, max_size=60))
    def test_invariant_under_monotone_map(self, pairs):
        # grid scores: exp must stay strictly monotone after rounding
        scores = [p[0] / 10 for p in pairs] + [0.0, 0.0]
        labels = [p[1] for p in pairs] + [True, False]
        eer = compute_eer(scores, labels)
        assert 0.0 <= eer <= 1.0
        assert compute_eer(np.exp(np.array(scores)) * 3 + 1, labels) == pytest.approx(eer, abs=1e-12)


class TestMinDcf:
    def test_perfect_separation(self):
        assert compute_min_dcf([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 0.0

    def test_degenerate_scores(self):
        assert compute_min_dcf([0.5] * 6, [1, 0, 1, 0, 0, 0]) == pytest.approx(1.0)

    def test_brute_force_oracle_exact(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            s, l = random_instance(rng)
            assert compute_min_dcf(s, l) == pytest.approx(brute_min_dcf(s, l), rel=1e-12, abs=1e-15)

    def test_custom_costs(self):
        rng = np.random.default_rng(2)
        s, l = random_instance(rng)
        params = DcfParams(p_target=0.3, c_miss=2.0, c_fa=0.5)
        assert compute_min_dcf(s, l, params) == pytest.approx(brute_min_dcf(s, l, 0.3, 2.0, 0.5))

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.floats(-5, 5), st.booleans()), min_size=1, max_size=60))
    def test_bounded_by_one(self, pairs):
        scores = [p[0] for p in pairs] + [1.0, -1.0]
        labels = [p[1] for p in pairs] + [True, False]
        assert 0.0 <= compute_min_dcf(scores, labels) <= 1.0 + 1e-12


class TestCosine:
    def test_identical(self):
        assert cosine_score([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_score([1.0, 0.0], [0.0, 5.0]) == 0.0

    def test_antiparallel(self):
        assert cosine_score([1.0, -2.0], [-2.0, 4.0]) == pytest.approx(-1.0)

    def test_zero_norm(self):
        with pytest.raises(NumericError):
            cosine_score([0.0, 0.0], [1.0, 0.0])


class TestScoreFiles:
    def lookup(self):
        rng = np.random.default_rng(3)
        return {u: rng.normal(size=8) for u in "abcd"}

    def test_empty(self, tmp_path):
        scored = score_trials(TrialSet([]), {})
        write_scores(tmp_path / "s.txt", scored)
        assert (tmp_path / "s.txt").read_text() == ""

    def test_symmetric(self):
        emb = self.lookup()
        a = score_trials(TrialSet([Trial(1, "a", "b")]), emb).scores
        b = score_trials(TrialSet([Trial(1, "b", "a")]), emb).scores
        assert a[0] == b[0]

    def test_missing_id(self):
        with pytest.raises(KeyError, match="'z'"):
            score_trials(TrialSet([Trial(1, "a", "z")]), self.lookup())

    def test_round_trip_six_decimals(self, tmp_path):
        trials = TrialSet([Trial(1, "a", "b"), Trial(0, "a", "c"), Trial(0, "d", "b")])
        scored = score_trials(trials, self.lookup())
        write_scores(tmp_path / "s.txt", scored)
        lines = (tmp_path / "s.txt").read_text().splitlines()
        assert all(len(line.split()[2].split(".")[1]) == 6 for line in lines)
        back = attach_labels(read_scores(tmp_path / "s.txt"), trials)
        np.testing.assert_array_equal(back.scores, np.round(scored.scores, 6))
        np.testing.assert_array_equal(back.labels, trials.labels)

    def test_attach_missing(self):
        with pytest.raises(InputError):
            attach_labels([("a", "b", 0.5)], TrialSet([Trial(1, "a", "c")]))
