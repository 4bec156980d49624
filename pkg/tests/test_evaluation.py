import itertools
import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scatterloc.evaluation import (
    ConfusionMatrix,
    accumulate_confusion,
    bin_accuracy,
    circular_diff,
    confusion_svg,
    make_outcome,
    match_sources,
    matched_circular_error,
)

angles = st.floats(0, 359.999, allow_nan=False)


def brute_matched_error(truth, est):
    best = np.inf
    for perm in itertools.permutations(est):
        errs = [min(abs(t - e) % 360, 360 - abs(t - e) % 360) for t, e in zip(truth, perm)]
        best = min(best, sum(errs) / len(errs))
    return best


class TestCircular:
    def test_wraparound(self):
        assert circular_diff(350, 10) == 20
        assert circular_diff(0, 180) == 180
        assert circular_diff(-10, 710) == 0

    @settings(max_examples=100)
    @given(angles, angles)
    def test_symmetric_and_bounded(self, a, b):
        d = circular_diff(a, b)
        assert 0 <= d <= 180
        assert d == pytest.approx(circular_diff(b, a))

    def test_wrap_matching(self):
        assert matched_circular_error([350.0], [10.0]) == 20.0

    def test_permutation_matched(self):
        perm, errs = match_sources([10.0, 200.0], [205.0, 12.0])
        assert list(perm) == [1, 0]
        np.testing.assert_allclose(errs, [2.0, 5.0])

    @settings(max_examples=150, deadline=None)
    @given(st.integers(1, 3).flatmap(lambda J: st.tuples(st.lists(angles, min_size=J, max_size=J), st.lists(angles, min_size=J, max_size=J))))
    def test_brute_force_oracle(self, pair):
        truth, est = pair
        assert matched_circular_error(truth, est) == pytest.approx(brute_matched_error(truth, est), abs=1e-9)

    def test_errors(self):
        with pytest.raises(ValueError):
            match_sources([1.0, 2.0], [1.0])
        with pytest.raises(ValueError):
            match_sources(np.arange(9.0), np.arange(9.0))


class TestAccuracy:
    def test_half_bin_is_a_hit(self):
        assert make_outcome([0.0], [5.0]).hit
        assert not make_outcome([0.0], [5.5]).hit

    def test_aggregate(self):
        outs = [
            make_outcome([0.0, 90.0], [2.0, 90.0]),  # hit, err 1
            make_outcome([0.0, 90.0], [3.0, 150.0]),  # one source wrong
            make_outcome([10.0, 20.0], [13.0, 20.0]),  # hit, err 1.5
        ]
        acc, err, per = bin_accuracy(outs)
        assert acc == pytest.approx(2 / 3)
        assert err == pytest.approx(1.25)
        assert per == pytest.approx(5 / 6)

    def test_no_hits_gives_nan(self):
        acc, err, _ = bin_accuracy([make_outcome([0.0], [90.0])])
        assert acc == 0 and np.isnan(err)

    def test_empty(self):
        with pytest.raises(ValueError):
            bin_accuracy([])

    def test_snapping_calibration(self):
        rng = np.random.default_rng(0)
        truth = rng.integers(0, 360, 5000).astype(float)
        est = (np.rint(truth / 10) * 10) % 360
        outs = [make_outcome([t], [e]) for t, e in zip(truth, est)]
        acc, err, _ = bin_accuracy(outs)
        assert acc == 1.0
        assert err == pytest.approx(2.5, abs=0.2)


class TestConfusion:
    def test_recount(self):
        rng = np.random.default_rng(1)
        outs = []
        for _ in range(200):
            t = rng.choice(36, 2, replace=False) * 10.0
            e = rng.choice(36, 2, replace=False) * 10.0
            outs.append(make_outcome(t, e))
        cm = accumulate_confusion(outs, 36)
        ref = np.zeros((36, 36), int)
        for o in outs:
            perm, _ = match_sources(o.truth_deg, o.estimates_deg)
            for j, t in enumerate(o.truth_deg):
                ref[int(round(t / 10)) % 36, int(round(o.estimates_deg[perm[j]] / 10)) % 36] += 1
        np.testing.assert_array_equal(cm.counts, ref)
        assert cm.counts.sum() == 400

    def test_nearest_bin_wrap(self):
        cm = accumulate_confusion([make_outcome([358.0], [3.0])], 36)
        assert cm.counts[0, 0] == 1

    def test_merge(self):
        a = accumulate_confusion([make_outcome([0.0], [10.0])], 36)
        b = a.merge(a)
        assert b.counts[0, 1] == 2
        with pytest.raises(ValueError):
            a.merge(accumulate_confusion([make_outcome([0.0], [10.0])], 12))

    def test_csv(self, tmp_path):
        cm = ConfusionMatrix(np.array([[1, 2], [3, 4]]), np.array([0.0, 180.0]))
        cm.to_csv(tmp_path / "c.csv")
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[1] == "0,1,2" and lines[2] == "180,3,4"

    def test_svg(self, tmp_path):
        cm = accumulate_confusion([make_outcome([0.0], [10.0])], 36)
        svg = confusion_svg(cm, tmp_path / "c.svg", title="t")
        assert 'data-rows="36"' in svg and 'data-cols="36"' in svg
        assert len(re.findall(r'<rect class="cell"', svg)) == 36 * 36
        assert (tmp_path / "c.svg").read_text() == svg
