import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mocobench.problems import Instance, ProblemKind, evaluate_objectives
from mocobench.scalarize import IdealPoint, tchebycheff, update_ideal, weighted_sum

simplex2 = st.floats(0.0, 1.0).map(lambda a: np.array([a, 1.0 - a]))


class TestWeightedSum:
    def test_examples(self):
        assert weighted_sum((5, 10), (0.2, 0.8)) == pytest.approx(9.0)
        assert weighted_sum((2, 4), (0.5, 0.5)) == pytest.approx(3.0)

    @settings(max_examples=30, deadline=None)
    @given(simplex2, st.floats(-5, 5))
    def test_convexity_identity(self, lam, c):
        assert weighted_sum((c, c), lam) == pytest.approx(c, abs=1e-12)

    def test_simplex_violation(self):
        with pytest.raises(ValueError):
            weighted_sum((1, 2), (0.7, 0.4))

    @settings(max_examples=30, deadline=None)
    @given(simplex2, st.integers(0, 2**32 - 1))
    def test_linear_in_objectives(self, lam, seed):
        rng = np.random.default_rng(seed)
        f, g = rng.random(2), rng.random(2)
        a, b = rng.random(2)
        lhs = weighted_sum(a * f + b * g, lam)
        assert lhs == pytest.approx(a * weighted_sum(f, lam) + b * weighted_sum(g, lam))


class TestTchebycheff:
    def test_examples(self):
        assert tchebycheff((10, 2), (0.3, 0.7), (1, 1)) == pytest.approx(2.7)
        assert tchebycheff((4, 4), (1.0, 0.0), (0, 0)) == pytest.approx(4.0)
        z = np.array([0.3, 0.4])
        assert tchebycheff(z, (0.5, 0.5), z) == 0.0

    @settings(max_examples=30, deadline=None)
    @given(simplex2, st.floats(0.1, 10), st.integers(0, 2**32 - 1))
    def test_positively_homogeneous(self, lam, scale, seed):
        rng = np.random.default_rng(seed)
        f = rng.random(2) + 1
        z = rng.random(2)
        base = tchebycheff(f, lam, z)
        scaled = tchebycheff(z + scale * (f - z), lam, z)
        assert scaled == pytest.approx(scale * base, rel=1e-12)

    def test_degenerate_axis_preference_matches_single_objective(self):
        rng = np.random.default_rng(0)
        fs = rng.random((50, 2))
        z = np.zeros(2)
        lam = np.array([1.0, 0.0])
        tch_order = np.argmin([tchebycheff(f, lam, z) for f in fs])
        assert tch_order == np.argmin(fs[:, 0])


class TestUpdateIdeal:
    def test_examples(self):
        assert np.allclose(update_ideal((1, 1), (0.5, 2)), (0.5, 1))
        assert np.allclose(update_ideal((0, 0), (3, 3)), (0, 0))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_idempotent_and_order_independent(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.random((6, 3))
        z0 = np.ones(3) * 10
        fold = z0
        for p in pts:
            fold = update_ideal(fold, p)
        shuffled = z0
        for p in pts[rng.permutation(6)]:
            shuffled = update_ideal(shuffled, p)
        assert np.array_equal(fold, shuffled)
        assert np.array_equal(update_ideal(fold, fold), fold)

    def test_fold_over_enumerated_tours(self):
        # exhaustive 5-node enumeration is the oracle for the running minimum
        rng = np.random.default_rng(3)
        inst = Instance(kind=ProblemKind.BI_TSP, id="e", features=rng.random((5, 4)))
        objs = [
            evaluate_objectives(inst, (0,) + perm)
            for perm in itertools.permutations(range(1, 5))
        ]
        expect = np.min(np.stack(objs), axis=0)
        tracker = IdealPoint()
        for f in objs:
            tracker.observe(f)
        assert np.allclose(tracker.get(2), expect)

    def test_tracker_starts_from_first_batch(self):
        tracker = IdealPoint()
        assert np.array_equal(tracker.get(2), np.zeros(2))
        tracker.observe(np.array([[3.0, 4.0], [2.0, 6.0]]))
        assert np.array_equal(tracker.get(2), [2.0, 4.0])
