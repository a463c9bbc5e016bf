import numpy as np
import pytest

from searchrec.states import (
    EMPTY,
    RecState,
    SimplexLattice,
    enumerate_multisets,
    interpolate_value,
    snap,
    transition,
    update_freq,
)


class TestUpdateFreq:
    def test_view_counts_to_frequencies(self):
        out = update_freq(None, 0, [0, 0, 0, 1, 2], k=3)
        assert np.allclose(out, [0.6, 0.2, 0.2], atol=1e-15)

    def test_slate_sequence(self):
        r1 = update_freq(None, 0, [2, 1, 1], k=3)
        assert np.allclose(r1, [0.0, 2 / 3, 1 / 3])
        r2 = update_freq(r1, 3, [0, 1, 1])
        assert np.allclose(r2, [1 / 6, 4 / 6, 1 / 6])

    def test_single_slot_sequence(self):
        r2 = update_freq(None, 0, [2], k=3)
        r3 = update_freq(r2, 1, [0])
        assert np.allclose(r3, [0.5, 0.0, 0.5])

    def test_matching_distribution_is_fixed_point(self):
        prev = np.array([0.5, 0.25, 0.25])
        out = update_freq(prev, 4, [0, 0, 1, 2])
        assert np.allclose(out, prev, atol=1e-15)

    def test_sums_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            k = int(rng.integers(2, 6))
            n = int(rng.integers(1, 30))
            counts = rng.multinomial(n, np.ones(k) / k)
            prev = counts / n
            items = rng.integers(0, k, size=rng.integers(1, 6)).tolist()
            out = update_freq(prev, n, items)
            assert abs(out.sum() - 1.0) < 1e-12

    def test_empty_requires_zero_count(self):
        with pytest.raises(ValueError):
            update_freq(None, 3, [0], k=2)


class TestLattice:
    def test_point_count(self):
        from math import comb

        for k, g in [(2, 2), (3, 4), (4, 3), (8, 4)]:
            lat = SimplexLattice(k, g)
            assert lat.n_points == comb(g + k - 1, k - 1)
            assert lat.size == lat.n_points + 1

    def test_snap_identity_on_lattice(self):
        lat = SimplexLattice(3, 4)
        for p in lat.points:
            assert np.array_equal(lat.snap(p), p)

    def test_snap_two_cluster_example(self):
        lat = SimplexLattice(2, 2)
        assert np.allclose(lat.snap(np.array([0.6, 0.4])), [0.5, 0.5])

    def test_snap_empty(self):
        lat = SimplexLattice(3, 2)
        assert lat.snap(EMPTY) is EMPTY
        assert lat.snap_index(EMPTY) == lat.empty_index

    def test_snap_idempotent_and_bounded(self):
        # exhaustive over a fine simplex grid at K=3 for several G
        for g in (2, 4, 8):
            lat = SimplexLattice(3, g)
            fine = SimplexLattice(3, 24)
            for v in fine.points:
                s = lat.snap(v)
                assert np.max(np.abs(v - s)) <= 1.0 / g + 1e-12
                assert np.array_equal(lat.snap(s), s)

    def test_snap_tie_breaks_lexicographically(self):
        lat = SimplexLattice(2, 2)
        # (0.75, 0.25) is equidistant from (0.5, 0.5) and (1, 0)
        assert np.allclose(lat.snap(np.array([0.75, 0.25])), [0.5, 0.5])

    def test_interpolate_constant_and_exact(self):
        lat = SimplexLattice(3, 3)
        table = np.full(lat.size, 2.5)
        assert lat.interpolate(np.array([0.2, 0.5, 0.3]), table) == 2.5
        table = np.arange(lat.size, dtype=float)
        for i, p in enumerate(lat.points):
            assert lat.interpolate(p, table) == float(i)

    def test_interpolation_error_shrinks_with_g(self):
        target = np.array([0.23, 0.31, 0.46])

        def f(v):
            return np.abs(np.asarray(v) - target).sum()

        fine = SimplexLattice(3, 30)
        errs = {}
        for g in (2, 4, 8):
            lat = SimplexLattice(3, g)
            table = np.array([f(p) for p in lat.points] + [0.0])
            errs[g] = max(
                abs(lat.interpolate(v, table) - f(v)) for v in fine.points
            )
        assert errs[4] <= errs[2] / 1.5
        assert errs[8] <= errs[4] / 1.5


class TestTransition:
    def test_cold_start_three_slot_step(self):
        s1 = RecState(t=1, a=2)
        s2 = transition(s1, searched=0, rec=(0, 0, 0), k=3)
        assert s2.t == 2 and s2.a == 0
        assert np.allclose(s2.A, [0, 0, 1])
        assert np.allclose(s2.R, [1, 0, 0])

    def test_cold_start_mixed_slate(self):
        s1 = RecState(t=1, a=2)
        s2 = transition(s1, searched=0, rec=(2, 1, 1), k=3)
        assert (s2.t, s2.a) == (2, 0)
        assert np.allclose(s2.A, [0, 0, 1])
        assert np.allclose(s2.R, [0, 2 / 3, 1 / 3])

    def test_deterministic(self):
        s1 = RecState(t=1, a=1)
        a = transition(s1, 0, (1, 2, 2), k=3)
        b = transition(s1, 0, (1, 2, 2), k=3)
        assert a == b

    def test_counts_track_history_sizes(self):
        s = RecState(t=1, a=0)
        rng = np.random.default_rng(3)
        for step in range(6):
            s = transition(s, int(rng.integers(3)), rng.integers(3, size=3), k=3)
            assert sum(s.views) == s.t - 1
            assert sum(s.recs) == 3 * (s.t - 1)

    def test_t1_state_carries_no_history(self):
        with pytest.raises(ValueError):
            RecState(t=1, a=0, views=(1, 0, 0))


class TestReplayInvariant:
    def test_reconstruction_matches_exact_rationals(self):
        from fractions import Fraction

        rng = np.random.default_rng(11)
        k = 3
        for _ in range(50):
            n_steps = int(rng.integers(2, 8))
            state = RecState(t=1, a=int(rng.integers(k)))
            clicks = [state.a]
            slates = []
            for _ in range(n_steps):
                slate = tuple(int(c) for c in rng.integers(k, size=3))
                nxt = int(rng.integers(k))
                state = transition(state, nxt, slate, k=k)
                slates.append(slate)
                clicks.append(nxt)
            views = clicks[:-1]
            expect_A = [Fraction(views.count(c), len(views)) for c in range(k)]
            flat = [c for s in slates for c in s]
            expect_R = [Fraction(flat.count(c), len(flat)) for c in range(k)]
            assert all(
                Fraction(int(v), sum(map(int, state.views))) == e
                for v, e in zip(state.views, expect_A)
            )
            assert all(
                Fraction(int(r), sum(map(int, state.recs))) == e
                for r, e in zip(state.recs, expect_R)
            )


def test_module_level_snap_and_interpolate():
    lat = SimplexLattice(2, 2)
    assert np.allclose(snap(np.array([0.6, 0.4]), lat), [0.5, 0.5])
    assert snap(EMPTY, lat) is EMPTY
    table = np.arange(lat.size, dtype=float)
    for i, p in enumerate(lat.points):
        assert interpolate_value(p, table, lat) == float(i)
    assert interpolate_value(EMPTY, table, lat) == float(lat.empty_index)


def test_enumerate_multisets_counts():
    from math import comb

    for k in (1, 2, 3, 8):
        rows = enumerate_multisets(k, 3)
        assert rows.shape == (comb(k + 2, 3), 3)
        as_tuples = [tuple(r) for r in rows.tolist()]
        assert as_tuples == sorted(as_tuples)
        assert all(tuple(sorted(r)) == tuple(r) for r in as_tuples)
