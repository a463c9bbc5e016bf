import numpy as np
import pytest

import searchrec as sr
from searchrec.clickstream import (
    ClickstreamError,
    Event,
    Session,
    extract_status_quo_matrix,
    first_click_distribution,
    generate_synthetic,
    generate_vehicle_sessions,
    load_clickstream,
    recode_to_clusters,
    save_clickstream,
    sessions_to_training,
    truncate_sessions,
)
from searchrec.dpsolver import MatrixRecPolicy
from searchrec.policy import FunctionPolicy


def constant_policy(k, probs, horizon=22):
    probs = np.asarray(probs, dtype=float)

    def fn(t, a, A, R, A_empty, R_empty):
        return np.tile(probs, (np.asarray(t).shape[0], 1))

    return FunctionPolicy(k, horizon, fn, name="const")


def uniform_matrix(k):
    return np.full((k, k), 1.0 / k)


class TestSessionValidation:
    def test_three_searches_then_exit_is_length_four(self):
        events = [
            Event(1, "search", 0),
            Event(2, "search", 1, (0, 1, 2)),
            Event(3, "search", 2, (1, 1, 2)),
            Event(4, "exit", None, (0, 0, 1)),
        ]
        s = Session("a", events)
        s.validate()
        assert len(s) == 4
        assert s.terminal == "exit"
        assert s.n_pageviews == 3

    def test_event_after_terminal_rejected(self):
        events = [
            Event(1, "search", 0),
            Event(2, "convert", 1, (0, 1, 2)),
            Event(3, "search", 2, (1, 1, 2)),
        ]
        with pytest.raises(ClickstreamError, match="session bad.*terminal"):
            Session("bad", events).validate()

    def test_gap_in_t_rejected(self):
        events = [Event(1, "search", 0), Event(3, "search", 1, (0, 1, 2))]
        with pytest.raises(ClickstreamError, match="gap"):
            Session("g", events).validate()

    def test_wrong_rec_count_rejected(self):
        events = [Event(1, "search", 0), Event(2, "search", 1, (0, 1))]
        with pytest.raises(ClickstreamError, match="slots"):
            Session("r", events).validate()

    def test_first_event_carries_no_recs(self):
        with pytest.raises(ClickstreamError, match="slots"):
            Session("f", [Event(1, "search", 0, (1, 2, 0))]).validate()


class TestJsonlRoundTrip:
    def test_save_load_bit_identical(self, tmp_path):
        world = sr.default_world(k=3, horizon=12)
        sessions = generate_synthetic(
            world.truth, MatrixRecPolicy(world.rec_matrix, 12), 200,
            horizon=12, seed=9, first_click=world.first_click,
        )
        p1 = tmp_path / "a.jsonl"
        p2 = tmp_path / "b.jsonl"
        save_clickstream(sessions, p1)
        loaded, rejected = load_clickstream(p1)
        assert not rejected
        save_clickstream(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_malformed_line_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"sid": "x", "t": 1, "action": {"search": 1}, "recs": []}\nnot json\n')
        with pytest.raises(ClickstreamError, match="line 2"):
            load_clickstream(path)

    def test_strict_false_collects_diagnostics(self, tmp_path):
        lines = [
            '{"sid": "ok", "t": 1, "action": {"search": 1}, "recs": []}',
            '{"sid": "bad", "t": 1, "action": {"search": 1}, "recs": []}',
            '{"sid": "bad", "t": 3, "action": "exit", "recs": [1, 1, 2]}',
        ]
        path = tmp_path / "mix.jsonl"
        path.write_text("\n".join(lines) + "\n")
        sessions, rejected = load_clickstream(path, strict=False)
        assert [s.session_id for s in sessions] == ["ok"]
        assert len(rejected) == 1 and "bad" in rejected[0]

    def test_event_after_convert_raises_naming_session(self, tmp_path):
        lines = [
            '{"sid": "s9", "t": 1, "action": {"search": 1}, "recs": []}',
            '{"sid": "s9", "t": 2, "action": {"convert": 2}, "recs": [1, 2, 3]}',
            '{"sid": "s9", "t": 3, "action": {"search": 1}, "recs": [1, 2, 3]}',
        ]
        path = tmp_path / "term.jsonl"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ClickstreamError, match="s9"):
            load_clickstream(path)


class TestRecode:
    def test_two_vehicles_same_cluster(self):
        events = [
            Event(1, "search", "v1"),
            Event(2, "search", "v2", ("v1", "v3", "v3")),
        ]
        sessions = [Session("s", events)]
        assignments = {"v1": 2, "v2": 2, "v3": 0}
        out = recode_to_clusters(sessions, assignments, k=3)
        assert [e.item for e in out[0].events] == [2, 2]
        assert out[0].events[1].recs == (2, 0, 0)

    def test_empty_input(self):
        assert recode_to_clusters([], {}, k=3) == []

    def test_unknown_vehicle_rejected(self):
        sessions = [Session("s", [Event(1, "search", "vX")])]
        with pytest.raises(ClickstreamError, match="vX"):
            recode_to_clusters(sessions, {"v1": 0}, k=2)

    def test_singleton_clusters_identity(self):
        events = [
            Event(1, "search", 1),
            Event(2, "convert", 0, (2, 1, 0)),
        ]
        sessions = [Session("s", events)]
        identity = {c: c for c in range(3)}
        out = recode_to_clusters(sessions, identity, k=3)
        assert [e.item for e in out[0].events] == [1, 0]
        assert out[0].events[1].recs == (2, 1, 0)

    def test_vehicle_fill_roundtrip(self):
        world = sr.default_world(k=3, horizon=10)
        cluster_sessions = generate_synthetic(
            world.truth, MatrixRecPolicy(world.rec_matrix, 10), 50,
            horizon=10, seed=4, first_click=world.first_click,
        )
        members = {c: [f"veh{c}_{i}" for i in range(5)] for c in range(3)}
        assignments = {v: c for c, vs in members.items() for v in vs}
        vehicle_sessions = generate_vehicle_sessions(cluster_sessions, members, seed=1)
        back = recode_to_clusters(vehicle_sessions, assignments, k=3)
        for a, b in zip(cluster_sessions, back):
            assert [e.item for e in a.events] == [e.item for e in b.events]
            assert [tuple(sorted(e.recs)) for e in a.events] == [
                tuple(sorted(e.recs)) for e in b.events
            ]


class TestGenerate:
    def test_always_exit_truth_gives_length_one(self):
        k = 2
        probs = np.zeros(2 * k + 1)
        probs[2 * k] = 1.0
        truth = constant_policy(k, probs, horizon=10)
        sessions = generate_synthetic(
            truth, MatrixRecPolicy(uniform_matrix(k), 10), 50, horizon=10, seed=3
        )
        assert all(len(s) == 1 and s.terminal == "exit" for s in sessions)

    def test_geometric_exit_mean_length(self):
        k = 2
        q = 0.3
        probs = np.array([(1 - q) / 2, (1 - q) / 2, 0.0, 0.0, q])
        truth = constant_policy(k, probs, horizon=100_000)
        sessions = generate_synthetic(
            truth, MatrixRecPolicy(uniform_matrix(k), 100_000), 100_000,
            horizon=100_000, seed=12,
        )
        lengths = np.array([len(s) for s in sessions])
        # geometric with success prob q starting at 1
        se = np.sqrt((1 - q) / q**2 / len(lengths))
        assert abs(lengths.mean() - 1 / q) <= 3 * se

    def test_no_event_after_terminal_and_censoring(self):
        world = sr.default_world(k=3, horizon=6)
        sessions = generate_synthetic(
            world.truth, MatrixRecPolicy(world.rec_matrix, 6), 400,
            horizon=6, seed=8, first_click=world.first_click,
        )
        for s in sessions:
            s.validate()
            assert len(s) <= 6
            if len(s) == 6 and s.events[-1].action == "search":
                assert s.terminal == "censored"

    def test_deterministic_given_seed(self):
        world = sr.default_world(k=3, horizon=8)
        a = generate_synthetic(
            world.truth, MatrixRecPolicy(world.rec_matrix, 8), 30,
            horizon=8, seed=21, first_click=world.first_click,
        )
        b = generate_synthetic(
            world.truth, MatrixRecPolicy(world.rec_matrix, 8), 30,
            horizon=8, seed=21, first_click=world.first_click,
        )
        for sa, sb in zip(a, b):
            assert sa == sb

    def test_calibrated_world_moments(self):
        world = sr.default_world()
        sessions = generate_synthetic(
            world.truth, MatrixRecPolicy(world.rec_matrix, world.horizon),
            20_000, horizon=world.horizon, seed=5, first_click=world.first_click,
        )
        pageviews = np.mean([s.n_pageviews for s in sessions])
        conversion = np.mean([s.terminal == "convert" for s in sessions])
        assert 6.0 <= pageviews <= 8.0
        assert 0.02 <= conversion <= 0.04

    def test_full_scale_stream_load(self, tmp_path):
        # a file the size of a season of traffic loads in one pass and
        # reports sane browsing moments
        world = sr.default_world()
        sessions = generate_synthetic(
            world.truth, MatrixRecPolicy(world.rec_matrix, world.horizon),
            71_143, horizon=world.horizon, seed=13, first_click=world.first_click,
        )
        path = tmp_path / "full.jsonl"
        save_clickstream(sessions, path)
        loaded, rejected = load_clickstream(path)
        assert not rejected
        assert len(loaded) == 71_143
        pageviews = np.mean([s.n_pageviews for s in loaded])
        assert 6.0 <= pageviews <= 8.0


class TestStatusQuoMatrix:
    def test_counting_example(self):
        events = [
            Event(1, "search", 0),
            Event(2, "exit", None, (0, 1, 1)),
        ]
        m, flagged = extract_status_quo_matrix([Session("s", events)], k=3)
        assert np.allclose(m[0], [1 / 3, 2 / 3, 0.0])
        assert not flagged[0] and flagged[1] and flagged[2]
        assert np.allclose(m[1], 1 / 3)

    def test_rows_sum_to_one(self):
        world = sr.default_world(k=3, horizon=10)
        sessions = generate_synthetic(
            world.truth, MatrixRecPolicy(world.rec_matrix, 10), 500,
            horizon=10, seed=2, first_click=world.first_click,
        )
        m, _ = extract_status_quo_matrix(sessions, 3)
        assert np.abs(m.sum(axis=1) - 1.0).max() < 1e-12

    def test_recovers_generating_matrix(self):
        k = 3
        gen = np.array([[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.25, 0.25, 0.5]])
        probs = np.array([0.3, 0.3, 0.3, 0.0, 0.0, 0.0, 0.1])
        truth = constant_policy(k, probs, horizon=60)
        sessions = generate_synthetic(
            truth, MatrixRecPolicy(gen, 60), 40_000, horizon=60, seed=6,
            first_click=np.full(k, 1 / k),
        )
        impressions = 3 * sum(
            1
            for s in sessions
            for prev, nxt in zip(s.events, s.events[1:])
            if prev.action == "search"
        )
        assert impressions > 1_000_000
        m, flagged = extract_status_quo_matrix(sessions, k)
        assert not flagged.any()
        assert np.abs(m - gen).max() <= 0.01

    def test_diagonal_dominance_reflects_generator(self):
        world = sr.default_world(k=3, horizon=12)
        sessions = generate_synthetic(
            world.truth, MatrixRecPolicy(sr.diagonal_matrix(3, 0.6), 12), 4000,
            horizon=12, seed=3, first_click=world.first_click,
        )
        m, _ = extract_status_quo_matrix(sessions, 3)
        for i in range(3):
            assert m[i, i] == m[i].max()


class TestTrainingExtraction:
    def test_rows_and_state_reconstruction(self):
        events = [
            Event(1, "search", 2),
            Event(2, "search", 0, (0, 0, 0)),
            Event(3, "convert", 0, (1, 2, 2)),
        ]
        train = sessions_to_training([Session("s", events)], k=3, horizon=22)
        assert len(train) == 2
        # decision at t=2: a=first click, A empty, R = first slate
        assert train.t[0] == 2 and train.a[0] == 2
        assert train.A_empty[0] and not train.R_empty[0]
        assert np.allclose(train.R[0], [1.0, 0.0, 0.0])
        assert train.y[0] == 0  # searched cluster 0
        # decision at t=3: a=0, A={2}, R over both slates
        assert train.t[1] == 3 and train.a[1] == 0
        assert np.allclose(train.A[1], [0, 0, 1])
        assert np.allclose(train.R[1], [3 / 6, 1 / 6, 2 / 6])
        assert train.y[1] == 3  # converted cluster 0 -> k + 0

    def test_truncation_at_horizon(self):
        events = [Event(1, "search", 0)]
        for t in range(2, 12):
            events.append(Event(t, "search", t % 3, (0, 1, 2)))
        session = Session("long", events)
        train = sessions_to_training([session], k=3, horizon=5)
        assert train.t.max() == 5
        short = truncate_sessions([session], 5)[0]
        assert len(short) == 5 and short.terminal == "censored"

    def test_first_click_distribution(self):
        sessions = [
            Session("a", [Event(1, "search", 0)]),
            Session("b", [Event(1, "search", 0)]),
            Session("c", [Event(1, "search", 2)]),
            Session("d", [Event(1, "exit", None)]),
        ]
        fc = first_click_distribution(sessions, k=3)
        assert np.allclose(fc, [2 / 3, 0.0, 1 / 3])
