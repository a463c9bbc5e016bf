"""Clickstream sessions: ingestion, cluster recoding, synthesis.

A session is an ordered list of events. Event t carries the action the
consumer took at her t-th decision and the three recommendation slots
that were on screen when she decided (none at t=1, the first click
arrives from the homepage). Search actions continue the session;
convert and exit are terminal; a session cut at the horizon with no
terminal event is censored.

The JSONL wire format is one event per line:

    {"sid": "s1", "t": 2, "action": {"search": 3}, "recs": [1, 2, 2]}

with actions ``{"search": k}``, ``{"convert": k}`` or ``"exit"``.
Cluster indices are 1-based in files and 0-based in memory; vehicle-level
streams use string ids, which pass through unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .policy import ConsumerPolicy, TrainingSet, n_actions
from .rng import substream

__all__ = [
    "Event",
    "Session",
    "ClickstreamError",
    "load_clickstream",
    "save_clickstream",
    "recode_to_clusters",
    "truncate_sessions",
    "SyntheticParams",
    "SyntheticLogitPolicy",
    "generate_synthetic",
    "generate_vehicle_sessions",
    "extract_status_quo_matrix",
    "sessions_to_training",
    "first_click_distribution",
]

SLATE_SIZE = 3


class ClickstreamError(ValueError):
    """Raised for ill-formed sessions or events."""


@dataclass(frozen=True)
class Event:
    t: int
    action: str  # "search" | "convert" | "exit"
    item: int | str | None  # cluster index or vehicle id; None for exit
    recs: tuple = ()

    def __post_init__(self):
        if self.action not in ("search", "convert", "exit"):
            raise ClickstreamError(f"unknown action {self.action!r}")
        if self.action == "exit" and self.item is not None:
            raise ClickstreamError("exit carries no item")
        if self.action in ("search", "convert") and self.item is None:
            raise ClickstreamError(f"{self.action} requires an item")


@dataclass
class Session:
    session_id: str
    events: list[Event]

    def __len__(self) -> int:
        return len(self.events)

    @property
    def terminal(self) -> str:
        """"convert", "exit", or "censored" when no terminal event exists."""
        last = self.events[-1]
        return last.action if last.action != "search" else "censored"

    @property
    def n_pageviews(self) -> int:
        return sum(1 for e in self.events if e.action == "search")

    def validate(self) -> None:
        if not self.events:
            raise ClickstreamError(f"session {self.session_id}: empty")
        for i, event in enumerate(self.events):
            if event.t != i + 1:
                raise ClickstreamError(
                    f"session {self.session_id}: gap in t at position {i} "
                    f"(expected {i + 1}, got {event.t})"
                )
            if i + 1 < len(self.events) and event.action != "search":
                raise ClickstreamError(
                    f"session {self.session_id}: event after terminal at t={event.t}"
                )
            expected = 0 if event.t == 1 else SLATE_SIZE
            if len(event.recs) != expected:
                raise ClickstreamError(
                    f"session {self.session_id}: t={event.t} has {len(event.recs)} "
                    f"recommendation slots, expected {expected}"
                )


def _item_to_json(item):
    if item is None:
        return None
    if isinstance(item, (int, np.integer)):
        return int(item) + 1  # clusters are 1-based on the wire
    return str(item)


def _item_from_json(raw):
    if isinstance(raw, int):
        return raw - 1
    return raw


def _event_to_json(sid: str, event: Event) -> str:
    if event.action == "exit":
        action = "exit"
    else:
        action = {event.action: _item_to_json(event.item)}
    return json.dumps(
        {
            "sid": sid,
            "t": event.t,
            "action": action,
            "recs": [_item_to_json(r) for r in event.recs],
        },
        separators=(",", ":"),
        sort_keys=True,
    )


def save_clickstream(sessions: list[Session], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for session in sessions:
            for event in session.events:
                fh.write(_event_to_json(session.session_id, event))
                fh.write("\n")


def load_clickstream(path, strict: bool = True) -> tuple[list[Session], list[str]]:
    """Parse and validate a JSONL clickstream sorted by (sid, t).

    Returns the valid sessions and a list of diagnostics for rejected
    ones. With ``strict`` the first ill-formed session raises instead.
    """
    groups: dict[str, list[Event]] = {}
    order: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                sid = str(raw["sid"])
                action_raw = raw["action"]
                if action_raw == "exit":
                    action, item = "exit", None
                else:
                    (action, item_raw), = action_raw.items()
                    item = _item_from_json(item_raw)
                event = Event(
                    t=int(raw["t"]),
                    action=action,
                    item=item,
                    recs=tuple(_item_from_json(r) for r in raw.get("recs", [])),
                )
            except (KeyError, ValueError, AttributeError, ClickstreamError) as exc:
                raise ClickstreamError(f"line {lineno}: {exc}") from exc
            if sid not in groups:
                groups[sid] = []
                order.append(sid)
            groups[sid].append(event)
    sessions: list[Session] = []
    rejected: list[str] = []
    for sid in order:
        session = Session(sid, groups[sid])
        try:
            session.validate()
        except ClickstreamError as exc:
            if strict:
                raise
            rejected.append(str(exc))
            continue
        sessions.append(session)
    return sessions, rejected


def recode_to_clusters(sessions: list[Session], assignments: dict, k: int) -> list[Session]:
    """Replace vehicle references with their cluster indices."""
    out = []
    for session in sessions:
        events = []
        for event in session.events:
            item = event.item
            if event.action != "exit":
                if item not in assignments:
                    raise ClickstreamError(
                        f"session {session.session_id}: unknown vehicle {item!r}"
                    )
                item = int(assignments[item])
                if not 0 <= item < k:
                    raise ClickstreamError(f"cluster index {item} out of range")
            recs = []
            for r in event.recs:
                if r not in assignments:
                    raise ClickstreamError(
                        f"session {session.session_id}: unknown vehicle {r!r}"
                    )
                recs.append(int(assignments[r]))
            events.append(Event(event.t, event.action, item, tuple(recs)))
        out.append(Session(session.session_id, events))
    return out


def truncate_sessions(sessions: list[Session], horizon: int) -> list[Session]:
    """Censor sessions at ``horizon`` clicks, dropping later events."""
    out = []
    for session in sessions:
        kept = [e for e in session.events if e.t <= horizon]
        out.append(Session(session.session_id, kept))
    return out


@dataclass
class SyntheticParams:
    """Hand-set utilities for the synthetic ground-truth policy.

    The family is a multinomial logit over the 2K+1 actions whose
    utilities move with every state component: recommendations pull
    searches toward the recommended clusters, conversion concentrates on
    the cluster being viewed, and the exit hazard grows with time and
    with recommendations that ignore the consumer's revealed interests.
    """

    k: int
    search_base: float = 1.0
    search_rec_pull: float = 2.0
    search_current: float = 0.5
    search_habit: float = 0.5
    search_cluster: tuple = ()
    convert_base: float = -4.0
    convert_current: float = 2.5
    convert_rec: float = 1.0
    convert_habit: float = 0.0
    convert_time: float = 0.0
    convert_cluster: tuple = ()
    exit_base: float = -0.4
    exit_time: float = 1.0
    exit_mismatch: float = 1.5
    align_current_weight: float = 0.7

    def __post_init__(self):
        if not self.search_cluster:
            self.search_cluster = tuple(0.0 for _ in range(self.k))
        if not self.convert_cluster:
            self.convert_cluster = tuple(0.0 for _ in range(self.k))

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticParams":
        d = dict(d)
        for key in ("search_cluster", "convert_cluster"):
            if key in d and d[key] is not None:
                d[key] = tuple(d[key])
        return cls(**d)


class SyntheticLogitPolicy(ConsumerPolicy):
    """Closed-form ground-truth policy used for validation and demos."""

    kind = "synthetic"

    def __init__(self, params: SyntheticParams, horizon: int = 22):
        super().__init__(params.k, horizon)
        self.params = params

    def _utilities(self, t, a_onehot, A, R, A_empty, R_empty):
        p = self.params
        k = self.k
        tt = (np.asarray(t, dtype=float) / self.horizon)[:, None]
        A = np.where(A_empty[:, None], 0.0, A)
        R = np.where(R_empty[:, None], 0.0, R)
        u_search = (
            p.search_base
            + np.asarray(p.search_cluster)[None, :]
            + p.search_rec_pull * R
            + p.search_current * a_onehot
            + p.search_habit * A
        )
        u_convert = (
            p.convert_base
            + np.asarray(p.convert_cluster)[None, :]
            + p.convert_current * a_onehot
            + p.convert_rec * R
            + p.convert_habit * A
            + p.convert_time * tt
        )
        align_a = (R * a_onehot).sum(axis=1)
        align_A = (R * A).sum(axis=1)
        has_A = ~np.asarray(A_empty, dtype=bool)
        wc = p.align_current_weight
        align = np.where(
            np.asarray(R_empty, dtype=bool),
            0.5,
            wc * align_a + (1.0 - wc) * np.where(has_A, align_A, align_a),
        )
        u_exit = p.exit_base + p.exit_time * tt[:, 0] + p.exit_mismatch * (1.0 - align)
        z = np.hstack([u_search, u_convert, u_exit[:, None]])
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict_batch(self, t, a, A, R, A_empty, R_empty):
        n = np.asarray(t).shape[0]
        a_onehot = np.zeros((n, self.k))
        a_arr = np.asarray(a)
        valid = a_arr >= 0
        a_onehot[np.arange(n)[valid], a_arr[valid]] = 1.0
        return self._utilities(
            np.asarray(t, dtype=float), a_onehot,
            np.asarray(A, dtype=float), np.asarray(R, dtype=float),
            np.asarray(A_empty, dtype=bool), np.asarray(R_empty, dtype=bool),
        )

    def params_blob(self) -> bytes:
        return json.dumps(self.params.to_dict(), sort_keys=True).encode()

    def to_dict(self) -> dict:
        return {"kind": self.kind, "horizon": self.horizon, "params": self.params.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticLogitPolicy":
        return cls(SyntheticParams.from_dict(d["params"]), horizon=d["horizon"])


def _draw_index(rng: np.random.Generator, cdf: np.ndarray) -> int:
    return int(np.searchsorted(cdf, rng.random(), side="right"))


def generate_synthetic(
    truth: ConsumerPolicy,
    rec_policy,
    n_sessions: int,
    horizon: int = 22,
    seed: int = 0,
    first_click: np.ndarray | None = None,
) -> list[Session]:
    """Draw sessions by alternating consumer actions and recommendations.

    Consumer actions come from ``truth`` evaluated at the exact browsing
    state (time advanced and the new slate folded into the slot history);
    slates come from ``rec_policy``. Sessions that complete ``horizon``
    clicks are censored there. Each session owns an RNG sub-stream
    derived from (seed, index), so output is reproducible and
    independent of batching.
    """
    k = truth.k
    rngs = [substream(seed, "session", i) for i in range(n_sessions)]
    events: list[list[Event]] = [[] for _ in range(n_sessions)]
    a = np.zeros(n_sessions, dtype=int)
    views = np.zeros((n_sessions, k), dtype=np.int64)
    recs = np.zeros((n_sessions, k), dtype=np.int64)
    active = np.ones(n_sessions, dtype=bool)

    if first_click is not None:
        cdf = np.cumsum(np.asarray(first_click, dtype=float))
        cdf /= cdf[-1]
        for i in range(n_sessions):
            c = _draw_index(rngs[i], cdf)
            a[i] = c
            events[i].append(Event(1, "search", c))
    else:
        p0 = np.asarray(truth.predict_initial(), dtype=float)
        cdf = np.cumsum(p0)
        for i in range(n_sessions):
            y = _draw_index(rngs[i], cdf)
            if y < k:
                a[i] = y
                events[i].append(Event(1, "search", y))
            elif y < 2 * k:
                events[i].append(Event(1, "convert", y - k))
                active[i] = False
            else:
                events[i].append(Event(1, "exit", None))
                active[i] = False

    t = 1
    while active.any() and t < horizon:
        idx = np.flatnonzero(active)
        n_act = idx.size
        nv = views[idx].sum(axis=1)
        A_freq = np.where(nv[:, None] > 0, views[idx] / np.maximum(nv, 1)[:, None], 0.0)
        A_empty = nv == 0
        nr = recs[idx].sum(axis=1)
        R_freq = np.where(nr[:, None] > 0, recs[idx] / np.maximum(nr, 1)[:, None], 0.0)
        R_empty = nr == 0
        u_slate = np.empty((n_act, SLATE_SIZE))
        for j, i in enumerate(idx):
            u_slate[j] = rngs[i].random(SLATE_SIZE)
        slates = rec_policy.slates(
            t, a[idx], A_freq, R_freq, A_empty, R_empty, u_slate
        )
        # fold the new slate into the slot history, then query the policy
        recs_next = recs[idx].copy()
        for s in range(SLATE_SIZE):
            np.add.at(recs_next, (np.arange(n_act), slates[:, s]), 1)
        nr2 = recs_next.sum(axis=1)
        R2 = recs_next / nr2[:, None]
        probs = truth.predict_batch(
            np.full(n_act, t + 1, dtype=float), a[idx], A_freq, R2,
            A_empty, np.zeros(n_act, dtype=bool),
        )
        cdfs = np.cumsum(probs, axis=1)
        for j, i in enumerate(idx):
            y = int(np.searchsorted(cdfs[j], rngs[i].random(), side="right"))
            y = min(y, n_actions(k) - 1)
            slate = tuple(int(c) for c in slates[j])
            recs[i] = recs_next[j]
            if y < k:
                events[i].append(Event(t + 1, "search", y, slate))
                views[i, a[i]] += 1
                a[i] = y
            elif y < 2 * k:
                events[i].append(Event(t + 1, "convert", y - k, slate))
                active[i] = False
            else:
                events[i].append(Event(t + 1, "exit", None, slate))
                active[i] = False
        t += 1

    out = []
    for i in range(n_sessions):
        session = Session(f"s{i:06d}", events[i])
        session.validate()
        out.append(session)
    return out


def generate_vehicle_sessions(
    cluster_sessions: list[Session],
    members: dict[int, list[str]],
    seed: int = 0,
) -> list[Session]:
    """Replace cluster references with concrete vehicles, uniformly drawn.

    ``members`` maps cluster index to its vehicle ids. Recoding the output
    with the same membership recovers the input sessions.
    """
    rng = substream(seed, "vehicle-fill")
    out = []
    for session in cluster_sessions:
        events = []
        for event in session.events:
            item = event.item
            if event.action != "exit":
                pool = members[int(item)]
                item = pool[int(rng.integers(len(pool)))]
            recs = tuple(
                members[int(c)][int(rng.integers(len(members[int(c)])))]
                for c in event.recs
            )
            events.append(Event(event.t, event.action, item, recs))
        out.append(Session(session.session_id, events))
    return out


def extract_status_quo_matrix(
    sessions: list[Session], k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Recommendation frequencies conditional on the cluster being viewed.

    Entry (i, j) is the share of slots showing cluster j among all slates
    displayed immediately after a view of cluster i. Rows of clusters
    never viewed (with a following slate) fall back to uniform and are
    flagged in the returned mask.
    """
    counts = np.zeros((k, k), dtype=np.int64)
    for session in sessions:
        for prev, nxt in zip(session.events, session.events[1:]):
            if prev.action != "search":
                continue
            row = int(prev.item)
            for c in nxt.recs:
                counts[row, int(c)] += 1
    totals = counts.sum(axis=1)
    flagged = totals == 0
    matrix = np.empty((k, k))
    matrix[flagged] = 1.0 / k
    matrix[~flagged] = counts[~flagged] / totals[~flagged, None]
    return matrix, flagged


def sessions_to_training(
    sessions: list[Session], k: int, horizon: int
) -> TrainingSet:
    """Replay sessions into (state, action) rows for estimation.

    Decisions at t >= 2 are kept (the first click is made without
    recommendations and carries no usable state); sessions are truncated
    at the horizon.
    """
    rows_t, rows_a, rows_y, rows_sid = [], [], [], []
    rows_A, rows_R, rows_Ae, rows_Re = [], [], [], []
    for session in sessions:
        views = np.zeros(k, dtype=np.int64)
        recs = np.zeros(k, dtype=np.int64)
        prev_item: int | None = None
        for event in session.events:
            if event.t > horizon:
                break
            if event.t >= 2:
                for c in event.recs:
                    recs[int(c)] += 1
                nv, nr = views.sum(), recs.sum()
                rows_t.append(event.t)
                rows_a.append(int(prev_item))
                rows_A.append(views / nv if nv > 0 else np.zeros(k))
                rows_Ae.append(nv == 0)
                rows_R.append(recs / nr if nr > 0 else np.zeros(k))
                rows_Re.append(nr == 0)
                rows_sid.append(session.session_id)
                if event.action == "search":
                    rows_y.append(int(event.item))
                elif event.action == "convert":
                    rows_y.append(k + int(event.item))
                else:
                    rows_y.append(2 * k)
            if event.action == "search":
                if prev_item is not None:
                    views[int(prev_item)] += 1
                prev_item = int(event.item)
    return TrainingSet(
        k=k,
        horizon=horizon,
        t=np.asarray(rows_t, dtype=np.int64),
        a=np.asarray(rows_a, dtype=np.int64),
        A=np.vstack(rows_A) if rows_A else np.zeros((0, k)),
        R=np.vstack(rows_R) if rows_R else np.zeros((0, k)),
        A_empty=np.asarray(rows_Ae, dtype=bool),
        R_empty=np.asarray(rows_Re, dtype=bool),
        y=np.asarray(rows_y, dtype=np.int64),
        session_ids=np.asarray(rows_sid, dtype=object),
    )


def first_click_distribution(sessions: list[Session], k: int) -> np.ndarray:
    """Empirical distribution of the first cluster clicked."""
    counts = np.zeros(k)
    for session in sessions:
        first = session.events[0]
        if first.action == "search":
            counts[int(first.item)] += 1
    total = counts.sum()
    if total == 0:
        return np.full(k, 1.0 / k)
    return counts / total
