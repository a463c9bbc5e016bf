"""Finite-horizon planning over the discretized browsing state space.

The planner chooses a slate of three cluster recommendations after each
click. Backward induction runs over the lattice-valued process: history
components live on a simplex lattice and every update is followed by a
snap to the nearest lattice point. Within this modeled process the
solver is exact, so forward evaluation of the argmax policy reproduces
the solved values to machine precision and Monte-Carlo simulation of
the same process agrees within sampling error.

Timing: at state {t, a, A, R} the planner picks slate r; the consumer's
next decision is drawn at the post-recommendation state
{t+1, a, A, R + r}. Conversion to cluster k books that cluster's margin
and ends the session; exit books nothing. At the horizon (t = T) no
further slate is chosen and the state's value is the expected margin of
one final decision taken at the state as-is.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import factorial

import numpy as np

from .policy import ConsumerPolicy, n_actions
from .rng import substream
from .states import RecState, SimplexLattice, enumerate_multisets

__all__ = [
    "SLATE_SIZE",
    "enumerate_actions",
    "instantaneous_profit",
    "ScenarioModifiers",
    "StateSpace",
    "ValueTable",
    "RecPolicy",
    "TableRecPolicy",
    "MatrixRecPolicy",
    "bellman_solve",
    "solve_masked",
    "evaluate_policy",
    "simulate_profit",
    "summarize_policy",
    "save_value_table",
    "load_value_table",
]

SLATE_SIZE = 3


def enumerate_actions(k: int) -> np.ndarray:
    """All slates of 3 cluster indices, as sorted multisets in lex order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return enumerate_multisets(k, SLATE_SIZE)


def instantaneous_profit(state: RecState, policy: ConsumerPolicy, margins) -> float:
    """Expected margin of the decision taken at ``state``: sum over
    clusters of margin times the conditional conversion probability."""
    margins = np.asarray(margins, dtype=float)
    k = margins.shape[0]
    probs = policy.predict_state(state)
    return float(probs[k : 2 * k] @ margins)


@dataclass(frozen=True)
class ScenarioModifiers:
    """Planning distortions; evaluation always uses the true model.

    ``zero_churn`` removes the exit probability during planning and
    rescales the remaining actions. ``uniform_margins`` plans as if all
    clusters were worth the same. ``one_step`` plans for the next
    decision's payoff only.
    """

    zero_churn: bool = False
    uniform_margins: bool = False
    one_step: bool = False


class StateSpace:
    """Dense state indexing and cached transition maps for one lattice.

    States at each step are (a, iA, iR): the current cluster and lattice
    indices (EMPTY included) of the view and slot histories. Transition
    maps depend on t through the implied history sizes t-1 and 3(t-1).
    """

    def __init__(self, lattice: SimplexLattice, horizon: int):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.lattice = lattice
        self.k = lattice.k
        self.horizon = int(horizon)
        self.size = lattice.size  # lattice points + EMPTY
        self.action_list = enumerate_actions(self.k)
        self.n_act = self.action_list.shape[0]
        self.action_counts = np.zeros((self.n_act, self.k), dtype=np.int64)
        for j, slate in enumerate(self.action_list):
            for c in slate:
                self.action_counts[j, c] += 1
        k, s = self.k, self.size
        # flat state arrays for batched policy queries
        a_grid, iA_grid, iR_grid = np.meshgrid(
            np.arange(k), np.arange(s), np.arange(s), indexing="ij"
        )
        self._a_flat = a_grid.ravel()
        self._iA_flat = iA_grid.ravel()
        self._iR_flat = iR_grid.ravel()
        freqs = np.vstack([lattice.points, np.zeros(self.k)])  # EMPTY row = zeros
        self._A_flat = freqs[self._iA_flat]
        self._R_flat = freqs[self._iR_flat]
        self._Ae_flat = self._iA_flat == lattice.empty_index
        self._Re_flat = self._iR_flat == lattice.empty_index
        self._maps_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._probs_cache: dict[tuple[int, int], np.ndarray] = {}
        self._probs_keepalive: list[ConsumerPolicy] = []

    def initial_mass(self, first_click) -> np.ndarray:
        mass = np.zeros((self.k, self.size, self.size))
        e = self.lattice.empty_index
        mass[:, e, e] = np.asarray(first_click, dtype=float)
        return mass

    def maps(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """(alpha, rho) at step t.

        alpha[a, iA] is the snapped index of the view history after the
        current click joins it; rho[iR, j] the snapped index of the slot
        history after slate j is shown.
        """
        if t in self._maps_cache:
            return self._maps_cache[t]
        lat = self.lattice
        k, s = self.k, self.size
        n_views = t - 1
        n_slots = SLATE_SIZE * (t - 1)
        pts = lat.points
        alpha = np.empty((k, s), dtype=np.int64)
        eye = np.eye(k)
        for a in range(k):
            updated = (n_views * pts + eye[a]) / (n_views + 1)
            alpha[a, : lat.n_points] = lat.snap_index_many(updated)
            alpha[a, lat.empty_index] = lat.snap_index(eye[a])
        rho = np.empty((s, self.n_act), dtype=np.int64)
        for j in range(self.n_act):
            c = self.action_counts[j]
            updated = (n_slots * pts + c) / (n_slots + SLATE_SIZE)
            rho[: lat.n_points, j] = lat.snap_index_many(updated)
            rho[lat.empty_index, j] = lat.snap_index(c / SLATE_SIZE)
        self._maps_cache[t] = (alpha, rho)
        return alpha, rho

    def grid_probs(self, policy: ConsumerPolicy, t: int) -> np.ndarray:
        """Consumer action probabilities on the full state grid at step t,
        shaped (K, size, size, 2K+1)."""
        key = (id(policy), t)
        if key in self._probs_cache:
            return self._probs_cache[key]
        n = self._a_flat.shape[0]
        probs = policy.predict_batch(
            np.full(n, float(t)),
            self._a_flat,
            self._A_flat,
            self._R_flat,
            self._Ae_flat,
            self._Re_flat,
        )
        out = probs.reshape(self.k, self.size, self.size, n_actions(self.k))
        self._probs_cache[key] = out
        self._probs_keepalive.append(policy)
        return out


def _plan_probs(P: np.ndarray, k: int, modifiers: ScenarioModifiers) -> np.ndarray:
    if not modifiers.zero_churn:
        return P
    out = P.copy()
    out[..., 2 * k] = 0.0
    totals = out.sum(axis=-1, keepdims=True)
    # a state whose only action was exit falls back to uniform remaining mass
    degenerate = totals[..., 0] <= 0.0
    out = np.where(degenerate[..., None], 1.0 / (2 * k), out)
    out[..., 2 * k] = np.where(degenerate, 0.0, out[..., 2 * k])
    totals = out.sum(axis=-1, keepdims=True)
    return out / totals


@dataclass
class ValueTable:
    """Backward-induction output: values and argmax slates per state.

    ``values[t-1]`` covers step t; ``actions[t-1]`` stores indices into
    ``action_list`` for t = 1..T-1 (no slate is chosen at the horizon).
    """

    lattice: SimplexLattice
    horizon: int
    values: np.ndarray  # (T, K, size, size)
    actions: np.ndarray  # (T-1, K, size, size) int
    action_list: np.ndarray
    kind: str = "first_best"

    def value_at(self, state: RecState) -> float:
        iA = self.lattice.snap_index(state.A)
        iR = self.lattice.snap_index(state.R)
        return float(self.values[state.t - 1, state.a, iA, iR])

    def action_at(self, state: RecState) -> tuple[int, ...]:
        iA = self.lattice.snap_index(state.A)
        iR = self.lattice.snap_index(state.R)
        j = int(self.actions[state.t - 1, state.a, iA, iR])
        return tuple(int(c) for c in self.action_list[j])

    def initial_value(self, first_click) -> float:
        e = self.lattice.empty_index
        return float(
            np.asarray(first_click, dtype=float) @ self.values[0, :, e, e]
        )

    def policy(self) -> "TableRecPolicy":
        return TableRecPolicy(self.lattice, self.horizon, self.actions,
                              self.action_list, kind=self.kind)


class RecPolicy:
    """Base for recommendation rules mapping states to slates."""

    kind = "base"

    def slates(self, t, a, A, R, A_empty, R_empty, u) -> np.ndarray:
        """Slates for exact (unsnapped) states; ``u`` supplies per-session
        uniforms, shape (n, 3), used only by stochastic policies."""
        raise NotImplementedError


class TableRecPolicy(RecPolicy):
    """Deterministic slate per lattice state, from a solved table."""

    def __init__(self, lattice, horizon, actions, action_list, kind="first_best"):
        self.lattice = lattice
        self.horizon = horizon
        self.actions = actions
        self.action_list = action_list
        self.kind = kind
        self.k = lattice.k

    def action_index(self, t: int, a, iA, iR):
        return self.actions[t - 1, a, iA, iR]

    def slates(self, t, a, A, R, A_empty, R_empty, u):
        lat = self.lattice
        iA = np.where(
            np.asarray(A_empty, dtype=bool),
            lat.empty_index,
            lat.snap_index_many(np.asarray(A, dtype=float)),
        )
        iR = np.where(
            np.asarray(R_empty, dtype=bool),
            lat.empty_index,
            lat.snap_index_many(np.asarray(R, dtype=float)),
        )
        j = self.actions[t - 1, np.asarray(a), iA, iR]
        return self.action_list[j]


class MatrixRecPolicy(RecPolicy):
    """Three i.i.d. slot draws from a row-stochastic matrix.

    ``matrices`` is (K, K) for a static rule or (T-1, K, K) for a
    per-period rule; row ``a`` gives the slot distribution after a click
    on cluster ``a``.
    """

    def __init__(self, matrices: np.ndarray, horizon: int, kind: str | None = None):
        matrices = np.asarray(matrices, dtype=float)
        if matrices.ndim == 2:
            self.static = True
            self._validate(matrices)
        elif matrices.ndim == 3:
            self.static = False
            for m in matrices:
                self._validate(m)
            if matrices.shape[0] != horizon - 1:
                raise ValueError("per-period rule needs horizon-1 matrices")
        else:
            raise ValueError("matrices must be 2- or 3-dimensional")
        self.matrices = matrices
        self.horizon = horizon
        self.k = matrices.shape[-1]
        self.kind = kind or ("static_matrix" if self.static else "dynamic_matrix")

    @staticmethod
    def _validate(m: np.ndarray) -> None:
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("matrix must be square")
        if np.any(m < -1e-12):
            raise ValueError("matrix entries must be nonnegative")
        if np.abs(m.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValueError("matrix rows must sum to 1")

    def matrix_at(self, t: int) -> np.ndarray:
        return self.matrices if self.static else self.matrices[t - 1]

    def action_weights(self, t: int, action_counts: np.ndarray) -> np.ndarray:
        """(K, n_act) probability of each canonical slate per row: the
        multinomial mass of drawing that multiset in 3 slot draws."""
        m = np.clip(self.matrix_at(t), 0.0, None)
        m = m / m.sum(axis=1, keepdims=True)
        n_act = action_counts.shape[0]
        coef = np.array(
            [
                factorial(SLATE_SIZE) / np.prod([factorial(int(c)) for c in counts])
                for counts in action_counts
            ]
        )
        out = np.empty((self.k, n_act))
        for j in range(n_act):
            out[:, j] = coef[j] * np.prod(m ** action_counts[j][None, :], axis=1)
        return out

    def slates(self, t, a, A, R, A_empty, R_empty, u):
        m = self.matrix_at(t)
        cdf = np.cumsum(m, axis=1)
        cdf /= cdf[:, -1:]
        rows = cdf[np.asarray(a)]
        u = np.asarray(u)
        slates = np.empty((rows.shape[0], SLATE_SIZE), dtype=np.int64)
        for s in range(SLATE_SIZE):
            slates[:, s] = (u[:, s][:, None] > rows).sum(axis=1)
        return np.sort(np.minimum(slates, self.k - 1), axis=1)


def _slice_q(
    space: StateSpace,
    t: int,
    j: int,
    P_next: np.ndarray,
    V_next: np.ndarray | None,
    margins: np.ndarray,
) -> np.ndarray:
    """Action value Q(state, slate j) at step t over the whole grid."""
    k = space.k
    alpha, rho = space.maps(t)
    iR2 = rho[:, j]
    Pg = P_next[:, :, iR2, :]
    q = Pg[..., k : 2 * k] @ margins
    if V_next is not None:
        Vg = V_next[:, alpha, :][:, :, :, iR2]  # (k', a, iA, iR)
        q = q + np.einsum("asrk,kasr->asr", Pg[..., :k], Vg)
    return q


def _terminal_values(space: StateSpace, policy, margins, modifiers) -> np.ndarray:
    P = _plan_probs(
        space.grid_probs(policy, space.horizon), space.k, modifiers
    )
    return P[..., space.k : 2 * space.k] @ margins


def bellman_solve(
    policy: ConsumerPolicy,
    margins,
    lattice: SimplexLattice,
    horizon: int,
    modifiers: ScenarioModifiers | None = None,
    space: StateSpace | None = None,
) -> ValueTable:
    """Backward induction over all lattice states.

    Each step maximizes, over the C(K+2, 3) candidate slates, the
    expected margin of the consumer's next decision plus the value of
    the successor state; ties go to the lexicographically smallest
    slate. Modifiers distort planning only.
    """
    modifiers = modifiers or ScenarioModifiers()
    space = space or StateSpace(lattice, horizon)
    margins = np.asarray(margins, dtype=float)
    if margins.shape[0] != space.k:
        raise ValueError("margins must have one entry per cluster")
    plan_margins = (
        np.full(space.k, 1.0) if modifiers.uniform_margins else margins
    )
    T, k, s = space.horizon, space.k, space.size
    values = np.zeros((T, k, s, s))
    actions = np.zeros((max(T - 1, 0), k, s, s), dtype=np.int64)
    values[T - 1] = _terminal_values(space, policy, plan_margins, modifiers)
    for t in range(T - 1, 0, -1):
        P_next = _plan_probs(space.grid_probs(policy, t + 1), k, modifiers)
        V_next = None if modifiers.one_step else values[t]
        best_v = None
        best_j = None
        for j in range(space.n_act):
            q = _slice_q(space, t, j, P_next, V_next, plan_margins)
            if best_v is None:
                best_v, best_j = q, np.zeros_like(q, dtype=np.int64)
            else:
                better = q > best_v
                best_v = np.where(better, q, best_v)
                best_j = np.where(better, j, best_j)
        values[t - 1] = best_v
        actions[t - 1] = best_j
    kind = "first_best"
    if modifiers.one_step:
        kind = "one_step"
    elif modifiers.zero_churn:
        kind = "zero_churn_plan"
    elif modifiers.uniform_margins:
        kind = "uniform_margin_plan"
    return ValueTable(lattice, T, values, actions, space.action_list, kind=kind)


def _masked_backward(
    policy, margins, space: StateSpace, mask: str, weights: list[np.ndarray]
) -> ValueTable:
    """Backward induction restricted to slates measurable in the visible
    features; hidden features are averaged under the supplied weights."""
    T, k, s = space.horizon, space.k, space.size
    margins = np.asarray(margins, dtype=float)
    values = np.zeros((T, k, s, s))
    actions = np.zeros((max(T - 1, 0), k, s, s), dtype=np.int64)
    values[T - 1] = _terminal_values(space, policy, margins, ScenarioModifiers())
    for t in range(T - 1, 0, -1):
        P_next = space.grid_probs(policy, t + 1)
        w = weights[t - 1]
        if mask == "A":
            denom = w.sum(axis=(0, 2), keepdims=True)
            w_norm = np.where(denom > 0, w / np.where(denom > 0, denom, 1.0), 1.0 / (k * s))
        elif mask == "AR":
            denom = w.sum(axis=0, keepdims=True)
            w_norm = np.where(denom > 0, w / np.where(denom > 0, denom, 1.0), 1.0 / k)
        else:
            raise ValueError(f"unknown mask {mask!r}")
        best_score = None
        best_j = None
        for j in range(space.n_act):
            q = _slice_q(space, t, j, P_next, values[t], margins)
            score = (
                (w_norm * q).sum(axis=(0, 2)) if mask == "A" else (w_norm * q).sum(axis=0)
            )
            if best_score is None:
                best_score = score
                best_j = np.zeros_like(score, dtype=np.int64)
            else:
                better = score > best_score
                best_score = np.where(better, score, best_score)
                best_j = np.where(better, j, best_j)
        if mask == "A":
            act_full = np.broadcast_to(best_j[None, :, None], (k, s, s)).copy()
        else:
            act_full = np.broadcast_to(best_j[None, :, :], (k, s, s)).copy()
        for j in np.unique(act_full):
            sel = act_full == j
            q = _slice_q(space, t, int(j), P_next, values[t], margins)
            values[t - 1][sel] = q[sel]
        actions[t - 1] = act_full
    kind = "prev_actions_only" if mask == "A" else "prev_actions_and_recs"
    return ValueTable(space.lattice, T, values, actions, space.action_list, kind=kind)


def _forward(
    rec_policy,
    policy: ConsumerPolicy,
    margins,
    space: StateSpace,
    first_click,
    collect_mass: bool = False,
):
    """Push state probability mass forward; returns expected profit and,
    optionally, the per-step state masses."""
    margins = np.asarray(margins, dtype=float)
    T, k = space.horizon, space.k
    if isinstance(rec_policy, TableRecPolicy):
        if rec_policy.lattice.descriptor() != space.lattice.descriptor():
            raise ValueError("rule was solved on a different lattice")
        if rec_policy.actions.shape[0] < T - 1:
            raise ValueError("rule covers a shorter horizon than requested")
    mass = space.initial_mass(first_click)
    masses = [mass.copy()] if collect_mass else None
    profit = 0.0
    for t in range(1, T):
        P_next = space.grid_probs(policy, t + 1)
        alpha, rho = space.maps(t)
        next_mass = np.zeros_like(mass)
        if isinstance(rec_policy, MatrixRecPolicy):
            action_w = rec_policy.action_weights(t, space.action_counts)
        else:
            action_w = None
        act = rec_policy.actions[t - 1] if isinstance(rec_policy, TableRecPolicy) else None
        for j in range(space.n_act):
            if action_w is not None:
                mass_j = mass * action_w[:, j][:, None, None]
            else:
                mass_j = np.where(act == j, mass, 0.0)
            total = mass_j.sum()
            if total <= 1e-300:
                continue
            iR2 = rho[:, j]
            Pg = P_next[:, :, iR2, :]
            profit += float((mass_j * (Pg[..., k : 2 * k] @ margins)).sum())
            push = mass_j[..., None] * Pg[..., :k]  # (a, iA, iR, k')
            tgt_iA = np.broadcast_to(alpha[:, :, None], mass.shape)
            tgt_iR = np.broadcast_to(iR2[None, None, :], mass.shape)
            for k2 in range(k):
                np.add.at(next_mass[k2], (tgt_iA, tgt_iR), push[..., k2])
        mass = next_mass
        if collect_mass:
            masses.append(mass.copy())
    P_T = space.grid_probs(policy, T)
    profit += float((mass * (P_T[..., k : 2 * k] @ margins)).sum())
    return profit, masses


def evaluate_policy(
    rec_policy,
    policy: ConsumerPolicy,
    margins,
    lattice: SimplexLattice,
    horizon: int,
    first_click,
    exact: bool = True,
    n_sims: int = 100_000,
    seed: int = 0,
    space: StateSpace | None = None,
) -> tuple[float, float]:
    """Expected profit of a recommendation rule under the true model.

    Exact mode pushes probability mass over the lattice process;
    simulation mode averages realized margins over sampled sessions of
    the same process. The two agree within Monte-Carlo error.
    """
    space = space or StateSpace(lattice, horizon)
    if exact:
        profit, _ = _forward(rec_policy, policy, margins, space, first_click)
        return profit, 0.0
    return simulate_profit(
        rec_policy, policy, margins, space, first_click, n_sims, seed
    )


def simulate_profit(
    rec_policy,
    policy: ConsumerPolicy,
    margins,
    space: StateSpace,
    first_click,
    n_sims: int,
    seed: int,
) -> tuple[float, float]:
    """Monte-Carlo profit of the lattice process (mean, standard error)."""
    margins = np.asarray(margins, dtype=float)
    k, T = space.k, space.horizon
    lat = space.lattice
    rng = substream(seed, "profit-sim")
    first = np.asarray(first_click, dtype=float)
    first = first / first.sum()
    a = rng.choice(k, size=n_sims, p=first)
    iA = np.full(n_sims, lat.empty_index)
    iR = np.full(n_sims, lat.empty_index)
    alive = np.ones(n_sims, dtype=bool)
    payoff = np.zeros(n_sims)
    for t in range(1, T):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        alpha, rho = space.maps(t)
        if isinstance(rec_policy, TableRecPolicy):
            j = rec_policy.actions[t - 1, a[idx], iA[idx], iR[idx]]
        else:
            action_w = rec_policy.action_weights(t, space.action_counts)
            cdf = np.cumsum(action_w, axis=1)
            u = rng.random(idx.size)
            j = (u[:, None] > cdf[a[idx]]).sum(axis=1)
            j = np.minimum(j, space.n_act - 1)
        iR_new = rho[iR[idx], j]
        P_next = space.grid_probs(policy, t + 1)
        probs = P_next[a[idx], iA[idx], iR_new]
        cdfp = np.cumsum(probs, axis=1)
        u = rng.random(idx.size)
        y = (u[:, None] > cdfp).sum(axis=1)
        y = np.minimum(y, n_actions(k) - 1)
        searched = y < k
        converted = (y >= k) & (y < 2 * k)
        payoff[idx[converted]] = margins[y[converted] - k]
        alive[idx[~searched]] = False
        moved = idx[searched]
        iA[moved] = alpha[a[moved], iA[moved]]
        iR[moved] = iR_new[searched]
        a[moved] = y[searched]
    idx = np.flatnonzero(alive)
    if idx.size:
        P_T = space.grid_probs(policy, T)
        probs = P_T[a[idx], iA[idx], iR[idx]]
        cdfp = np.cumsum(probs, axis=1)
        u = rng.random(idx.size)
        y = (u[:, None] > cdfp).sum(axis=1)
        y = np.minimum(y, n_actions(k) - 1)
        converted = (y >= k) & (y < 2 * k)
        payoff[idx[converted]] = margins[y[converted] - k]
    mean = float(payoff.mean())
    se = float(payoff.std(ddof=1) / np.sqrt(n_sims))
    return mean, se


def solve_masked(
    policy: ConsumerPolicy,
    margins,
    lattice: SimplexLattice,
    horizon: int,
    mask: str,
    first_click,
    iterations: int = 2,
    space: StateSpace | None = None,
) -> ValueTable:
    """Plan on a restricted view of the state.

    ``mask`` "A" sees only (t, view history); "AR" sees (t, view history,
    slot history). Hidden features are averaged out under their
    reachable distribution; the weights start uniform and are refined by
    forward passes under the candidate rule (two fixed-point rounds).
    """
    space = space or StateSpace(lattice, horizon)
    k, s, T = space.k, space.size, space.horizon
    weights = [np.ones((k, s, s)) for _ in range(max(T - 1, 1))]
    table = _masked_backward(policy, margins, space, mask, weights)
    for _ in range(iterations):
        _, masses = _forward(
            table.policy(), policy, margins, space, first_click, collect_mass=True
        )
        weights = masses[: max(T - 1, 1)]
        table = _masked_backward(policy, margins, space, mask, weights)
    return table


def summarize_policy(table: ValueTable) -> dict:
    """Structure of a solved rule, averaged uniformly over states.

    Returns the K x K slate-composition matrix conditional on the
    current cluster, the per-step distribution of recommended clusters,
    and the per-step shares of slates drawing on 1, 2, or 3 distinct
    clusters.
    """
    k = table.lattice.k
    T = table.horizon
    action_list = table.action_list
    comp = np.zeros((action_list.shape[0], k))
    for j, slate in enumerate(action_list):
        for c in slate:
            comp[j, int(c)] += 1.0 / SLATE_SIZE
    distinct = np.array([len(set(map(int, slate))) for slate in action_list])
    matrix = np.zeros((k, k))
    per_t = np.zeros((max(T - 1, 0), k))
    shares = np.zeros((max(T - 1, 0), 3))
    for t in range(1, T):
        acts = table.actions[t - 1]
        flat = acts.reshape(k, -1)
        for a in range(k):
            matrix[a] += comp[flat[a]].mean(axis=0)
        per_t[t - 1] = comp[acts.ravel()].mean(axis=0)
        for d in (1, 2, 3):
            shares[t - 1, d - 1] = (distinct[acts.ravel()] == d).mean()
    if T > 1:
        matrix /= T - 1
    else:
        matrix[:] = np.nan
    return {"matrix": matrix, "per_t": per_t, "distinct_shares": shares}


_VT_MAGIC = b"SRVT1\n"


def save_value_table(table: ValueTable, path) -> None:
    """Versioned binary dump with the lattice descriptor embedded."""
    header = {
        "version": 1,
        "kind": table.kind,
        "horizon": table.horizon,
        "lattice": table.lattice.descriptor(),
        "values_shape": list(table.values.shape),
        "actions_shape": list(table.actions.shape),
        "n_actions": int(table.action_list.shape[0]),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_VT_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        fh.write(np.ascontiguousarray(table.values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(table.actions, dtype="<i8").tobytes())


def load_value_table(path) -> ValueTable:
    with open(path, "rb") as fh:
        magic = fh.read(len(_VT_MAGIC))
        if magic != _VT_MAGIC:
            raise ValueError("not a value-table file")
        header_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(header_len))
        lat = SimplexLattice(header["lattice"]["k"], header["lattice"]["g"])
        v_shape = tuple(header["values_shape"])
        a_shape = tuple(header["actions_shape"])
        values = np.frombuffer(
            fh.read(8 * int(np.prod(v_shape))), dtype="<f8"
        ).reshape(v_shape)
        actions = np.frombuffer(
            fh.read(8 * int(np.prod(a_shape))), dtype="<i8"
        ).reshape(a_shape)
    return ValueTable(
        lat,
        header["horizon"],
        values.copy(),
        actions.copy(),
        enumerate_actions(lat.k),
        kind=header["kind"],
    )
