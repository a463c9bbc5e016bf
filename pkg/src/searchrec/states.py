"""Browse-history state encoding and simplex-lattice discretization.

The planner's state at step t is ``{t, a, A, R}``: the order of the
interaction, the cluster just clicked, the relative frequencies of
clusters viewed before the current one, and the relative frequencies of
all recommendation slots shown so far. Before any history exists the
frequency components take a designated EMPTY value (``None``), which is
deliberately distinct from the uniform vector.

Frequencies are stored as integer counts and renormalized on access:
every update has a known integer denominator (t-1 views, 3(t-1) slots),
so exact count arithmetic eliminates float drift in long sessions.

Cluster indices are 0-based throughout the library; file formats use
1-based labels and the loaders convert.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np

__all__ = [
    "EMPTY",
    "FreqVector",
    "RecState",
    "SimplexLattice",
    "update_freq",
    "transition",
    "snap",
    "interpolate_value",
]

# Sentinel for "no history yet". Kept as None so states print naturally.
EMPTY = None

FreqVector = np.ndarray | None


def update_freq(
    prev: FreqVector,
    n_prev: int,
    new_items,
    k: int | None = None,
) -> np.ndarray:
    """Fold ``new_items`` (an iterable of cluster indices) into ``prev``.

    ``prev`` is a relative-frequency vector backed by ``n_prev`` items, or
    EMPTY with ``n_prev == 0``. The output is
    ``(n_prev * prev + item_counts) / (n_prev + len(items))``: the
    relative frequency of the combined multiset whenever ``prev`` itself
    came from counts, and the same affine blend otherwise (as needed for
    lattice-valued histories, whose backing counts need not be integers).
    """
    items = list(new_items)
    if prev is None:
        if n_prev != 0:
            raise ValueError("EMPTY history requires n_prev == 0")
        if k is None:
            raise ValueError("k is required when prev is EMPTY")
        weighted = np.zeros(k, dtype=float)
    else:
        prev = np.asarray(prev, dtype=float)
        if n_prev <= 0:
            raise ValueError("non-EMPTY history requires n_prev > 0")
        weighted = prev * n_prev
    for item in items:
        weighted[item] += 1.0
    total = n_prev + len(items)
    if total == 0:
        raise ValueError("cannot update an EMPTY history with no items")
    return weighted / total


@dataclass(frozen=True)
class RecState:
    """Planner state: step ``t``, last click ``a``, view and slot counts.

    ``views`` holds the clusters clicked before ``a`` (t-1 of them) and
    ``recs`` the recommendation slots shown so far (3(t-1) of them); both
    are integer count tuples, or EMPTY (None) at t=1.
    """

    t: int
    a: int
    views: tuple[int, ...] | None = EMPTY
    recs: tuple[int, ...] | None = EMPTY

    def __post_init__(self) -> None:
        if self.t < 1:
            raise ValueError("t must be >= 1")
        if self.t == 1:
            if self.views is not None or self.recs is not None:
                raise ValueError("t=1 states carry no history")

    @property
    def A(self) -> FreqVector:
        if self.views is None:
            return EMPTY
        counts = np.asarray(self.views, dtype=np.int64)
        return counts / counts.sum()

    @property
    def R(self) -> FreqVector:
        if self.recs is None:
            return EMPTY
        counts = np.asarray(self.recs, dtype=np.int64)
        return counts / counts.sum()

    @property
    def k(self) -> int | None:
        if self.views is not None:
            return len(self.views)
        if self.recs is not None:
            return len(self.recs)
        return None


def transition(state: RecState, searched: int, rec, k: int | None = None) -> RecState:
    """Advance the state after showing slate ``rec`` and a click on ``searched``.

    The slate chosen at ``state`` is folded into the slot history, the
    previous click joins the view history, and the new click becomes
    ``a``. Convert and exit are terminal and have no successor state.
    """
    rec = tuple(int(c) for c in rec)
    kk = state.k if state.k is not None else k
    if kk is None:
        raise ValueError("cluster count k is required for t=1 transitions")
    if state.views is None:
        views = [0] * kk
    else:
        views = list(state.views)
    views[state.a] += 1
    if state.recs is None:
        recs = [0] * kk
    else:
        recs = list(state.recs)
    for c in rec:
        recs[c] += 1
    return RecState(t=state.t + 1, a=int(searched), views=tuple(views), recs=tuple(recs))


def _compositions(total: int, parts: int):
    """All nonnegative integer vectors of length ``parts`` summing to ``total``,
    in lexicographically ascending order."""
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for tail in _compositions(total - head, parts - 1):
            yield (head,) + tail


class SimplexLattice:
    """Regular grid on the K-simplex with denominator G, plus EMPTY.

    Points are all vectors c/G with c a nonnegative integer vector summing
    to G; there are C(G+K-1, K-1) of them, stored lexicographically
    ascending. EMPTY is an extra index (``empty_index``) so value tables
    can be indexed densely over lattice-or-EMPTY history components.
    """

    def __init__(self, k: int, g: int):
        if k < 1 or g < 1:
            raise ValueError("k and g must be >= 1")
        self.k = int(k)
        self.g = int(g)
        counts = np.array(list(_compositions(self.g, self.k)), dtype=np.int64)
        self.counts = counts
        self.points = counts / float(g)
        self.n_points = counts.shape[0]
        assert self.n_points == comb(g + k - 1, k - 1)
        self.empty_index = self.n_points
        # total index count, EMPTY included
        self.size = self.n_points + 1
        self._index_of = {tuple(row): i for i, row in enumerate(counts.tolist())}

    def __repr__(self) -> str:  # pragma: no cover
        return f"SimplexLattice(k={self.k}, g={self.g}, points={self.n_points})"

    def descriptor(self) -> dict:
        return {"k": self.k, "g": self.g, "points": self.n_points}

    def index_of_counts(self, counts) -> int:
        return self._index_of[tuple(int(c) for c in counts)]

    def freq_of_index(self, index: int) -> FreqVector:
        if index == self.empty_index:
            return EMPTY
        return self.points[index]

    def snap_index(self, v: FreqVector) -> int:
        if v is None:
            return self.empty_index
        return int(self.snap_index_many(np.asarray(v, dtype=float)[None, :])[0])

    def snap_index_many(self, v: np.ndarray) -> np.ndarray:
        """Nearest lattice point (L2) for each row of ``v``.

        Points are stored lexicographically ascending and argmin returns
        the first minimum, so ties resolve to the lexicographically
        smallest point.
        """
        v = np.asarray(v, dtype=float)
        d = ((v[:, None, :] - self.points[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(d, axis=1)

    def snap(self, v: FreqVector) -> FreqVector:
        """Nearest lattice point; EMPTY maps to EMPTY."""
        if v is None:
            return EMPTY
        return self.points[self.snap_index(v)]

    def interpolate(self, v: FreqVector, table: np.ndarray) -> float:
        """Value lookup by nearest lattice point (piecewise constant).

        ``table`` must cover every index, EMPTY included (length ``size``).
        Exact whenever ``v`` is itself a lattice point; otherwise the
        error of the implied approximation is bounded by the 1/G mesh.
        """
        table = np.asarray(table, dtype=float)
        if table.shape[0] != self.size:
            raise ValueError(f"table must have length {self.size}")
        return float(table[self.snap_index(v)])

    def update_index(self, index: int, n_prev: int, new_items) -> int:
        """Snapped index of update_freq applied to the point at ``index``."""
        freq = self.freq_of_index(index)
        out = update_freq(freq, n_prev, new_items, k=self.k)
        return self.snap_index(out)


def snap(v: FreqVector, lattice: SimplexLattice) -> FreqVector:
    """Nearest lattice point in L2; ties go to the lexicographically
    smallest point, EMPTY maps to EMPTY."""
    return lattice.snap(v)


def interpolate_value(v: FreqVector, value_table: np.ndarray, lattice: SimplexLattice) -> float:
    """Value lookup at the snapped point (piecewise-constant scheme)."""
    return lattice.interpolate(v, value_table)


def enumerate_multisets(k: int, size: int) -> np.ndarray:
    """All multisets of ``size`` cluster indices, canonically sorted.

    Rows are nondecreasing index tuples in lexicographic order; there are
    C(k+size-1, size) of them.
    """
    rows = list(itertools.combinations_with_replacement(range(k), size))
    return np.array(rows, dtype=np.int64)
