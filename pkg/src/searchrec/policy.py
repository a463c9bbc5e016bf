"""Consumer browse/convert/exit policy estimation and fit metrics.

A consumer policy maps the browsing state {t, a, A, R} to a probability
vector over 2K+1 actions: search one of the K clusters, convert to one
of the K clusters, or exit. Action columns are ordered
[search 0..K-1, convert 0..K-1, exit].

Estimators: ridge-penalized multinomial logit (fit here, Newton-polished
to a small gradient norm) and tree ensembles (bagging or gradient
boosting, scikit-learn under the hood). Fit is scored out of sample
with accuracy, log-loss, Hellinger distance, lift against a uniform
predictor, and Nagelkerke's pseudo-R2.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .rng import substream
from .states import EMPTY, RecState

__all__ = [
    "n_actions",
    "action_labels",
    "TrainingSet",
    "featurize",
    "featurize_arrays",
    "ConsumerPolicy",
    "FunctionPolicy",
    "FrequencyPolicy",
    "LogitPolicy",
    "TreeEnsemblePolicy",
    "TreeParams",
    "ConvergenceError",
    "fit_multinomial_logit",
    "fit_tree_ensemble",
    "FitReport",
    "evaluate",
    "select_model",
]

PROB_FLOOR = 1e-12


def n_actions(k: int) -> int:
    return 2 * k + 1


def action_labels(k: int) -> list[str]:
    return (
        [f"search:{c}" for c in range(k)]
        + [f"convert:{c}" for c in range(k)]
        + ["exit"]
    )


def exit_action(k: int) -> int:
    return 2 * k


@dataclass
class TrainingSet:
    """Decision observations as flat arrays.

    One row per observed consumer decision: the state components and the
    action taken. ``session_ids`` keeps the session of each row so
    holdout splits can be made at the session level.
    """

    k: int
    horizon: int
    t: np.ndarray
    a: np.ndarray
    A: np.ndarray
    R: np.ndarray
    A_empty: np.ndarray
    R_empty: np.ndarray
    y: np.ndarray
    session_ids: np.ndarray

    def __len__(self) -> int:
        return self.t.shape[0]

    def subset(self, mask: np.ndarray) -> "TrainingSet":
        return TrainingSet(
            self.k,
            self.horizon,
            self.t[mask],
            self.a[mask],
            self.A[mask],
            self.R[mask],
            self.A_empty[mask],
            self.R_empty[mask],
            self.y[mask],
            self.session_ids[mask],
        )

    def split_sessions(self, holdout: float, seed: int) -> tuple["TrainingSet", "TrainingSet"]:
        """Split at the session level; no session straddles the split."""
        if not 0 < holdout < 1:
            raise ValueError("holdout fraction must be in (0, 1)")
        rng = substream(seed, "holdout-split")
        sessions = np.unique(self.session_ids)
        perm = rng.permutation(sessions.size)
        n_hold = int(round(holdout * sessions.size))
        held = set(sessions[perm[:n_hold]].tolist())
        mask = np.array([s in held for s in self.session_ids])
        train, hold = self.subset(~mask), self.subset(mask)
        assert not set(train.session_ids) & set(hold.session_ids)
        return train, hold


def feature_dim(k: int) -> int:
    return 1 + k + (k + 1) + (k + 1)


def featurize_arrays(
    t: np.ndarray,
    a: np.ndarray,
    A: np.ndarray,
    R: np.ndarray,
    A_empty: np.ndarray,
    R_empty: np.ndarray,
    k: int,
    horizon: int,
) -> np.ndarray:
    """Stack state components into the model feature matrix.

    Layout: [t/T, one-hot a, A frequencies, A-EMPTY flag, R frequencies,
    R-EMPTY flag]. EMPTY histories contribute zero frequencies plus the
    flag, which is distinct from a uniform history. ``a = -1`` encodes
    "no current vehicle" (the pre-first-click query) as an all-zero
    one-hot block.
    """
    n = t.shape[0]
    X = np.zeros((n, feature_dim(k)))
    X[:, 0] = t / float(horizon)
    a = np.asarray(a)
    has_a = a >= 0
    X[np.arange(n)[has_a], 1 + a[has_a]] = 1.0
    X[:, 1 + k : 1 + 2 * k] = np.where(A_empty[:, None], 0.0, A)
    X[:, 1 + 2 * k] = A_empty
    X[:, 2 + 2 * k : 2 + 3 * k] = np.where(R_empty[:, None], 0.0, R)
    X[:, 2 + 3 * k] = R_empty
    return X


def featurize(state: RecState, k: int, horizon: int) -> np.ndarray:
    A = state.A
    R = state.R
    return featurize_arrays(
        np.array([state.t], dtype=float),
        np.array([state.a]),
        np.zeros((1, k)) if A is EMPTY else A[None, :],
        np.zeros((1, k)) if R is EMPTY else R[None, :],
        np.array([A is EMPTY], dtype=float),
        np.array([R is EMPTY], dtype=float),
        k,
        horizon,
    )[0]


class ConsumerPolicy:
    """Base class: a conditional action distribution over 2K+1 actions."""

    kind = "base"

    def __init__(self, k: int, horizon: int):
        self.k = int(k)
        self.horizon = int(horizon)

    def predict_batch(
        self,
        t: np.ndarray,
        a: np.ndarray,
        A: np.ndarray,
        R: np.ndarray,
        A_empty: np.ndarray,
        R_empty: np.ndarray,
    ) -> np.ndarray:
        raise NotImplementedError

    def predict_state(self, state: RecState) -> np.ndarray:
        A = state.A
        R = state.R
        k = self.k
        return self.predict_batch(
            np.array([state.t], dtype=float),
            np.array([state.a]),
            np.zeros((1, k)) if A is EMPTY else A[None, :],
            np.zeros((1, k)) if R is EMPTY else R[None, :],
            np.array([A is EMPTY], dtype=bool),
            np.array([R is EMPTY], dtype=bool),
        )[0]

    def predict_training(self, data: TrainingSet) -> np.ndarray:
        return self.predict_batch(
            data.t.astype(float), data.a, data.A, data.R,
            data.A_empty.astype(bool), data.R_empty.astype(bool),
        )

    def predict_initial(self) -> np.ndarray:
        """Action distribution for the very first decision (no state yet).

        Queries the policy at t=1 with no current vehicle (a = -1) and
        EMPTY histories. Used by the synthetic session generator when no
        explicit first-click distribution is supplied.
        """
        k = self.k
        return self.predict_batch(
            np.array([1.0]),
            np.array([-1]),
            np.zeros((1, k)),
            np.zeros((1, k)),
            np.array([True]),
            np.array([True]),
        )[0]

    def params_blob(self) -> bytes:
        raise NotImplementedError

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.kind.encode())
        digest.update(np.int64(self.k).tobytes())
        digest.update(np.int64(self.horizon).tobytes())
        digest.update(self.params_blob())
        return digest.hexdigest()


class FunctionPolicy(ConsumerPolicy):
    """Wraps an arbitrary row-wise probability function (tests, oracles)."""

    kind = "function"

    def __init__(self, k: int, horizon: int, fn, name: str = "fn"):
        super().__init__(k, horizon)
        self.fn = fn
        self.name = name

    def predict_batch(self, t, a, A, R, A_empty, R_empty):
        out = self.fn(t, a, A, R, A_empty, R_empty)
        return np.asarray(out, dtype=float)

    def params_blob(self) -> bytes:
        return self.name.encode()


class FrequencyPolicy(ConsumerPolicy):
    """Intercept-only model: the empirical action frequencies."""

    kind = "frequency"

    def __init__(self, k: int, horizon: int, probs: np.ndarray):
        super().__init__(k, horizon)
        self.probs = np.asarray(probs, dtype=float)

    @classmethod
    def fit(cls, data: TrainingSet) -> "FrequencyPolicy":
        counts = np.bincount(data.y, minlength=n_actions(data.k)).astype(float)
        return cls(data.k, data.horizon, counts / counts.sum())

    def predict_batch(self, t, a, A, R, A_empty, R_empty):
        return np.tile(self.probs, (t.shape[0], 1))

    def params_blob(self) -> bytes:
        return self.probs.tobytes()


class ConvergenceError(RuntimeError):
    def __init__(self, grad_norm: float, max_iter: int):
        super().__init__(
            f"logit fit did not reach the gradient tolerance after {max_iter} "
            f"iterations (final max |grad| = {grad_norm:.3e})"
        )
        self.grad_norm = grad_norm


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class LogitPolicy(ConsumerPolicy):
    """Multinomial logit over state features, exit as the reference class.

    ``coef`` has shape (1 + feature_dim, n_present_classes - 1): an
    intercept row plus one row per feature, one column per non-reference
    class actually present in training. Absent classes predict zero.
    """

    kind = "logit"

    def __init__(
        self,
        k: int,
        horizon: int,
        coef: np.ndarray,
        classes: np.ndarray,
        reg: float = 0.0,
        grad_norm: float = float("nan"),
        n_iter: int = 0,
    ):
        super().__init__(k, horizon)
        self.coef = np.asarray(coef, dtype=float)
        self.classes = np.asarray(classes, dtype=int)  # present classes; last = reference
        self.reg = float(reg)
        self.grad_norm = float(grad_norm)
        self.n_iter = int(n_iter)

    def _predict_features(self, X: np.ndarray) -> np.ndarray:
        Xb = np.hstack([np.ones((X.shape[0], 1)), X])
        z = np.hstack([Xb @ self.coef, np.zeros((X.shape[0], 1))])
        p = _softmax(z)
        out = np.zeros((X.shape[0], n_actions(self.k)))
        out[:, self.classes] = p
        return out

    def predict_batch(self, t, a, A, R, A_empty, R_empty):
        X = featurize_arrays(
            np.asarray(t, dtype=float),
            np.asarray(a),
            np.asarray(A, dtype=float),
            np.asarray(R, dtype=float),
            np.asarray(A_empty, dtype=float),
            np.asarray(R_empty, dtype=float),
            self.k,
            self.horizon,
        )
        return self._predict_features(X)

    def params_blob(self) -> bytes:
        return self.coef.tobytes() + self.classes.tobytes()

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "k": self.k,
            "horizon": self.horizon,
            "coef": self.coef.tolist(),
            "classes": self.classes.tolist(),
            "reg": self.reg,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogitPolicy":
        return cls(
            d["k"], d["horizon"], np.asarray(d["coef"], dtype=float),
            np.asarray(d["classes"], dtype=int), d.get("reg", 0.0),
        )


def _logit_objective(flat, Xb, Y, reg, n_free):
    n = Xb.shape[0]
    B = flat.reshape(Xb.shape[1], n_free)
    z = np.hstack([Xb @ B, np.zeros((n, 1))])
    zmax = z.max(axis=1, keepdims=True)
    logsumexp = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    ll = (z[np.arange(n), Y] - logsumexp).sum()
    penalty = 0.5 * reg * (B[1:] ** 2).sum()
    obj = (-ll + penalty) / n
    P = _softmax(z)[:, :n_free]
    Yind = np.zeros_like(P)
    mask = Y < n_free
    Yind[np.arange(n)[mask], Y[mask]] = 1.0
    G = Xb.T @ (P - Yind)
    G[1:] += reg * B[1:]
    return obj, (G / n).ravel()


def fit_multinomial_logit(
    train: TrainingSet,
    reg: float = 1e-6,
    gtol: float = 1e-8,
    max_iter: int = 500,
) -> LogitPolicy:
    """Ridge-penalized multinomial logit via L-BFGS plus Newton polish.

    The objective is the mean negative log-likelihood plus a ridge
    penalty on the non-intercept coefficients (so the intercept-only
    optimum is exactly the class frequencies). Convergence means the
    max-abs gradient of the mean objective falls below ``gtol``; failing
    that, the fit raises with the final gradient norm.
    """
    k, horizon = train.k, train.horizon
    y = np.asarray(train.y, dtype=int)
    present = np.unique(y)
    if present.size < n_actions(k):
        missing = sorted(set(range(n_actions(k))) - set(present.tolist()))
        warnings.warn(
            f"action classes {missing} absent from training; collapsing to "
            f"{present.size} classes (absent classes predict 0)",
            stacklevel=2,
        )
    ex = exit_action(k)
    # reference class last; prefer exit as the reference when present
    ordered = np.array(
        [c for c in present if c != ex] + ([ex] if ex in present else []), dtype=int
    )
    if ordered.size == 1:
        coef = np.zeros((feature_dim(k) + 1, 0))
        return LogitPolicy(k, horizon, coef, ordered, reg, 0.0, 0)
    remap = {int(c): i for i, c in enumerate(ordered)}
    Y = np.array([remap[int(v)] for v in y])
    X = featurize_arrays(
        train.t.astype(float), train.a, train.A, train.R,
        train.A_empty.astype(float), train.R_empty.astype(float), k, horizon,
    )
    Xb = np.hstack([np.ones((X.shape[0], 1)), X])
    n_free = ordered.size - 1
    flat0 = np.zeros(Xb.shape[1] * n_free)
    warmup = min(max_iter, 100)
    res = minimize(
        _logit_objective,
        flat0,
        args=(Xb, Y, reg, n_free),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": warmup, "gtol": 1e-10, "ftol": 1e-14},
    )
    B = res.x.reshape(Xb.shape[1], n_free)
    n_iter = int(res.nit)

    # Newton polish (with step halving) to drive the gradient norm to gtol
    n = Xb.shape[0]
    d = Xb.shape[1]
    obj, g = _logit_objective(B.ravel(), Xb, Y, reg, n_free)
    while n_iter < max_iter + 50:
        gnorm = float(np.abs(g).max())
        if gnorm < gtol:
            break
        z = np.hstack([Xb @ B, np.zeros((n, 1))])
        P = _softmax(z)[:, :n_free]
        H = np.zeros((n_free * d, n_free * d))
        for c1 in range(n_free):
            for c2 in range(c1, n_free):
                w = P[:, c1] * ((c1 == c2) - P[:, c2])
                block = (Xb * w[:, None]).T @ Xb / n
                H[c1 * d : (c1 + 1) * d, c2 * d : (c2 + 1) * d] = block
                if c2 != c1:
                    H[c2 * d : (c2 + 1) * d, c1 * d : (c1 + 1) * d] = block
        ridge = np.zeros(d)
        ridge[1:] = reg / n
        H += np.diag(np.tile(ridge, n_free))
        g_mat = g.reshape(d, n_free)
        g_flat = np.concatenate([g_mat[:, c] for c in range(n_free)])
        try:
            step = np.linalg.solve(H + 1e-12 * np.eye(H.shape[0]), g_flat)
        except np.linalg.LinAlgError:
            step = g_flat
        step_mat = np.column_stack(
            [step[c * d : (c + 1) * d] for c in range(n_free)]
        )
        scale = 1.0
        for _ in range(20):
            trial = B - scale * step_mat
            t_obj, t_g = _logit_objective(trial.ravel(), Xb, Y, reg, n_free)
            if t_obj <= obj + 1e-15:
                B, obj, g = trial, t_obj, t_g
                break
            scale *= 0.5
        else:
            break
        n_iter += 1
    gnorm = float(np.abs(g).max())
    if gnorm >= gtol:
        raise ConvergenceError(gnorm, n_iter)
    return LogitPolicy(k, horizon, B, ordered, reg, gnorm, n_iter)


@dataclass
class TreeParams:
    n_trees: int = 200
    max_depth: int = 4
    min_leaf: int = 1
    mode: str = "bagging"  # or "boosting"
    learning_rate: float = 0.1


class TreeEnsemblePolicy(ConsumerPolicy):
    """Random forest or gradient boosting over the state features."""

    kind = "tree"

    def __init__(self, k: int, horizon: int, model, classes: np.ndarray, params: TreeParams):
        super().__init__(k, horizon)
        self.model = model
        self.classes = np.asarray(classes, dtype=int)
        self.params = params

    def predict_batch(self, t, a, A, R, A_empty, R_empty):
        X = featurize_arrays(
            np.asarray(t, dtype=float), np.asarray(a), np.asarray(A, dtype=float),
            np.asarray(R, dtype=float), np.asarray(A_empty, dtype=float),
            np.asarray(R_empty, dtype=float), self.k, self.horizon,
        )
        p = self.model.predict_proba(X)
        out = np.zeros((X.shape[0], n_actions(self.k)))
        out[:, self.classes] = p
        return out

    def params_blob(self) -> bytes:
        import pickle

        if not hasattr(self, "_blob"):
            self._blob = pickle.dumps(self.model, protocol=4)
        return self._blob


def fit_tree_ensemble(
    train: TrainingSet, params: TreeParams | None = None, seed: int = 0
) -> ConsumerPolicy:
    """Fit a tree ensemble; depth-0 degenerates to the class-frequency model."""
    params = params or TreeParams()
    if params.max_depth == 0:
        return FrequencyPolicy.fit(train)
    from sklearn.ensemble import GradientBoostingClassifier, RandomForestClassifier

    X = featurize_arrays(
        train.t.astype(float), train.a, train.A, train.R,
        train.A_empty.astype(float), train.R_empty.astype(float),
        train.k, train.horizon,
    )
    y = np.asarray(train.y, dtype=int)
    if np.unique(y).size == 1:
        probs = np.zeros(n_actions(train.k))
        probs[int(y[0])] = 1.0
        return FrequencyPolicy(train.k, train.horizon, probs)
    rs = int(substream(seed, "trees").integers(0, 2**31 - 1))
    if params.mode == "bagging":
        model = RandomForestClassifier(
            n_estimators=params.n_trees,
            max_depth=params.max_depth,
            min_samples_leaf=params.min_leaf,
            random_state=rs,
            n_jobs=1,
        )
    elif params.mode == "boosting":
        model = GradientBoostingClassifier(
            n_estimators=params.n_trees,
            learning_rate=params.learning_rate,
            max_depth=params.max_depth,
            min_samples_leaf=params.min_leaf,
            random_state=rs,
        )
    else:
        raise ValueError(f"unknown mode {params.mode!r}")
    model.fit(X, y)
    return TreeEnsemblePolicy(train.k, train.horizon, model, model.classes_, params)


@dataclass
class FitReport:
    accuracy: float
    log_loss: float
    hellinger: float
    lift: float
    nagelkerke_r2: float
    n_obs: int = 0
    n_clamped: int = 0
    method: str = ""
    k: int = 0

    def row(self) -> dict:
        return {
            "method": self.method,
            "k": self.k,
            "accuracy": self.accuracy,
            "log_loss": self.log_loss,
            "hellinger": self.hellinger,
            "lift": self.lift,
            "nagelkerke_r2": self.nagelkerke_r2,
            "n_obs": self.n_obs,
        }


def evaluate(
    policy: ConsumerPolicy,
    holdout: TrainingSet,
    baseline: ConsumerPolicy | None = None,
) -> FitReport:
    """Score predicted probabilities against held-out decisions.

    log_loss is the negative mean log-likelihood (smaller is better).
    Lift divides accuracy by a uniform predictor's accuracy, i.e.
    accuracy times the number of classes. Nagelkerke's pseudo-R2 uses
    the intercept-only model fitted to the same data unless an explicit
    baseline policy is given. Zero predicted probability on an observed
    class is clamped at 1e-12 and counted in ``n_clamped``.
    """
    probs = policy.predict_training(holdout)
    n = len(holdout)
    y = np.asarray(holdout.y, dtype=int)
    classes = n_actions(holdout.k)
    picked = probs[np.arange(n), y]
    n_clamped = int((picked < PROB_FLOOR).sum())
    picked = np.clip(picked, PROB_FLOOR, None)
    accuracy = float((probs.argmax(axis=1) == y).mean())
    log_loss = float(-np.log(picked).mean())
    hellinger = float(
        ((np.sqrt(np.where(np.eye(classes)[y] == 1, 1.0, 0.0)) - np.sqrt(probs)) ** 2)
        .sum(axis=1)
        .mean()
    )
    lift = accuracy * classes
    if baseline is None:
        baseline = FrequencyPolicy.fit(holdout)
    p0 = np.clip(baseline.predict_training(holdout)[np.arange(n), y], PROB_FLOOR, None)
    ll1 = float(np.log(picked).sum())
    ll0 = float(np.log(p0).sum())
    ratio = np.exp((2.0 / n) * (ll0 - ll1))  # (L0/L1)^(2/N)
    denom = 1.0 - np.exp((2.0 / n) * ll0)  # 1 - L0^(2/N)
    nagelkerke = float((1.0 - ratio) / denom) if denom > 0 else 0.0
    return FitReport(
        accuracy=accuracy,
        log_loss=log_loss,
        hellinger=hellinger,
        lift=lift,
        nagelkerke_r2=nagelkerke,
        n_obs=n,
        n_clamped=n_clamped,
    )


def select_model(
    reports: dict[tuple[str, int], FitReport],
    silhouettes: dict[int, float],
) -> tuple[tuple[str, int], list[dict]]:
    """Pick (method, K): max lift, ties by pseudo-R2, then silhouette.

    The full ranked grid is returned alongside so the choice can be
    overridden by inspection.
    """
    if not reports:
        raise ValueError("empty report grid")
    rows = []
    for (method, k), rep in reports.items():
        rows.append(
            {
                **rep.row(),
                "method": method,
                "k": k,
                "silhouette": silhouettes.get(k, float("nan")),
            }
        )
    ranked = sorted(
        rows,
        key=lambda r: (-r["lift"], -r["nagelkerke_r2"], -r["silhouette"], r["method"], r["k"]),
    )
    best = (ranked[0]["method"], ranked[0]["k"])
    return best, ranked
