"""Counterfactual recommendation regimes with bootstrap uncertainty.

Nine scenarios are supported. Each distorts or restricts *planning*
only; every scenario is then evaluated exactly under the same
undistorted consumer policy and true margins, so the numbers are
comparable and the unrestricted planner dominates by construction.

    status_quo              evaluate the observed recommendation matrix
    static_matrix_opt       best single row-stochastic matrix
    dynamic_matrix_opt      best per-period matrices
    prev_actions_only       planner sees (t, view history) only
    prev_actions_and_recs   planner sees (t, view history, slot history)
    ignore_churn            plans as if the consumer never exits
    ignore_margins          plans for conversions, not margins
    one_step_lookahead      plans for the next decision only
    first_best              unrestricted planner

Matrix optimization runs a monotone projected-gradient ascent once; the
bootstrap replications reuse that optimum through a quadratic
approximation (gradient and Hessian by central finite differences on
the free row parameterization, one Newton step, rows projected back to
the simplex).
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .clickstream import Session, sessions_to_training
from .dpsolver import (
    MatrixRecPolicy,
    RecPolicy,
    ScenarioModifiers,
    StateSpace,
    bellman_solve,
    evaluate_policy,
    solve_masked,
)
from .policy import ConsumerPolicy, TreeParams, fit_multinomial_logit, fit_tree_ensemble
from .rng import substream
from .states import SimplexLattice

__all__ = [
    "SCENARIO_NAMES",
    "ScenarioInputs",
    "ScenarioResult",
    "run_scenario",
    "run_suite",
    "optimize_matrix",
    "newton_step",
    "project_simplex_rows",
    "bootstrap",
    "BootstrapResult",
]

SCENARIO_NAMES = (
    "status_quo",
    "static_matrix_opt",
    "dynamic_matrix_opt",
    "prev_actions_only",
    "prev_actions_and_recs",
    "ignore_margins",
    "ignore_churn",
    "one_step_lookahead",
    "first_best",
)


@dataclass
class ScenarioInputs:
    """Everything a scenario needs: the model and the observed matrix."""

    policy: ConsumerPolicy
    margins: np.ndarray
    lattice: SimplexLattice
    horizon: int
    first_click: np.ndarray
    status_quo_matrix: np.ndarray
    _space: StateSpace | None = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return self.lattice.k

    def space(self) -> StateSpace:
        if self._space is None:
            self._space = StateSpace(self.lattice, self.horizon)
        return self._space

    def with_policy(self, policy: ConsumerPolicy) -> "ScenarioInputs":
        return ScenarioInputs(
            policy,
            self.margins,
            self.lattice,
            self.horizon,
            self.first_click,
            self.status_quo_matrix,
        )

    def evaluation_fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.policy.fingerprint().encode())
        digest.update(np.asarray(self.margins, dtype=float).tobytes())
        digest.update(np.asarray(self.first_click, dtype=float).tobytes())
        digest.update(
            f"{self.lattice.k}:{self.lattice.g}:{self.horizon}".encode()
        )
        return digest.hexdigest()


@dataclass
class ScenarioResult:
    name: str
    profit_raw: float
    profit_normalized: float | None = None
    std_dev: float | None = None
    evaluation_fingerprint: str = ""


def _evaluate(rec_policy: RecPolicy, inputs: ScenarioInputs) -> float:
    profit, _ = evaluate_policy(
        rec_policy,
        inputs.policy,
        inputs.margins,
        inputs.lattice,
        inputs.horizon,
        inputs.first_click,
        exact=True,
        space=inputs.space(),
    )
    return profit


def plan_scenario(
    name: str,
    inputs: ScenarioInputs,
    seed: int = 0,
    context: dict | None = None,
) -> RecPolicy:
    """Build the scenario's recommendation rule (planning stage only).

    ``context`` caches intermediate optima across scenarios of one suite
    (the dynamic matrix starts from the static optimum, which keeps the
    nested classes ordered under exact evaluation).
    """
    context = context if context is not None else {}
    p, m, lat, T = inputs.policy, inputs.margins, inputs.lattice, inputs.horizon
    space = inputs.space()
    if name == "status_quo":
        return MatrixRecPolicy(inputs.status_quo_matrix, T, kind="status_quo")
    if name == "first_best":
        return bellman_solve(p, m, lat, T, space=space).policy()
    if name == "ignore_churn":
        mods = ScenarioModifiers(zero_churn=True)
        return bellman_solve(p, m, lat, T, modifiers=mods, space=space).policy()
    if name == "ignore_margins":
        mods = ScenarioModifiers(uniform_margins=True)
        return bellman_solve(p, m, lat, T, modifiers=mods, space=space).policy()
    if name == "one_step_lookahead":
        mods = ScenarioModifiers(one_step=True)
        return bellman_solve(p, m, lat, T, modifiers=mods, space=space).policy()
    if name == "prev_actions_only":
        if "prev_actions_only" not in context:
            context["prev_actions_only"] = solve_masked(
                p, m, lat, T, "A", inputs.first_click, space=space
            ).policy()
        return context["prev_actions_only"]
    if name == "prev_actions_and_recs":
        candidate = solve_masked(
            p, m, lat, T, "AR", inputs.first_click, space=space
        ).policy()
        coarse = plan_scenario("prev_actions_only", inputs, seed, context)
        # the coarser rule is feasible here too; keep whichever evaluates better
        if _evaluate(candidate, inputs) >= _evaluate(coarse, inputs):
            return candidate
        return coarse
    max_iter = int(context.get("optimizer_max_iter", 200))
    if name == "static_matrix_opt":
        if "static_matrix_opt" not in context:
            context["static_matrix_opt"] = optimize_matrix(
                inputs, dynamic=False, seed=seed, max_iter=max_iter
            )
        return context["static_matrix_opt"]
    if name == "dynamic_matrix_opt":
        static = plan_scenario("static_matrix_opt", inputs, seed, context)
        init = np.repeat(static.matrices[None, :, :], T - 1, axis=0)
        return optimize_matrix(inputs, dynamic=True, init=init, seed=seed,
                               max_iter=max_iter)
    raise ValueError(f"unknown scenario {name!r}")


def run_scenario(
    name: str,
    inputs: ScenarioInputs,
    seed: int = 0,
    context: dict | None = None,
) -> ScenarioResult:
    """Plan under the scenario, then evaluate under the true model."""
    rec = plan_scenario(name, inputs, seed=seed, context=context)
    profit = _evaluate(rec, inputs)
    return ScenarioResult(
        name=name,
        profit_raw=profit,
        evaluation_fingerprint=inputs.evaluation_fingerprint(),
    )


def run_suite(
    inputs: ScenarioInputs,
    scenarios=SCENARIO_NAMES,
    seed: int = 0,
    optimizer_max_iter: int | None = None,
) -> dict[str, ScenarioResult]:
    """Run scenarios and normalize profits so status_quo reads 100."""
    names = list(scenarios)
    if "status_quo" not in names:
        names = ["status_quo"] + names
    context: dict = {}
    if optimizer_max_iter is not None:
        context["optimizer_max_iter"] = optimizer_max_iter
    results = {
        name: run_scenario(name, inputs, seed=seed, context=context)
        for name in names
    }
    base = results["status_quo"].profit_raw
    for res in results.values():
        res.profit_normalized = 100.0 * res.profit_raw / base
    results["status_quo"].profit_normalized = 100.0
    return results


def project_simplex_rows(mat: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row onto the probability simplex."""
    mat = np.asarray(mat, dtype=float)
    x = np.atleast_2d(mat)
    n = x.shape[1]
    a = -np.sort(-x, axis=1)
    cumsum = (np.cumsum(a, axis=1) - 1.0) / np.arange(1, n + 1)
    rho = (a > cumsum).sum(axis=1) - 1
    theta = cumsum[np.arange(x.shape[0]), rho]
    out = np.maximum(x - theta[:, None], 0.0)
    return out.reshape(mat.shape)


def _free_to_matrices(x: np.ndarray, periods: int, k: int) -> np.ndarray:
    """Free vector (K-1 entries per row) to row-stochastic matrices.

    The implied last column can leave the simplex during finite
    differencing; rows are clipped and renormalized so the objective
    stays defined in a neighborhood of the optimum.
    """
    free = x.reshape(periods, k, k - 1)
    mats = np.empty((periods, k, k))
    mats[:, :, : k - 1] = free
    mats[:, :, k - 1] = 1.0 - free.sum(axis=2)
    mats = np.clip(mats, 0.0, None)
    mats /= mats.sum(axis=2, keepdims=True)
    return mats


def _matrices_to_free(mats: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(mats[:, :, :-1]).ravel().copy()


def newton_step(
    objective,
    x0: np.ndarray,
    h: float = 1e-4,
    fallback_step: float = 0.1,
) -> np.ndarray:
    """Maximizer of the quadratic model of ``objective`` around ``x0``.

    Gradient and Hessian come from central finite differences (exact for
    quadratics up to roundoff), and the step is x0 - H^-1 D. If the
    Hessian cannot be inverted, an ascent step of length
    ``fallback_step`` along the normalized gradient is taken instead.
    """
    x0 = np.asarray(x0, dtype=float)
    d = x0.shape[0]
    f0 = objective(x0)
    E = np.eye(d) * h
    f_plus = np.array([objective(x0 + E[i]) for i in range(d)])
    f_minus = np.array([objective(x0 - E[i]) for i in range(d)])
    D = (f_plus - f_minus) / (2.0 * h)
    H = np.empty((d, d))
    for i in range(d):
        H[i, i] = (f_plus[i] - 2.0 * f0 + f_minus[i]) / (h * h)
        for j in range(i + 1, d):
            fpp = objective(x0 + E[i] + E[j])
            fpm = objective(x0 + E[i] - E[j])
            fmp = objective(x0 - E[i] + E[j])
            fmm = objective(x0 - E[i] - E[j])
            H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * h * h)
    try:
        step = np.linalg.solve(H, D)
        if not np.all(np.isfinite(step)):
            raise np.linalg.LinAlgError("non-finite Newton step")
    except np.linalg.LinAlgError:
        scale = max(1.0, float(np.abs(D).max()))
        return x0 + fallback_step * D / scale
    return x0 - step


def optimize_matrix(
    inputs: ScenarioInputs,
    dynamic: bool,
    init: np.ndarray | None = None,
    seed: int = 0,
    tol: float = 1e-6,
    max_iter: int = 200,
    fd_step: float = 1e-4,
) -> MatrixRecPolicy:
    """Projected-gradient ascent of expected profit over matrix rules.

    Finite-difference gradients, Euclidean row projection, and a
    monotone backtracking line search: every accepted iterate improves,
    so starting from the status quo (static) or the replicated static
    optimum (dynamic) preserves the nesting of the policy classes. The
    run is deterministic; ``seed`` is accepted for interface parity.
    """
    del seed
    k, T = inputs.k, inputs.horizon
    periods = T - 1 if dynamic else 1
    if init is None:
        if dynamic:
            static = optimize_matrix(inputs, dynamic=False, tol=tol, max_iter=max_iter)
            init = np.repeat(static.matrices[None, :, :], periods, axis=0)
        else:
            init = inputs.status_quo_matrix[None, :, :]
    mats = np.asarray(init, dtype=float).reshape(periods, k, k).copy()
    kind = "dynamic_matrix_opt" if dynamic else "static_matrix_opt"

    def as_policy(m: np.ndarray) -> MatrixRecPolicy:
        m = np.clip(m, 0.0, None)
        m = m / m.sum(axis=2, keepdims=True)
        if dynamic:
            return MatrixRecPolicy(m, T, kind=kind)
        return MatrixRecPolicy(m[0], T, kind=kind)

    def w(m: np.ndarray) -> float:
        # finite-difference probes leave the simplex; evaluate the
        # renormalized matrix so the objective stays defined
        return _evaluate(as_policy(m), inputs)

    best = w(mats)
    step = 1.0
    for _ in range(max_iter):
        grad = np.zeros_like(mats)
        for p in range(periods):
            for i in range(k):
                for j in range(k):
                    delta = np.zeros_like(mats)
                    delta[p, i, j] = fd_step
                    grad[p, i, j] = (w(mats + delta) - w(mats - delta)) / (2 * fd_step)
        probe = 1e-3
        moved = project_simplex_rows((mats + probe * grad).reshape(-1, k)).reshape(
            mats.shape
        )
        stationarity = float(np.abs(moved - mats).max() / probe)
        if stationarity < tol:
            break
        improved = False
        trial_step = step
        for _ in range(30):
            cand = project_simplex_rows(
                (mats + trial_step * grad).reshape(-1, k)
            ).reshape(mats.shape)
            cand_w = w(cand)
            if cand_w > best + 1e-14:
                mats, best = cand, cand_w
                step = trial_step * 1.5
                improved = True
                break
            trial_step *= 0.5
        if not improved:
            break
    return as_policy(mats)


def refit_matrix(
    inputs: ScenarioInputs,
    point_optimum: MatrixRecPolicy,
    h: float = 1e-4,
) -> MatrixRecPolicy:
    """Bootstrap fast path: one quadratic step from the nominal optimum.

    The objective is the replication's expected profit as a function of
    the free row parameters; the refitted matrices are projected back
    onto the simplex row by row.
    """
    k, T = inputs.k, inputs.horizon
    dynamic = not point_optimum.static
    periods = T - 1 if dynamic else 1
    mats0 = point_optimum.matrices.reshape(periods, k, k)

    def as_policy(m: np.ndarray) -> MatrixRecPolicy:
        if dynamic:
            return MatrixRecPolicy(m, T, kind=point_optimum.kind)
        return MatrixRecPolicy(m[0], T, kind=point_optimum.kind)

    def objective(x: np.ndarray) -> float:
        return _evaluate(as_policy(_free_to_matrices(x, periods, k)), inputs)

    x0 = _matrices_to_free(mats0)
    x_b = newton_step(objective, x0, h=h)
    mats_b = _free_to_matrices(x_b, periods, k)
    mats_b = project_simplex_rows(mats_b.reshape(-1, k)).reshape(mats_b.shape)
    return as_policy(mats_b)


def _fit_policy(train, estimator: dict) -> ConsumerPolicy:
    method = estimator.get("method", "logit")
    if method == "logit":
        return fit_multinomial_logit(train, reg=estimator.get("reg", 1e-6))
    if method in ("forest", "boost"):
        params = TreeParams(
            n_trees=estimator.get("n_trees", 200),
            max_depth=estimator.get("max_depth", 4),
            min_leaf=estimator.get("min_leaf", 1),
            mode="bagging" if method == "forest" else "boosting",
            learning_rate=estimator.get("learning_rate", 0.1),
        )
        return fit_tree_ensemble(train, params, seed=estimator.get("seed", 0))
    raise ValueError(f"unknown estimator method {method!r}")


@dataclass
class BootstrapResult:
    point: dict[str, ScenarioResult]
    replications: np.ndarray  # (B_ok, n_scenarios) normalized profits
    scenario_names: list[str]
    failures: list[str]

    def table(self) -> list[dict]:
        rows = []
        for i, name in enumerate(self.scenario_names):
            res = self.point[name]
            rows.append(
                {
                    "scenario": name,
                    "expected_profit": res.profit_normalized,
                    "std_dev": res.std_dev,
                    "profit_raw": res.profit_raw,
                }
            )
        return rows


def _replicate(
    b: int,
    sessions: list[Session],
    estimator: dict,
    scenarios: list[str],
    inputs: ScenarioInputs,
    point_matrices: dict[str, MatrixRecPolicy],
    seed: int,
    base_profit: float,
) -> np.ndarray:
    rng = substream(seed, "bootstrap", b)
    idx = rng.integers(0, len(sessions), size=len(sessions))
    resampled = [sessions[i] for i in idx]
    train = sessions_to_training(resampled, inputs.k, inputs.horizon)
    policy_b = _fit_policy(train, estimator)
    inputs_b = inputs.with_policy(policy_b)
    context: dict = {}
    out = np.empty(len(scenarios))
    for s, name in enumerate(scenarios):
        if name in point_matrices:
            rec = refit_matrix(inputs_b, point_matrices[name])
            profit = _evaluate(rec, inputs_b)
        else:
            profit = run_scenario(name, inputs_b, seed=seed, context=context).profit_raw
        out[s] = 100.0 * profit / base_profit
    return out


def bootstrap(
    sessions: list[Session],
    estimator: dict,
    inputs: ScenarioInputs,
    scenarios=SCENARIO_NAMES,
    B: int = 50,
    seed: int = 0,
    n_jobs: int = 1,
    optimizer_max_iter: int | None = None,
) -> BootstrapResult:
    """Session-level bootstrap of the consumer policy under each scenario.

    Sessions are resampled with replacement, the policy is re-estimated,
    and every scenario re-run (matrix scenarios through the quadratic
    fast path around the point-estimate optimum). Standard deviations
    are over replications of profits normalized by the point-estimate
    status quo. Failed replications are excluded and reported.
    """
    if B < 2:
        raise ValueError("B must be >= 2")
    scenarios = list(scenarios)
    point = run_suite(inputs, scenarios, seed=seed,
                      optimizer_max_iter=optimizer_max_iter)
    base = point["status_quo"].profit_raw
    context: dict = {}
    if optimizer_max_iter is not None:
        context["optimizer_max_iter"] = optimizer_max_iter
    point_matrices = {}
    for name in ("static_matrix_opt", "dynamic_matrix_opt"):
        if name in scenarios:
            point_matrices[name] = plan_scenario(name, inputs, seed=seed,
                                                 context=context)
    ordered = [n for n in scenarios]
    jobs = Parallel(n_jobs=n_jobs)(
        delayed(_try_replicate)(
            b, sessions, estimator, ordered, inputs, point_matrices, seed, base
        )
        for b in range(B)
    )
    rows, failures = [], []
    for b, (ok, payload) in enumerate(jobs):
        if ok:
            rows.append(payload)
        else:
            failures.append(f"replication {b}: {payload}")
    if failures:
        warnings.warn(
            f"{len(failures)} bootstrap replications failed and were excluded",
            stacklevel=2,
        )
    reps = np.vstack(rows) if rows else np.zeros((0, len(ordered)))
    for s, name in enumerate(ordered):
        if reps.shape[0] >= 2:
            point[name].std_dev = float(reps[:, s].std(ddof=1))
        else:
            point[name].std_dev = float("nan")
    return BootstrapResult(point, reps, ordered, failures)


def _try_replicate(b, sessions, estimator, scenarios, inputs, point_matrices, seed, base):
    try:
        return True, _replicate(
            b, sessions, estimator, scenarios, inputs, point_matrices, seed, base
        )
    except Exception as exc:  # noqa: BLE001 - replication failures are reported
        return False, repr(exc)
