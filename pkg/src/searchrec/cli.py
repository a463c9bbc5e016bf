"""Batch command-line interface.

Subcommands compose the pipeline:

    generate        synthetic catalog + vehicle-level clickstream
    cluster         normalize catalog, sweep K, score silhouettes
    recode          vehicle streams to cluster level, margins, matrices
    estimate        fit the consumer policy grid (methods x K)
    select          pick (method, K), refit on all sessions
    solve           backward induction, policy diagnostics
    counterfactual  scenario suite with bootstrap uncertainty
    report          render tables from a manifest
    pipeline        run cluster .. counterfactual end to end
    states          dump reachable-state counts per step

Every run is reproducible: all randomness derives from --seed, stage
outputs are content-hashed into ``manifest.json``, and ``pipeline
--resume`` skips stages whose inputs and outputs are unchanged. Exit
codes: 0 success, 2 invalid configuration or input, 3 stage failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import catalog as cat
from . import clickstream as cs
from . import clustering as cl
from . import counterfactual as cf
from . import dpsolver as dp
from . import policy as pol
from .states import SimplexLattice
from .worlds import World, default_world

OUT_ROOT_ENV = "SEARCHREC_OUT"

DEFAULT_CONFIG = {
    "paths": {"catalog": "catalog.csv", "clicks": "clicks.jsonl", "out": "runs"},
    "clustering": {"k_min": 3, "k_max": 10, "subsample": None},
    "estimation": {
        "methods": ["logit"],
        "holdout": 0.4,
        "reg": 1e-6,
        "n_trees": 100,
        "max_depth": 6,
        "min_leaf": 5,
        "learning_rate": 0.1,
    },
    "dp": {"horizon": 22, "grid": 3},
    "counterfactual": {
        "scenarios": "all",
        "bootstrap_b": 0,
        "n_jobs": 1,
        "optimizer_max_iter": 60,
    },
    "seed": 0,
}


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    pass


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    config = dict(DEFAULT_CONFIG)
    if path:
        with open(path, encoding="utf-8") as fh:
            config = _merge(config, json.load(fh))
    if overrides:
        config = _merge(config, overrides)
    holdout = config["estimation"]["holdout"]
    if not 0 < holdout < 1:
        raise ConfigError("estimation.holdout must be in (0, 1)")
    if config["dp"]["horizon"] < 1 or config["dp"]["grid"] < 1:
        raise ConfigError("dp.horizon and dp.grid must be >= 1")
    if config["counterfactual"]["bootstrap_b"] < 0:
        raise ConfigError("counterfactual.bootstrap_b must be >= 0")
    return config


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def read_csv_rows(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _fmt(x: float) -> str:
    return f"{float(x):.12g}"


class Manifest:
    def __init__(self, path: Path):
        self.path = path
        if path.exists():
            with open(path, encoding="utf-8") as fh:
                self.data = json.load(fh)
        else:
            self.data = {"format": "searchrec-manifest", "version": 1, "stages": {}}

    def record(self, stage: str, inputs: dict, outputs: list[Path], config: dict) -> None:
        root = self.path.parent
        self.data["stages"][stage] = {
            "inputs": inputs,
            "outputs": {
                str(p.relative_to(root)): sha256_file(p) for p in sorted(outputs)
            },
            "config": config,
            "completed_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        }
        self.save()

    def can_skip(self, stage: str, inputs: dict, config: dict) -> bool:
        entry = self.data["stages"].get(stage)
        if not entry:
            return False
        if entry["inputs"] != inputs or entry.get("config") != config:
            return False
        root = self.path.parent
        for rel, digest in entry["outputs"].items():
            path = root / rel
            if not path.exists() or sha256_file(path) != digest:
                return False
        return True

    def outputs(self, stage: str) -> dict:
        entry = self.data["stages"].get(stage)
        return dict(entry["outputs"]) if entry else {}

    def save(self) -> None:
        with open(self.path, "w", encoding="utf-8") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------- generate


def cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.truth:
        world = World.load(args.truth)
    else:
        world = default_world(k=args.k, horizon=args.horizon)
    k = world.k
    if k <= len(cat.DEFAULT_SEGMENT_PROFILES):
        profiles = cat.DEFAULT_SEGMENT_PROFILES[:k]
    else:
        profiles = cat.separable_profiles(k, per_segment=400)
    catalog, planted = cat.synthetic_catalog(args.seed, profiles=profiles,
                                             scale=args.catalog_scale)
    cat.save_catalog(catalog, out / "catalog.csv")
    cluster_sessions = cs.generate_synthetic(
        world.truth,
        dp.MatrixRecPolicy(world.rec_matrix, world.horizon),
        args.n,
        horizon=world.horizon,
        seed=args.seed,
        first_click=world.first_click,
    )
    members = {c: [] for c in range(k)}
    for vid, c in planted.items():
        members[c].append(vid)
    vehicle_sessions = cs.generate_vehicle_sessions(cluster_sessions, members,
                                                    seed=args.seed)
    cs.save_clickstream(vehicle_sessions, out / "clicks.jsonl")
    world.save(out / "world.json")
    pageviews = float(np.mean([s.n_pageviews for s in cluster_sessions]))
    conversion = float(np.mean([s.terminal == "convert" for s in cluster_sessions]))
    print(f"generated {len(catalog)} vehicles, {args.n} sessions "
          f"(mean pageviews {pageviews:.2f}, conversion {conversion:.4f})")
    print(f"wrote {out / 'catalog.csv'}, {out / 'clicks.jsonl'}, {out / 'world.json'}")
    return 0


# ---------------------------------------------------------------- stages


def stage_cluster(config: dict, out: Path) -> list[Path]:
    stage_dir = out / "cluster"
    stage_dir.mkdir(parents=True, exist_ok=True)
    catalog = cat.load_catalog(config["paths"]["catalog"])
    normalized = cat.normalize(catalog)
    points = cat.feature_matrix(normalized)
    ks = range(config["clustering"]["k_min"], config["clustering"]["k_max"] + 1)
    models = cl.sweep(points, k_range=ks, seed=config["seed"],
                      vehicle_ids=catalog.vehicle_ids)
    payload = {
        "format": "searchrec-clusters",
        "version": 1,
        "models": [m.to_dict() for m in models],
    }
    best = max(models, key=lambda m: m.silhouette)
    payload["selected_k"] = best.k
    artifacts = []
    with open(stage_dir / "models.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")
    artifacts.append(stage_dir / "models.json")
    write_csv(
        stage_dir / "silhouette_vs_k.csv",
        ["k", "silhouette", "within_ss"],
        [[m.k, _fmt(m.silhouette), _fmt(m.within_ss)] for m in models],
    )
    artifacts.append(stage_dir / "silhouette_vs_k.csv")
    names = cat.feature_names(cat.NormalizationSpec())
    rows = []
    for c in range(best.k):
        rows.append([c + 1] + [_fmt(v) for v in best.centroids[c]])
    write_csv(stage_dir / "centroids.csv", ["cluster"] + names, rows)
    artifacts.append(stage_dir / "centroids.csv")
    if config.get("dump_normalized"):
        write_csv(
            stage_dir / "normalized.csv",
            ["vehicle_id"] + names,
            [[nv.vehicle_id] + [_fmt(v) for v in nv.feature_vector] for nv in normalized],
        )
        artifacts.append(stage_dir / "normalized.csv")
    return artifacts


def _load_models(out: Path) -> dict[int, cl.ClusterModel]:
    with open(out / "cluster" / "models.json", encoding="utf-8") as fh:
        payload = json.load(fh)
    return {int(d["k"]): cl.ClusterModel.from_dict(d) for d in payload["models"]}


def stage_recode(config: dict, out: Path) -> list[Path]:
    stage_dir = out / "recode"
    stage_dir.mkdir(parents=True, exist_ok=True)
    models = _load_models(out)
    sessions, rejected = cs.load_clickstream(config["paths"]["clicks"], strict=False)
    if rejected:
        print(f"rejected {len(rejected)} ill-formed sessions", file=sys.stderr)
    horizon = config["dp"]["horizon"]
    catalog = cat.load_catalog(config["paths"]["catalog"])
    margins_report = cat.compute_margins(catalog)
    artifacts = []
    for k, model in sorted(models.items()):
        recoded = cs.recode_to_clusters(sessions, model.assignments, k)
        recoded = cs.truncate_sessions(recoded, horizon)
        path = stage_dir / f"recoded_k{k}.jsonl"
        cs.save_clickstream(recoded, path)
        artifacts.append(path)
        matrix, flagged = cs.extract_status_quo_matrix(recoded, k)
        if flagged.any():
            print(f"k={k}: {int(flagged.sum())} clusters never viewed; "
                  "uniform rows substituted", file=sys.stderr)
        write_csv(
            stage_dir / f"status_quo_k{k}.csv",
            ["cluster"] + [str(j + 1) for j in range(k)],
            [[i + 1] + [_fmt(v) for v in matrix[i]] for i in range(k)],
        )
        artifacts.append(stage_dir / f"status_quo_k{k}.csv")
        margins = margins_report.cluster_margins(model.assignments, k)
        write_csv(
            stage_dir / f"margins_k{k}.csv",
            ["cluster", "margin"],
            [[i + 1, _fmt(margins[i])] for i in range(k)],
        )
        artifacts.append(stage_dir / f"margins_k{k}.csv")
        fc = cs.first_click_distribution(recoded, k)
        write_csv(
            stage_dir / f"first_click_k{k}.csv",
            ["cluster", "share"],
            [[i + 1, _fmt(fc[i])] for i in range(k)],
        )
        artifacts.append(stage_dir / f"first_click_k{k}.csv")
    return artifacts


def _estimator_params(config: dict, method: str) -> dict:
    est = config["estimation"]
    if method == "logit":
        return {"method": "logit", "reg": est["reg"]}
    return {
        "method": method,
        "n_trees": est["n_trees"],
        "max_depth": est["max_depth"],
        "min_leaf": est["min_leaf"],
        "learning_rate": est["learning_rate"],
        "seed": config["seed"],
    }


def _fit(train: pol.TrainingSet, spec: dict) -> pol.ConsumerPolicy:
    if spec["method"] == "logit":
        return pol.fit_multinomial_logit(train, reg=spec["reg"])
    params = pol.TreeParams(
        n_trees=spec["n_trees"],
        max_depth=spec["max_depth"],
        min_leaf=spec["min_leaf"],
        mode="bagging" if spec["method"] == "forest" else "boosting",
        learning_rate=spec["learning_rate"],
    )
    return pol.fit_tree_ensemble(train, params, seed=spec["seed"])


def stage_estimate(config: dict, out: Path) -> list[Path]:
    stage_dir = out / "estimate"
    stage_dir.mkdir(parents=True, exist_ok=True)
    models = _load_models(out)
    horizon = config["dp"]["horizon"]
    methods = config["estimation"]["methods"]
    k_only = config["estimation"].get("k_only")
    rows = []
    for k in sorted(models):
        if k_only is not None and k != k_only:
            continue
        sessions, _ = cs.load_clickstream(out / "recode" / f"recoded_k{k}.jsonl")
        data = cs.sessions_to_training(sessions, k, horizon)
        train, hold = data.split_sessions(config["estimation"]["holdout"],
                                          config["seed"])
        for method in methods:
            policy = _fit(train, _estimator_params(config, method))
            report = pol.evaluate(policy, hold)
            report.method = method
            report.k = k
            rows.append(report)
    write_csv(
        stage_dir / "fit_grid.csv",
        ["method", "k", "accuracy", "log_loss", "hellinger", "lift",
         "nagelkerke_r2", "n_obs"],
        [
            [r.method, r.k, _fmt(r.accuracy), _fmt(r.log_loss), _fmt(r.hellinger),
             _fmt(r.lift), _fmt(r.nagelkerke_r2), r.n_obs]
            for r in rows
        ],
    )
    return [stage_dir / "fit_grid.csv"]


def stage_select(config: dict, out: Path) -> list[Path]:
    stage_dir = out / "select"
    stage_dir.mkdir(parents=True, exist_ok=True)
    models = _load_models(out)
    silhouettes = {k: m.silhouette for k, m in models.items()}
    reports = {}
    for row in read_csv_rows(out / "estimate" / "fit_grid.csv"):
        reports[(row["method"], int(row["k"]))] = pol.FitReport(
            accuracy=float(row["accuracy"]),
            log_loss=float(row["log_loss"]),
            hellinger=float(row["hellinger"]),
            lift=float(row["lift"]),
            nagelkerke_r2=float(row["nagelkerke_r2"]),
            n_obs=int(row["n_obs"]),
            method=row["method"],
            k=int(row["k"]),
        )
    (method, k), table = pol.select_model(reports, silhouettes)
    sessions, _ = cs.load_clickstream(out / "recode" / f"recoded_k{k}.jsonl")
    data = cs.sessions_to_training(sessions, k, config["dp"]["horizon"])
    policy = _fit(data, _estimator_params(config, method))
    payload = {
        "format": "searchrec-policy",
        "version": 1,
        "method": method,
        "k": k,
        "horizon": config["dp"]["horizon"],
    }
    if isinstance(policy, pol.LogitPolicy):
        payload["logit"] = policy.to_dict()
    else:
        import base64
        import pickle

        payload["pickle_b64"] = base64.b64encode(
            pickle.dumps(policy, protocol=4)
        ).decode("ascii")
    with open(stage_dir / "policy.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")
    with open(stage_dir / "selection.json", "w", encoding="utf-8") as fh:
        json.dump({"method": method, "k": k, "grid": table}, fh, sort_keys=True,
                  indent=2)
        fh.write("\n")
    return [stage_dir / "policy.json", stage_dir / "selection.json"]


def load_policy_file(path: Path) -> pol.ConsumerPolicy:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "searchrec-policy":
        raise ConfigError(f"{path} is not a policy file")
    if "logit" in payload:
        return pol.LogitPolicy.from_dict(payload["logit"])
    if "synthetic" in payload:
        return cs.SyntheticLogitPolicy.from_dict(payload["synthetic"])
    import base64
    import pickle

    return pickle.loads(base64.b64decode(payload["pickle_b64"]))


def _read_vector(path: Path, column: str) -> np.ndarray:
    rows = read_csv_rows(path)
    return np.array([float(r[column]) for r in rows])


def _read_matrix(path: Path) -> np.ndarray:
    rows = read_csv_rows(path)
    k = len(rows)
    out = np.empty((k, k))
    for i, row in enumerate(rows):
        for j in range(k):
            out[i, j] = float(row[str(j + 1)])
    return out / out.sum(axis=1, keepdims=True)


def _scenario_inputs(config: dict, out: Path) -> cf.ScenarioInputs:
    with open(out / "select" / "selection.json", encoding="utf-8") as fh:
        k = int(json.load(fh)["k"])
    policy = load_policy_file(out / "select" / "policy.json")
    margins = _read_vector(out / "recode" / f"margins_k{k}.csv", "margin")
    first_click = _read_vector(out / "recode" / f"first_click_k{k}.csv", "share")
    matrix = _read_matrix(out / "recode" / f"status_quo_k{k}.csv")
    lattice = SimplexLattice(k, config["dp"]["grid"])
    return cf.ScenarioInputs(
        policy, margins, lattice, config["dp"]["horizon"], first_click, matrix
    )


def stage_solve(config: dict, out: Path) -> list[Path]:
    stage_dir = out / "solve"
    stage_dir.mkdir(parents=True, exist_ok=True)
    inputs = _scenario_inputs(config, out)
    table = dp.bellman_solve(
        inputs.policy, inputs.margins, inputs.lattice, inputs.horizon,
        space=inputs.space(),
    )
    dp.save_value_table(table, stage_dir / "value.bin")
    summary = dp.summarize_policy(table)
    k = inputs.k
    write_csv(
        stage_dir / "rec_matrix.csv",
        ["cluster"] + [str(j + 1) for j in range(k)],
        [[i + 1] + [_fmt(v) for v in summary["matrix"][i]] for i in range(k)],
    )
    write_csv(
        stage_dir / "per_t_distribution.csv",
        ["t"] + [str(j + 1) for j in range(k)],
        [[t + 1] + [_fmt(v) for v in summary["per_t"][t]]
         for t in range(summary["per_t"].shape[0])],
    )
    write_csv(
        stage_dir / "concentration.csv",
        ["t", "one_cluster", "two_clusters", "three_clusters"],
        [[t + 1] + [_fmt(v) for v in summary["distinct_shares"][t]]
         for t in range(summary["distinct_shares"].shape[0])],
    )
    value = table.initial_value(inputs.first_click)
    write_csv(stage_dir / "value_summary.csv", ["initial_expected_profit"],
              [[_fmt(value)]])
    return [
        stage_dir / "value.bin",
        stage_dir / "rec_matrix.csv",
        stage_dir / "per_t_distribution.csv",
        stage_dir / "concentration.csv",
        stage_dir / "value_summary.csv",
    ]


def stage_counterfactual(config: dict, out: Path) -> list[Path]:
    stage_dir = out / "counterfactual"
    stage_dir.mkdir(parents=True, exist_ok=True)
    inputs = _scenario_inputs(config, out)
    scen_cfg = config["counterfactual"]
    names = scen_cfg["scenarios"]
    if names == "all":
        names = list(cf.SCENARIO_NAMES)
    elif isinstance(names, str):
        names = [n.strip() for n in names.split(",") if n.strip()]
    b = int(scen_cfg["bootstrap_b"])
    artifacts = []
    if b >= 2:
        with open(out / "select" / "selection.json", encoding="utf-8") as fh:
            sel = json.load(fh)
        sessions, _ = cs.load_clickstream(
            out / "recode" / f"recoded_k{sel['k']}.jsonl"
        )
        result = cf.bootstrap(
            sessions,
            _estimator_params(config, sel["method"]),
            inputs,
            scenarios=names,
            B=b,
            seed=config["seed"],
            n_jobs=int(scen_cfg.get("n_jobs", 1)),
            optimizer_max_iter=int(scen_cfg.get("optimizer_max_iter", 60)),
        )
        rows = result.table()
        write_csv(
            stage_dir / "replications.csv",
            ["replication"] + result.scenario_names,
            [[i] + [_fmt(v) for v in rep] for i, rep in enumerate(result.replications)],
        )
        artifacts.append(stage_dir / "replications.csv")
    else:
        suite = cf.run_suite(
            inputs, names, seed=config["seed"],
            optimizer_max_iter=int(scen_cfg.get("optimizer_max_iter", 60)),
        )
        rows = [
            {
                "scenario": name,
                "expected_profit": suite[name].profit_normalized,
                "std_dev": "",
                "profit_raw": suite[name].profit_raw,
            }
            for name in names
        ]
    write_csv(
        stage_dir / "results.csv",
        ["scenario", "expected_profit", "std_dev", "profit_raw"],
        [
            [r["scenario"], _fmt(r["expected_profit"]),
             "" if r["std_dev"] in ("", None) else _fmt(r["std_dev"]),
             _fmt(r["profit_raw"])]
            for r in rows
        ],
    )
    artifacts.insert(0, stage_dir / "results.csv")
    return artifacts


STAGES = [
    ("cluster", stage_cluster, ("catalog",)),
    ("recode", stage_recode, ("catalog", "clicks")),
    ("estimate", stage_estimate, ()),
    ("select", stage_select, ()),
    ("solve", stage_solve, ()),
    ("counterfactual", stage_counterfactual, ()),
]


def _stage_inputs(stage: str, config: dict, manifest: Manifest) -> dict:
    inputs = {}
    for name, _, paths in STAGES:
        if name == stage:
            for p in paths:
                path = Path(config["paths"][p])
                inputs[p] = sha256_file(path) if path.exists() else "missing"
            break
    order = [name for name, _, _ in STAGES]
    idx = order.index(stage)
    if idx > 0:
        inputs["previous"] = manifest.outputs(order[idx - 1])
    return inputs


def run_pipeline(config: dict, resume: bool = False, only: str | None = None) -> int:
    out = Path(config["paths"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out / "manifest.json")
    manifest.data["config"] = config
    manifest.save()
    for name, fn, _ in STAGES:
        if only and name != only:
            continue
        inputs = _stage_inputs(name, config, manifest)
        if resume and manifest.can_skip(name, inputs, config):
            print(f"[{name}] up to date, skipped")
            continue
        started = time.time()
        try:
            artifacts = fn(config, out)
        except (ConfigError, cat.CatalogError, cs.ClickstreamError, FileNotFoundError):
            raise
        except Exception as exc:
            raise StageError(f"stage {name} failed: {exc}") from exc
        manifest.record(name, inputs, artifacts, config)
        print(f"[{name}] done in {time.time() - started:.1f}s "
              f"({len(artifacts)} artifacts)")
    return 0


# ---------------------------------------------------------------- report


def _print_table(title: str, path: Path) -> None:
    print(f"\n== {title} ==")
    rows = read_csv_rows(path)
    if not rows:
        print("(empty)")
        return
    cols = list(rows[0])
    def fmt_cell(v):
        try:
            f = float(v)
        except (TypeError, ValueError):
            return str(v)
        if f == int(f) and abs(f) < 1e6:
            return str(int(f))
        return f"{f:.3f}"
    widths = {
        c: max(len(c), *(len(fmt_cell(r[c])) for r in rows)) for c in cols
    }
    print("  ".join(c.rjust(widths[c]) for c in cols))
    for r in rows:
        print("  ".join(fmt_cell(r[c]).rjust(widths[c]) for c in cols))


def cmd_report(args) -> int:
    out = Path(args.out)
    manifest_path = out / "manifest.json"
    if not manifest_path.exists():
        print(f"no manifest at {manifest_path}; run the pipeline first")
        return 2
    manifest = Manifest(manifest_path)
    tables = [
        ("cluster", "Silhouette by number of clusters", "cluster/silhouette_vs_k.csv"),
        ("estimate", "Out-of-sample fit grid", "estimate/fit_grid.csv"),
        ("recode", "Observed recommendation matrix", None),
        ("solve", "Planned recommendation matrix (averaged)", "solve/rec_matrix.csv"),
        ("solve", "Recommended clusters by step", "solve/per_t_distribution.csv"),
        ("solve", "Slate concentration by step", "solve/concentration.csv"),
        ("counterfactual", "Scenario profits (status quo = 100)",
         "counterfactual/results.csv"),
    ]
    missing = []
    for stage, title, rel in tables:
        if stage not in manifest.data["stages"]:
            missing.append(stage)
            continue
        if rel is None:
            with open(out / "select" / "selection.json", encoding="utf-8") as fh:
                k = json.load(fh)["k"]
            rel = f"recode/status_quo_k{k}.csv"
        path = out / rel
        if path.exists():
            _print_table(title, path)
    if missing:
        stages = ", ".join(sorted(set(missing)))
        print(f"\nmissing stages: {stages}; run `searchrec pipeline` "
              f"(or the individual subcommands) to produce them")
    return 0


def cmd_solve_standalone(args) -> int:
    """Solve directly from a policy file and a margins CSV."""
    if not args.margins:
        raise ConfigError("standalone solve requires --margins")
    if not args.out:
        raise ConfigError("standalone solve requires --out for the value table")
    policy = load_policy_file(Path(args.policy))
    margins = _read_vector(Path(args.margins), "margin")
    k = margins.shape[0]
    if k != policy.k:
        raise ConfigError(
            f"margins have {k} clusters but the policy expects {policy.k}"
        )
    horizon = args.horizon or policy.horizon
    grid = args.grid or DEFAULT_CONFIG["dp"]["grid"]
    if args.first_click:
        first_click = _read_vector(Path(args.first_click), "share")
    else:
        first_click = np.full(k, 1.0 / k)
    lattice = SimplexLattice(k, grid)
    table = dp.bellman_solve(policy, margins, lattice, horizon)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dp.save_value_table(table, out)
    value = table.initial_value(first_click)
    print(f"solved K={k} G={grid} T={horizon}; expected profit from the "
          f"first-click distribution: {value:.6f}")
    print(f"wrote {out}")
    if args.report:
        summary = dp.summarize_policy(table)
        base = out.parent
        write_csv(
            base / "rec_matrix.csv",
            ["cluster"] + [str(j + 1) for j in range(k)],
            [[i + 1] + [_fmt(v) for v in summary["matrix"][i]] for i in range(k)],
        )
        write_csv(
            base / "per_t_distribution.csv",
            ["t"] + [str(j + 1) for j in range(k)],
            [[t + 1] + [_fmt(v) for v in summary["per_t"][t]]
             for t in range(summary["per_t"].shape[0])],
        )
        write_csv(
            base / "concentration.csv",
            ["t", "one_cluster", "two_clusters", "three_clusters"],
            [[t + 1] + [_fmt(v) for v in summary["distinct_shares"][t]]
             for t in range(summary["distinct_shares"].shape[0])],
        )
        print(f"wrote diagnostics next to it: rec_matrix.csv, "
              f"per_t_distribution.csv, concentration.csv")
    return 0


def cmd_states(args) -> int:
    lattice = SimplexLattice(args.k, args.grid)
    space = dp.StateSpace(lattice, args.horizon)
    k, s = space.k, space.size
    e = lattice.empty_index
    reach = np.zeros((k, s, s), dtype=bool)
    reach[:, e, e] = True
    rows = [[1, int(reach.sum())]]
    for t in range(1, args.horizon):
        alpha, rho = space.maps(t)
        nxt = np.zeros_like(reach)
        for j in range(space.n_act):
            iR2 = rho[:, j]
            src = np.argwhere(reach)
            nxt[:, alpha[src[:, 0], src[:, 1]][:, None],
                iR2[src[:, 2]][:, None]] = True
        reach = nxt
        rows.append([t + 1, int(reach.sum())])
    if args.out:
        write_csv(Path(args.out), ["t", "reachable_states"], rows)
        print(f"wrote {args.out}")
    else:
        for t, n in rows:
            print(f"t={t}: {n}")
    return 0


# ---------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="searchrec",
        description="search-aware cold-start recommendation engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize catalog and clickstream")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=4000, help="number of sessions")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--truth", help="world JSON (defaults to the calibrated world)")
    g.add_argument("--k", type=int, default=4)
    g.add_argument("--horizon", type=int, default=22)
    g.add_argument("--catalog-scale", type=float, default=0.25)

    def add_pipeline_args(p, seed_required):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--catalog")
        p.add_argument("--clicks")
        p.add_argument("--out")
        p.add_argument("--seed", type=int, required=seed_required)

    p = sub.add_parser("pipeline", help="run all stages")
    add_pipeline_args(p, seed_required=True)
    p.add_argument("--resume", action="store_true")

    for name, help_text, extra in [
        ("cluster", "normalize and sweep K", ["--k-min", "--k-max", "--dump-normalized"]),
        ("recode", "recode streams to cluster level", []),
        ("estimate", "fit the policy grid", ["--methods", "--holdout"]),
        ("select", "select and refit the policy", []),
        ("solve", "backward induction and diagnostics", ["--horizon", "--grid"]),
        ("counterfactual", "scenario suite", ["--scenarios", "--boot", "--n-jobs"]),
    ]:
        p = sub.add_parser(name, help=help_text)
        add_pipeline_args(p, seed_required=False)
        if "--k-min" in extra:
            p.add_argument("--k-min", type=int)
            p.add_argument("--k-max", type=int)
            p.add_argument("--dump-normalized", action="store_true")
        if "--methods" in extra:
            p.add_argument("--methods", help="comma list: logit,forest,boost")
            p.add_argument("--method", choices=["logit", "forest", "boost"],
                           help="single estimator (alias for --methods)")
            p.add_argument("--k", type=int, help="restrict the grid to one K")
            p.add_argument("--holdout", type=float)
        if "--horizon" in extra:
            p.add_argument("--horizon", type=int)
            p.add_argument("--grid", type=int)
            p.add_argument("--policy", help="standalone mode: policy JSON; "
                           "--out then names the value-table file")
            p.add_argument("--margins", help="standalone mode: margins CSV")
            p.add_argument("--first-click", help="standalone mode: first-click CSV")
            p.add_argument("--report", action="store_true",
                           help="standalone mode: write diagnostics CSVs")
        if "--scenarios" in extra:
            p.add_argument("--scenarios", help='"all" or comma list')
            p.add_argument("--boot", type=int)
            p.add_argument("--n-jobs", type=int)

    r = sub.add_parser("report", help="render tables from a manifest")
    r.add_argument("--out", required=True, help="pipeline output directory")

    st = sub.add_parser("states", help="reachable-state counts per step")
    st.add_argument("--k", type=int, required=True)
    st.add_argument("--grid", type=int, required=True)
    st.add_argument("--horizon", type=int, required=True)
    st.add_argument("--out")
    return parser


def _overrides_from_args(args) -> dict:
    over: dict = {"paths": {}}
    if getattr(args, "catalog", None):
        over["paths"]["catalog"] = args.catalog
    if getattr(args, "clicks", None):
        over["paths"]["clicks"] = args.clicks
    out = getattr(args, "out", None) or os.environ.get(OUT_ROOT_ENV)
    if out:
        over["paths"]["out"] = out
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "k_min", None) is not None:
        over.setdefault("clustering", {})["k_min"] = args.k_min
    if getattr(args, "k_max", None) is not None:
        over.setdefault("clustering", {})["k_max"] = args.k_max
    if getattr(args, "dump_normalized", False):
        over["dump_normalized"] = True
    if getattr(args, "methods", None):
        over.setdefault("estimation", {})["methods"] = [
            m.strip() for m in args.methods.split(",") if m.strip()
        ]
    if getattr(args, "method", None):
        over.setdefault("estimation", {})["methods"] = [args.method]
    if getattr(args, "k", None) is not None:
        over.setdefault("estimation", {})["k_only"] = args.k
    if getattr(args, "holdout", None) is not None:
        over.setdefault("estimation", {})["holdout"] = args.holdout
    if getattr(args, "horizon", None) is not None:
        over.setdefault("dp", {})["horizon"] = args.horizon
    if getattr(args, "grid", None) is not None:
        over.setdefault("dp", {})["grid"] = args.grid
    if getattr(args, "scenarios", None):
        over.setdefault("counterfactual", {})["scenarios"] = args.scenarios
    if getattr(args, "boot", None) is not None:
        over.setdefault("counterfactual", {})["bootstrap_b"] = args.boot
    if getattr(args, "n_jobs", None) is not None:
        over.setdefault("counterfactual", {})["n_jobs"] = args.n_jobs
    return over


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "generate":
            return cmd_generate(args)
        if args.command == "report":
            return cmd_report(args)
        if args.command == "states":
            return cmd_states(args)
        if args.command == "solve" and getattr(args, "policy", None):
            return cmd_solve_standalone(args)
        config = load_config(getattr(args, "config", None), _overrides_from_args(args))
        if args.command == "pipeline":
            return run_pipeline(config, resume=args.resume)
        return run_pipeline(config, resume=False, only=args.command)
    except (ConfigError, cat.CatalogError, cs.ClickstreamError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
