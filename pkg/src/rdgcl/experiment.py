"""Run orchestration: single runs, sweeps, noise robustness and cross-run reports."""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ExperimentSpec
from .data import holdout_split
from .evaluation import cohens_d, dirichlet_energy, effect_label, evaluate, inject_noise
from .graph import InteractionSet, build_splits, read_interaction_file
from .trainer import GraphOperators, fit, propagate

log = logging.getLogger(__name__)


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def child_rng(seed: int, stream: int) -> np.random.Generator:
    """Independent generator derived from the root seed."""
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


def load_data(spec: ExperimentSpec) -> tuple[InteractionSet, InteractionSet, InteractionSet | None]:
    train_r = read_interaction_file(spec.train_path)
    test_r = read_interaction_file(spec.test_path)
    if spec.valid_path:
        train, test, valid = build_splits(train_r, test_r, read_interaction_file(spec.valid_path))
        return train, test, valid
    train, test = build_splits(train_r, test_r)
    return train, test, None


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def run_label(spec: ExperimentSpec) -> dict:
    t = spec.train
    return {"name": spec.name, "seed": t.seed, "variant": t.variant, "alpha": t.rdg.alpha,
            "steps": t.rdg.steps, "terminal_time": t.rdg.terminal_time, "dim": t.rdg.dim, "lr": t.lr,
            "tau": t.cl.tau, "lambda1": t.cl.lambda1, "lambda2": t.cl.lambda2}


def train_and_evaluate(spec: ExperimentSpec, out_dir: str | Path, train: InteractionSet, test: InteractionSet,
                       valid: InteractionSet | None = None, extra: dict | None = None) -> dict:
    """Fit one model, evaluate it, and write the run's artifacts into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = spec.train.seed
    fit_train = train
    if valid is None and spec.valid_frac > 0:
        fit_train, valid = holdout_split(train, spec.valid_frac, child_rng(seed, 1))
    ops = GraphOperators.build(fit_train, spec.train.dtype)
    result = fit(spec.train, fit_train, valid, log_path=out / "epochs.csv", ops=ops)
    trace = propagate(result.embeddings, ops, spec.train)
    energy = [dirichlet_energy(e, ops.lap) for e in (*trace.states, trace.final)]
    # rank against the full train log so held-out validation pairs stay masked
    report = evaluate(trace.final, train, test, spec.ks, energy)
    if not spec.group_analysis:
        report.item_group_recall.clear()
        report.user_group_recall.clear()

    run = run_label(spec)
    if extra:
        run.update(extra)
    payload = {"run": run, "best_epoch": result.best_epoch, "epochs_run": len(result.history),
               "metrics": report.to_dict()}
    _dump_json(out / "metrics.json", payload)
    flat = report.flat()
    _write_rows(out / "metrics.csv", ("metric", "value"), [(k, repr(v)) for k, v in flat.items()])
    _write_rows(out / "energy.csv", ("step", "dirichlet_energy"), [(i, repr(v)) for i, v in enumerate(energy)])
    group_rows = []
    for k in report.ks:
        group_rows += [("item", k, g, repr(v)) for g, v in enumerate(report.item_group_recall.get(k, []))]
        group_rows += [("user", k, g, repr(v)) for g, v in enumerate(report.user_group_recall.get(k, []))]
    _write_rows(out / "groups.csv", ("kind", "k", "group", "recall"), group_rows)
    np.save(out / "embeddings.npy", result.embeddings)
    (out / "config.ini").write_text(cfgmod.serialize(spec), encoding="utf-8")
    files = ["config.ini", "metrics.json", "metrics.csv", "energy.csv", "groups.csv", "epochs.csv",
             "embeddings.npy"]
    write_manifest(out, spec, files)
    return {"run": run, "metrics": flat, "dir": str(out)}


def write_manifest(out: Path, spec: ExperimentSpec, files) -> None:
    lines = [f"name: {spec.name}", f"seed: {spec.train.seed}"]
    for label, p in (("train", spec.train_path), ("test", spec.test_path), ("valid", spec.valid_path)):
        if p:
            lines.append(f"input {label}: {p} sha256={file_digest(p)}")
    lines += [f"output: {f}" for f in files]
    lines += ["config:", *("  " + ln for ln in cfgmod.serialize(spec).splitlines() if ln.strip())]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_train(spec: ExperimentSpec) -> list[dict]:
    spec.validate_paths()
    train, test, valid = load_data(spec)
    results = []
    for seed in spec.run_seeds:
        s = replace(spec, train=replace(spec.train, seed=seed))
        results.append(train_and_evaluate(s, Path(spec.output_dir) / f"seed_{seed}", train, test, valid))
    return results


def sweep_cells(spec: ExperimentSpec) -> list[dict]:
    keys = [k for k, _ in spec.sweep]
    return [dict(zip(keys, combo)) for combo in itertools.product(*(v for _, v in spec.sweep))]


def _cell_name(cell: dict) -> str:
    return ",".join(f"{k}={v}" for k, v in cell.items()) or "base"


def _run_cell(args):
    spec, cell, seed, out_dir = args
    for k, v in cell.items():
        spec = spec.with_param(k, v)
    spec = replace(spec, name=f"{spec.name}[{_cell_name(cell)}]", train=replace(spec.train, seed=seed))
    train, test, valid = load_data(spec)
    return cell, train_and_evaluate(spec, out_dir, train, test, valid, extra={"cell": _cell_name(cell)})


def run_sweep(spec: ExperimentSpec, workers: int = 1) -> Path:
    """Train every grid cell for every seed; write sweep.csv with one row per cell (seed means)."""
    if not spec.sweep:
        raise cfgmod.ConfigError("sweep mode needs a non-empty [sweep] section")
    spec.validate_paths()
    root = Path(spec.output_dir)
    jobs = [(spec, cell, seed, root / "sweep" / _cell_name(cell) / f"seed_{seed}")
            for cell in sweep_cells(spec) for seed in spec.run_seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            outcomes = list(pool.map(_run_cell, jobs))
    else:
        outcomes = [_run_cell(j) for j in jobs]

    keys = [k for k, _ in spec.sweep]
    by_cell: dict[str, list] = {}
    cells: dict[str, dict] = {}
    for cell, res in outcomes:
        by_cell.setdefault(_cell_name(cell), []).append(res["metrics"])
        cells[_cell_name(cell)] = cell
    metric_names = sorted(next(iter(by_cell.values()))[0])
    rows = []
    for name, ms in by_cell.items():
        rows.append([cells[name][k] for k in keys] + [len(ms)]
                    + [repr(float(np.mean([m[n] for m in ms]))) for n in metric_names])
    _write_rows(root / "sweep.csv", keys + ["n_seeds"] + metric_names, rows)
    return root / "sweep.csv"


def run_robustness(spec: ExperimentSpec) -> Path:
    """Train on noise-injected copies of the train set; robustness.csv has one row per ratio."""
    if not spec.noise_ratios:
        raise cfgmod.ConfigError("robustness mode needs at least one noise ratio")
    spec.validate_paths()
    train, test, valid = load_data(spec)
    root = Path(spec.output_dir)
    rows = []
    for ratio in spec.noise_ratios:
        runs = []
        for seed in spec.run_seeds:
            s = replace(spec, name=f"{spec.name}[noise={ratio}]", train=replace(spec.train, seed=seed))
            noisy = inject_noise(train, ratio, child_rng(seed, 2)) if ratio else train
            n_noise = len(noisy) - len(train)
            runs.append(train_and_evaluate(s, root / "robustness" / f"noise_{ratio}" / f"seed_{seed}", noisy, test,
                                           valid, extra={"noise_ratio": ratio, "noise_pairs": n_noise})["metrics"])
        names = sorted(runs[0])
        rows.append([repr(ratio), n_noise, len(runs)] + [repr(float(np.mean([m[n] for m in runs]))) for n in names])
    _write_rows(root / "robustness.csv", ["noise_ratio", "noise_pairs", "n_seeds"] + names, rows)
    return root / "robustness.csv"


def collect_results(results_dir: str | Path) -> list[tuple[Path, dict]]:
    found = []
    for path in sorted(Path(results_dir).rglob("metrics.json")):
        found.append((path, json.loads(path.read_text(encoding="utf-8"))))
    if not found:
        raise FileNotFoundError(f"no metrics.json under {results_dir}")
    return found


def _flatten(payload: dict) -> dict[str, float]:
    m = payload["metrics"]
    out = {}
    for key in ("recall", "ndcg", "coverage", "novelty", "h_rc", "h_rn"):
        for k, v in m[key].items():
            out[f"{key}@{k}"] = v
    for key, prefix in (("item_group_recall", "item_group"), ("user_group_recall", "user_group")):
        for k, vals in m.get(key, {}).items():
            for g, v in enumerate(vals):
                out[f"{prefix}{g}_recall@{k}"] = v
    for i, v in enumerate(m.get("dirichlet_energy", [])):
        out[f"dirichlet_energy_t{i}"] = v
    return out


def build_report(results_dir: str | Path, out_dir: str | Path | None = None) -> dict:
    """Consolidate every run under ``results_dir``; effect sizes between run-name groups."""
    runs = collect_results(results_dir)
    flats = [(p, payload, _flatten(payload)) for p, payload in runs]
    schema = set(flats[0][2])
    bad = [str(p) for p, _, f in flats if set(f) != schema]
    if bad:
        raise ValueError("mixed metric schemas; offending files: " + ", ".join(bad))

    rows = []
    wide = []
    groups: dict[str, list[dict]] = {}
    for p, payload, flat in flats:
        run = payload["run"]
        run_id = str(p.parent.relative_to(results_dir)) if p.parent != Path(results_dir) else "."
        for metric in sorted(flat):
            rows.append((run_id, run["name"], run["seed"], metric, flat[metric]))
        wide.append([run_id, run["name"], run["seed"]] + [repr(flat[m]) for m in sorted(schema)])
        groups.setdefault(run["name"], []).append(flat)

    effects = []
    names = sorted(groups)
    for a, b in itertools.combinations(names, 2):
        if len(groups[a]) < 2 or len(groups[b]) < 2:
            continue
        for metric in sorted(schema):
            try:
                d = cohens_d([f[metric] for f in groups[a]], [f[metric] for f in groups[b]])
            except ZeroDivisionError:
                effects.append((a, b, metric, float("nan"), "undefined"))
                continue
            effects.append((a, b, metric, d, effect_label(d)))

    summary = {"runs": [{"run": r[0], "name": r[1], "seed": r[2], "metric": r[3], "value": r[4]} for r in rows],
               "effect_sizes": [{"group_a": e[0], "group_b": e[1], "metric": e[2], "d": e[3], "label": e[4]}
                                for e in effects]}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_rows(out / "summary.csv", ("run", "name", "seed", "metric", "value"),
                    [(r[0], r[1], r[2], r[3], repr(r[4])) for r in rows])
        _write_rows(out / "runs.csv", ["run", "name", "seed"] + sorted(schema), wide)
        _write_rows(out / "effect_sizes.csv", ("group_a", "group_b", "metric", "cohens_d", "label"),
                    [(e[0], e[1], e[2], repr(e[3]), e[4]) for e in effects])
        _dump_json(out / "summary.json", summary)
    return summary
