"""Command-line entry point: ``rdgcl <verb> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError, ExperimentSpec
from .data import holdout_split
from .evaluation import dirichlet_energy, evaluate, spectral_check
from .experiment import build_report, child_rng, load_data, run_robustness, run_sweep, run_train
from .graph import GraphError, build_interactions, build_normalized_adjacency, build_splits, read_interaction_file
from .trainer import GraphOperators, propagate

log = logging.getLogger("rdgcl")


def toy_paths() -> tuple[str, str]:
    root = resources.files("rdgcl") / "toy"
    return str(root / "train.tsv"), str(root / "test.tsv")


def _add_spec_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config file (INI sections)")
    p.add_argument("--train", dest="train_path")
    p.add_argument("--test", dest="test_path")
    p.add_argument("--valid", dest="valid_path")
    p.add_argument("--output", dest="output_dir")
    p.add_argument("--toy", action="store_true", help="use the bundled toy dataset")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=lambda s: tuple(int(x) for x in s.split(",")), help="comma-separated seeds")
    p.add_argument("--variant")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--terminal-time", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--noise-ratio", type=float, action="append", dest="noise_ratios")


def spec_from_args(args) -> ExperimentSpec:
    spec = cfgmod.load(args.config) if args.config else ExperimentSpec()
    if args.toy:
        tr, te = toy_paths()
        spec = replace(spec, train_path=tr, test_path=te)
    for attr in ("train_path", "test_path", "valid_path", "output_dir"):
        if getattr(args, attr, None):
            spec = replace(spec, **{attr: getattr(args, attr)})
    t = spec.train
    train_kw = {k: getattr(args, a) for k, a in (("seed", "seed"), ("variant", "variant"), ("epochs", "epochs"),
                                                   ("batch_size", "batch_size"), ("lr", "lr"))
                if getattr(args, a) is not None}
    rdg_kw = {k: getattr(args, k) for k in ("alpha", "steps", "terminal_time", "dim") if getattr(args, k) is not None}
    cl_kw = {k: getattr(args, k) for k in ("tau", "lambda1", "lambda2") if getattr(args, k) is not None}
    try:
        t = replace(t, rdg=replace(t.rdg, **rdg_kw), cl=replace(t.cl, **cl_kw), **train_kw)
        spec = replace(spec, train=t)
        if args.seeds:
            spec = replace(spec, seeds=args.seeds)
        if args.noise_ratios:
            spec = replace(spec, noise_ratios=tuple(args.noise_ratios))
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return spec


def cmd_ingest(args) -> int:
    train_r = read_interaction_file(args.train)
    others = [read_interaction_file(p) for p in args.extra]
    sets = build_splits(train_r, *others)
    out = {}
    for label, s in zip(["train", *args.extra], sets):
        out[label] = {"users": s.num_users, "items": s.num_items, "pairs": len(s),
                      "density": len(s) / (s.num_users * s.num_items)}
    if args.output:
        d = Path(args.output)
        d.mkdir(parents=True, exist_ok=True)
        (d / "users.tsv").write_text("".join(f"{i}\t{u}\n" for i, u in enumerate(sets[0].user_ids)), encoding="utf-8")
        (d / "items.tsv").write_text("".join(f"{i}\t{v}\n" for i, v in enumerate(sets[0].item_ids)), encoding="utf-8")
        (d / "stats.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    spec = spec_from_args(args)
    Path(spec.output_dir).mkdir(parents=True, exist_ok=True)
    for res in run_train(spec):
        m = res["metrics"]
        print(f"{res['dir']}: " + " ".join(f"{k}={m[k]:.4f}" for k in m if k.startswith(("recall@", "ndcg@"))))
    return 0


def cmd_evaluate(args) -> int:
    run_dir = Path(args.run_dir)
    spec = cfgmod.load(run_dir / "config.ini")
    if args.test:
        spec = replace(spec, test_path=args.test)
    spec.validate_paths()
    train, test, _ = load_data(spec)
    e0 = np.load(run_dir / "embeddings.npy")
    fit_train = train
    if spec.valid_frac > 0 and not spec.valid_path:
        fit_train, _ = holdout_split(train, spec.valid_frac, child_rng(spec.train.seed, 1))
    ops = GraphOperators.build(fit_train, spec.train.dtype)
    if e0.shape[0] != ops.adj.dim:
        raise GraphError(f"embedding table has {e0.shape[0]} rows, graph has {ops.adj.dim} nodes")
    trace = propagate(e0, ops, spec.train)
    energy = [dirichlet_energy(e, ops.lap) for e in (*trace.states, trace.final)]
    report = evaluate(trace.final, train, test, spec.ks, energy)
    text = report.to_json()
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_sweep(args) -> int:
    spec = spec_from_args(args)
    if args.grid:
        grid = []
        for item in args.grid:
            key, _, values = item.partition("=")
            parsed = cfgmod.parse(f"[sweep]\n{key} = {values}\n").sweep
            grid.extend(parsed)
        spec = replace(spec, sweep=tuple(grid))
    path = run_sweep(spec, workers=args.workers)
    print(path)
    return 0


def cmd_robustness(args) -> int:
    spec = spec_from_args(args)
    print(run_robustness(spec))
    return 0


def cmd_report(args) -> int:
    out = args.output or args.results_dir
    summary = build_report(args.results_dir, out)
    print(f"{len(summary['runs'])} run-metric rows, {len(summary['effect_sizes'])} effect sizes -> {out}")
    return 0


def cmd_spectral(args) -> int:
    if args.train:
        inter = build_interactions(read_interaction_file(args.train))
    else:
        rng = np.random.default_rng(args.seed)
        nu = args.random_nodes // 2
        ni = args.random_nodes - nu
        pairs = {(int(u), int(v)) for u, v in zip(rng.integers(0, nu, 3 * nu), rng.integers(0, ni, 3 * nu))}
        inter = build_interactions([(f"u{u}", f"i{v}") for u, v in sorted(pairs)])
    report = spectral_check(build_normalized_adjacency(inter))
    d = report.to_dict()
    d.pop("eigenvalues")
    print(json.dumps(d, indent=2, sort_keys=True))
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdgcl", description="Reaction-diffusion graph contrastive recommender")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("ingest", help="validate interaction files and print catalog statistics")
    p.add_argument("train")
    p.add_argument("extra", nargs="*", help="further splits sharing the catalog (test, valid)")
    p.add_argument("--output")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train and evaluate one configuration (per seed)")
    _add_spec_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="re-evaluate a finished run directory")
    p.add_argument("run_dir")
    p.add_argument("--test")
    p.add_argument("--output")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="grid search")
    _add_spec_args(p)
    p.add_argument("--grid", action="append", help="e.g. alpha=0.1,0.2,0.3 (repeatable)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("robustness", help="noise-injection runs, one row per ratio")
    _add_spec_args(p)
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("report", help="consolidate run directories, with Cohen's d between run groups")
    p.add_argument("results_dir")
    p.add_argument("--output")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("spectral-check", help="verify the 2A - A^2 filter action on a small graph")
    p.add_argument("--train", help="interaction file (N <= 256)")
    p.add_argument("--random-nodes", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_spectral)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, GraphError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
