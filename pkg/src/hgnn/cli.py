"""Command-line interface: synth | encode | tune | train | grid | report.

Every tuning flag can also be set through an HGNN_-prefixed environment
variable (e.g. HGNN_TRIALS=50); explicit flags win.

Exit codes: 2 schema/parse errors, 3 all trials failed or training diverged,
4 grid finished with zero completed cells.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import eventlog
from .eventlog import (
    BinningPolicy,
    EncodedDataset,
    LogSchema,
    RowParseError,
    SchemaError,
    encode_dataset,
    generate_synthetic_log,
    parse_log,
    write_log_csv,
)
from .hpo import RankingPolicy, StudyConfig, StudyError, run_study
from .models import ARCHITECTURES, build_model
from .operators import OPERATOR_KINDS
from .reporting import (
    config_text_dump,
    read_grid_csv,
    write_figures,
    write_grid_csv,
)
from .training import TrainingDiverged, TrialConfig, evaluate, train

ARCH_ALIASES = {
    "one": "one_level",
    "two": "two_level",
    "two-pseudo": "two_level_pseudo",
    "two-embed": "two_level_embedding",
}


def _env(name, default=None):
    return os.environ.get("HGNN_" + name.upper(), default)


def _env_int(name, default):
    raw = _env(name)
    return int(raw) if raw is not None else default


def _resolve_arch(value):
    arch = ARCH_ALIASES.get(value, value)
    if arch not in ARCHITECTURES:
        raise SystemExit(f"unknown architecture {value!r}; use one of "
                         f"{sorted(ARCH_ALIASES)} or {list(ARCHITECTURES)}")
    return arch


def _add_common_tuning_flags(p):
    p.add_argument("--trials", type=int, default=_env_int("trials", 200))
    p.add_argument("--epochs", type=int, default=_env_int("epochs", 300))
    p.add_argument("--patience", type=int, default=_env_int("patience", 30))
    p.add_argument("--seed", type=int, default=_env_int("seed", 0))
    p.add_argument("--policy", choices=["balanced", "imbalanced"],
                   default=_env("policy", "balanced"))
    p.add_argument("--workers", type=int, default=_env_int("workers", 1))


def build_parser():
    parser = argparse.ArgumentParser(prog="hgnn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic event log + schema")
    p.add_argument("--cases", type=int, default=200)
    p.add_argument("--activities", type=int, default=8)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--ratio", type=float, default=1.0)
    p.add_argument("--rule", choices=list(eventlog.RULES), default="presence_of_activity")
    p.add_argument("--seed", type=int, default=_env_int("seed", 0))
    p.add_argument("--out", default=_env("out", "."))

    p = sub.add_parser("encode", help="encode a CSV log into the cached dataset")
    p.add_argument("--data", required=True, help="event log CSV")
    p.add_argument("--schema", required=True, help="schema JSON")
    p.add_argument("--bins", help="binning policy JSON (default: '< 5' + 4 quantile bins)")
    p.add_argument("--out", default=_env("out", "encoded.json"))
    p.add_argument("--seed", type=int, default=_env_int("seed", 0))
    p.add_argument("--split", type=float, default=0.8)
    p.add_argument("--no-stratify", action="store_true")
    p.add_argument("--stats", action="store_true", help="print the class distribution")

    p = sub.add_parser("tune", help="run one study for an (architecture, operator) pair")
    p.add_argument("--data", required=True, help="encoded dataset JSON")
    p.add_argument("--arch", required=True)
    p.add_argument("--op", required=True, choices=list(OPERATOR_KINDS))
    p.add_argument("--out", default=_env("out", "study"))
    p.add_argument("--resume", action="store_true")
    _add_common_tuning_flags(p)

    p = sub.add_parser("train", help="train a saved configuration end to end")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True, help="TrialConfig JSON (a study winner)")
    p.add_argument("--epochs", type=int, default=_env_int("epochs", 300))
    p.add_argument("--seed", type=int, default=_env_int("seed", 0))
    p.add_argument("--out", default=_env("out", "metrics.json"))

    p = sub.add_parser("grid", help="run all 24 (architecture, operator) studies")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=_env("out", "grid"))
    p.add_argument("--total-budget", type=int,
                   help="divide this many trials evenly over the 24 cells")
    _add_common_tuning_flags(p)

    p = sub.add_parser("report", help="regenerate figures from an existing grid CSV")
    p.add_argument("--grid-csv", required=True)
    p.add_argument("--out", default=_env("out", "."))
    p.add_argument("--policy", choices=["balanced", "imbalanced"],
                   default=_env("policy", "balanced"))
    return parser


# -- commands ---------------------------------------------------------------------


def cmd_synth(args):
    traces, schema = generate_synthetic_log(
        n_cases=args.cases, n_activities=args.activities, n_classes=args.classes,
        imbalance_ratio=args.ratio, rule=args.rule, seed=args.seed,
    )
    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "log.csv")
    schema_path = os.path.join(args.out, "schema.json")
    write_log_csv(traces, schema, log_path)
    with open(schema_path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_json_dict(), fh, indent=2, sort_keys=True)
    print(f"wrote {log_path} ({sum(len(t.events) for t in traces)} events, "
          f"{len(traces)} cases) and {schema_path}")
    return 0


def _load_policy_file(path):
    if not path:
        return BinningPolicy()
    with open(path, "r", encoding="utf-8") as fh:
        return BinningPolicy.from_json_dict(json.load(fh))


def cmd_encode(args):
    try:
        with open(args.schema, "r", encoding="utf-8") as fh:
            schema = LogSchema.from_json_dict(json.load(fh))
        policy = _load_policy_file(args.bins)
        traces = parse_log(args.data, schema)
        dataset = encode_dataset(
            traces, schema, policy,
            fraction=args.split, stratified=not args.no_stratify, seed=args.seed,
        )
    except (SchemaError, RowParseError) as exc:
        print(f"encode error: {exc}", file=sys.stderr)
        return 2
    dataset.save(args.out)
    dims = dataset.dims
    print(f"encoded {len(dataset.train)} train / {len(dataset.val)} validation graphs -> {args.out}")
    print("dims: " + " ".join(f"{k}={v}" for k, v in sorted(dims.items())))
    if args.stats:
        counts = np.bincount(
            [g.label for g in dataset.train + dataset.val], minlength=dims["n_classes"]
        )
        total = counts.sum()
        for i, name in enumerate(dataset.state.label_vocab):
            print(f"class {name}: {counts[i]} ({counts[i] / total:.1%})")
    return 0


def _study_config(args, policy_name=None):
    return StudyConfig(
        n_trials=args.trials,
        max_epochs=args.epochs,
        patience=args.patience,
        seed=args.seed,
        policy=RankingPolicy.named(policy_name or args.policy),
        workers=args.workers,
    )


def _write_study_artifacts(out_dir, result, dims, policy):
    with open(os.path.join(out_dir, "best_config.json"), "w", encoding="utf-8") as fh:
        json.dump(result.best_config.to_json_dict(), fh, indent=2, sort_keys=True)
    summary = {
        "best_epoch": result.retrained_best_epoch,
        "accuracy": result.retrained_metrics.accuracy,
        "weighted_f1": result.retrained_metrics.weighted_f1,
        "mean_loss": result.retrained_metrics.mean_loss,
        "loss_std": result.retrained_metrics.loss_std,
    }
    with open(os.path.join(out_dir, "best_config.txt"), "w", encoding="utf-8") as fh:
        fh.write(config_text_dump(result.best_config, dims, summary))
    with open(os.path.join(out_dir, "metrics.json"), "w", encoding="utf-8") as fh:
        json.dump({
            "policy": policy.primary,
            "best_trial": result.best_trial_index,
            "tuned": result.tuned_metrics.to_json_dict(),
            "retrained": result.retrained_metrics.to_json_dict(),
        }, fh, indent=2, sort_keys=True)


def cmd_tune(args):
    dataset = EncodedDataset.load(args.data)
    arch = _resolve_arch(args.arch)
    config = _study_config(args)
    os.makedirs(args.out, exist_ok=True)
    trials_path = os.path.join(args.out, "trials.jsonl")
    if not args.resume and os.path.exists(trials_path):
        os.remove(trials_path)
    try:
        result = run_study(
            (dataset.train, dataset.val, dataset.dims), arch, args.op, config,
            out_path=trials_path, resume=args.resume,
        )
    except StudyError as exc:
        print(f"study failed: {exc}", file=sys.stderr)
        return 3
    _write_study_artifacts(args.out, result, dataset.dims, config.policy)
    m = result.retrained_metrics
    print(f"best trial {result.best_trial_index}: retrained accuracy={m.accuracy:.4f} "
          f"weighted_f1={m.weighted_f1:.4f} loss={m.mean_loss:.4f}")
    return 0


def cmd_train(args):
    dataset = EncodedDataset.load(args.data)
    with open(args.config, "r", encoding="utf-8") as fh:
        trial_config = TrialConfig.from_json_dict(json.load(fh))
    model = build_model(trial_config.model, dataset.dims, seed=args.seed)
    outcome = train(
        model, dataset.train, dataset.val, trial_config,
        max_epochs=args.epochs, patience=None, seed=args.seed,
    )
    if outcome.status != "complete":
        print("training diverged (non-finite loss)", file=sys.stderr)
        return 3
    metrics = evaluate(model, dataset.val, trial_config.loss)
    doc = metrics.to_json_dict()
    doc["best_epoch"] = outcome.best_epoch
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    print(" ".join(f"{k}={v:.4f}" for k, v in sorted(doc.items())
                   if isinstance(v, float)))
    return 0


_GRID_DATA = {}


def _grid_init(dataset_path):
    _GRID_DATA["dataset"] = EncodedDataset.load(dataset_path)


def _grid_cell(task):
    arch, op, cell_dir, trials, epochs, patience, seed, policy_name = task
    dataset = _GRID_DATA["dataset"]
    os.makedirs(cell_dir, exist_ok=True)
    cell_seed = int(np.random.SeedSequence(
        [seed, ARCHITECTURES.index(arch), OPERATOR_KINDS.index(op)]
    ).generate_state(1)[0])
    config = StudyConfig(
        n_trials=trials, max_epochs=epochs, patience=patience, seed=cell_seed,
        policy=RankingPolicy.named(policy_name), workers=1,
    )
    trials_path = os.path.join(cell_dir, "trials.jsonl")
    if os.path.exists(trials_path):
        os.remove(trials_path)
    try:
        result = run_study((dataset.train, dataset.val, dataset.dims),
                           arch, op, config, out_path=trials_path)
    except StudyError as exc:
        return arch, op, None, str(exc)
    _write_study_artifacts(cell_dir, result, dataset.dims, config.policy)
    return arch, op, result.retrained_metrics.to_json_dict(), None


def cmd_grid(args):
    dataset = EncodedDataset.load(args.data)  # validate early
    del dataset
    trials = args.trials
    if args.total_budget:
        trials = max(1, args.total_budget // (len(ARCHITECTURES) * len(OPERATOR_KINDS)))
    os.makedirs(args.out, exist_ok=True)
    tasks = [
        (arch, op, os.path.join(args.out, "cells", f"{arch}__{op}"),
         trials, args.epochs, args.patience, args.seed, args.policy)
        for arch in ARCHITECTURES for op in OPERATOR_KINDS
    ]

    results = []
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers, initializer=_grid_init,
                                 initargs=(args.data,)) as pool:
            results = list(pool.map(_grid_cell, tasks))
    else:
        _grid_init(args.data)
        for task in tasks:
            results.append(_grid_cell(task))

    from .training import MetricsReport

    cells = {}
    failures = []
    for arch, op, metrics_dict, error in results:
        if metrics_dict is None:
            cells[(arch, op)] = None
            failures.append(f"{arch}/{op}: {error}")
        else:
            cells[(arch, op)] = MetricsReport.from_json_dict(metrics_dict)

    metric = RankingPolicy.named(args.policy).primary
    write_grid_csv(os.path.join(args.out, "grid.csv"), cells)
    write_figures(args.out, cells, metric)
    done = sum(1 for v in cells.values() if v is not None)
    print(f"grid complete: {done}/24 cells, figures in {args.out}")
    for line in failures:
        print(f"cell failed: {line}", file=sys.stderr)
    return 0 if done else 4


def cmd_report(args):
    cells = read_grid_csv(args.grid_csv)
    os.makedirs(args.out, exist_ok=True)
    metric = RankingPolicy.named(args.policy).primary
    paths = write_figures(args.out, cells, metric)
    print("wrote " + ", ".join(paths))
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    handler = {
        "synth": cmd_synth,
        "encode": cmd_encode,
        "tune": cmd_tune,
        "train": cmd_train,
        "grid": cmd_grid,
        "report": cmd_report,
    }[args.command]
    try:
        return handler(args)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
