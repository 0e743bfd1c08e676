"""Command-line entry point: ``jsdmp {train,eval,ablate,gradcheck,synth}``.

Exit codes: 0 success, 1 verification or runtime failure, 2 usage error.
Diagnostics go to stderr as a single ``error[CODE]: message`` line.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .checkpoint import check_compatible, load_checkpoint, save_checkpoint
from .data import edge_homophily, load_dataset, make_splits, synthesize_graph, write_dataset
from .errors import ConfigError, JsdmpError
from .gradcheck import TOLERANCE, run_gradcheck
from .layers import ABLATIONS, DIVERGENCE_MODES
from .models import MODEL_KINDS
from .training import TrainConfig, evaluate, run

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _split_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("splits (used when the dataset has no splits.tsv)")
    g.add_argument("--split", choices=("planetoid", "fractional"), default="planetoid")
    g.add_argument("--split-seed", type=int, default=None, help="defaults to the run seed")
    g.add_argument("--train-per-class", type=int, default=20)
    g.add_argument("--val-size", type=int, default=500)
    g.add_argument("--test-size", type=int, default=1000)


def _train_args(p: argparse.ArgumentParser):
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--patience", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--K", type=int, default=None, help="DMPPRG propagation depth")
    p.add_argument("--divergence-mode", choices=DIVERGENCE_MODES, default="normalized")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jsdmp", description="Divergence-weighted message passing")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a report and checkpoint")
    p.add_argument("--dataset", required=True, help="dataset directory or bundled name (cora)")
    p.add_argument("--model", choices=MODEL_KINDS, default="dmpgcn")
    p.add_argument("--ablation", choices=ABLATIONS, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--latent-seed", type=int, default=None)
    _train_args(p)
    _split_args(p)
    p.add_argument("--out", type=Path, default=None, help="JSON report path")
    p.add_argument("--text-out", type=Path, default=None, help="text report path (default: <out>.txt)")
    p.add_argument("--checkpoint", type=Path, default=None)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")

    p = sub.add_parser("ablate", help="DMPGCN under every ablation mode over several seeds")
    p.add_argument("--dataset", required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", type=Path, default=None, help="table path")
    _train_args(p)
    _split_args(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of every model parameter")
    p.add_argument("--size", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ablation", choices=ABLATIONS, default="full")

    p = sub.add_parser("synth", help="write a synthetic dataset directory")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--features", type=int, default=200)
    p.add_argument("--homophily", type=float, default=0.1)
    p.add_argument("--avg-degree", type=float, default=10.0)
    p.add_argument("--doc-length", type=int, default=40)
    p.add_argument("--topic-share", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", choices=("none", "planetoid", "fractional"), default="none")
    p.add_argument("--gzip", action="store_true")
    return parser


def _split_spec(args, seed: int) -> dict:
    return {
        "policy": args.split,
        "seed": seed if args.split_seed is None else args.split_seed,
        "train_per_class": args.train_per_class,
        "val": args.val_size,
        "test": args.test_size,
    }


def apply_split(ds, spec: dict):
    """Attach the split described by ``spec`` unless the dataset ships its own."""
    if ds.has_splits:
        return ds, {"policy": "file"}
    if spec.get("policy") == "file":
        raise ConfigError("checkpoint was trained on a splits.tsv the dataset no longer has")
    masks = make_splits(
        ds,
        spec["policy"],
        np.random.default_rng(spec["seed"]),
        train_per_class=spec["train_per_class"],
        n_val=spec["val"],
        n_test=spec["test"],
    )
    return ds.with_splits(*masks), spec


def _config(args, model: str, seed: int, ablation=None, latent_seed=None) -> TrainConfig:
    return TrainConfig(
        model=model,
        epochs=args.epochs,
        patience=args.patience,
        lr=args.lr,
        weight_decay=args.weight_decay,
        seed=seed,
        latent_seed=latent_seed,
        ablation=ablation,
        hidden=args.hidden,
        dropout=args.dropout,
        K=args.K,
        divergence_mode=args.divergence_mode,
    )


def cmd_train(args) -> int:
    ds, split = apply_split(load_dataset(args.dataset), _split_spec(args, args.seed))
    config = _config(args, args.model, args.seed, args.ablation, args.latent_seed)
    model, report = run(ds, config)
    if args.out is not None:
        args.out.write_text(report.to_json())
    text_out = args.text_out or (args.out.with_name(args.out.name + ".txt") if args.out else None)
    if text_out is not None:
        text_out.write_text(report.to_text())
    if args.checkpoint is not None:
        save_checkpoint(args.checkpoint, model, extra={"split": split, "model_arg": args.model})
    print(
        f"{args.model} seed={args.seed} test_acc={report.test_acc} test_nmi={report.test_nmi} "
        f"best_epoch={report.best_epoch} best_val_acc={report.best_val_acc} "
        f"epochs={report.epochs_run} seconds={report.wall_seconds:.1f}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    ds = load_dataset(args.dataset)
    model, meta = load_checkpoint(args.checkpoint)
    check_compatible(model, ds.n, ds.n_features, ds.n_classes)
    ds, _ = apply_split(ds, meta["extra"].get("split", {"policy": "file"}))
    acc, score = evaluate(model, ds, ds.mask(args.split))
    print(f"split={args.split} acc={acc} nmi={score}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    if args.seeds < 1:
        raise ConfigError("--seeds must be at least 1")
    base = load_dataset(args.dataset)
    rows = []
    for seed in range(args.seeds):
        ds, _ = apply_split(base, _split_spec(args, seed))
        for mode in ABLATIONS:
            _, report = run(ds, _config(args, "dmpgcn", seed, mode))
            rows.append((mode, seed, report.test_acc))
            print(f"mode={mode} seed={seed} test_acc={report.test_acc}", flush=True)
    table = ablation_table(rows)
    if args.out is not None:
        args.out.write_text(table)
    print(table, end="")
    return EXIT_OK


def ablation_table(rows) -> str:
    """Aggregate ``(mode, seed, acc)`` rows into one ``mode mean std runs`` line per mode."""
    lines = ["mode\tmean_acc\tstd_acc\truns"]
    for mode in ABLATIONS:
        accs = np.array([acc for m, _, acc in rows if m == mode])
        if accs.size:
            lines.append(f"{mode}\t{accs.mean():.6f}\t{accs.std():.6f}\t{accs.size}")
    return "\n".join(lines) + "\n"


def cmd_gradcheck(args) -> int:
    if args.size < 2:
        raise ConfigError("--size must be at least 2")
    rows = run_gradcheck(args.size, args.seed, args.ablation)
    for kind, name, err in rows:
        print(f"{kind}\t{name}\t{err:.3e}")
    failing = [f"{kind}:{name}" for kind, name, err in rows if not err < TOLERANCE]
    worst = max(err for _, _, err in rows)
    if failing:
        print(f"error[E_GRADCHECK]: relative error above {TOLERANCE:g} for {', '.join(failing)}", file=sys.stderr)
        return EXIT_FAIL
    print(f"ok: {len(rows)} parameter groups, max relative error {worst:.3e}")
    return EXIT_OK


def cmd_synth(args) -> int:
    rng = np.random.default_rng(args.seed)
    ds = synthesize_graph(
        args.n,
        args.classes,
        args.features,
        args.homophily,
        args.avg_degree,
        rng,
        doc_length=args.doc_length,
        topic_share=args.topic_share,
        name=args.out.name,
    )
    if args.split != "none":
        ds = ds.with_splits(*make_splits(ds, args.split, rng, n_val=min(500, ds.n // 4), n_test=min(1000, ds.n // 2)))
    write_dataset(ds, args.out, compress=args.gzip)
    s = ds.stats()
    print(
        f"wrote {args.out}: n={s['nodes']} undirected_edges={s['undirected_edges']} D={s['features']} "
        f"C={s['classes']} homophily={edge_homophily(ds.graph, ds.labels):.4f}"
    )
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except JsdmpError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as exc:
        print(f"error[E_IO]: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
