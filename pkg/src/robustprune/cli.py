"""Command-line interface for the pruning pipeline.

Subcommands: pretrain, prune, finetune, run, eval, strategy, sweep.
Exit codes: 0 success, 2 configuration error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .adversary import AttackConfig, evaluate, metrics_to_csv
from .checkpoint import load_checkpoint
from .config import ConfigError, config_from_dict, parse_config_file
from .data import DataFormatError, ingest
from .pipeline import (
    DivergenceError,
    default_eval_attacks,
    load_network,
    run_all,
    stage_finetune,
    stage_pretrain,
    stage_prune,
    sweep,
    weight_histograms,
    write_summary,
)
from .strategies import (
    StrategyTable,
    compare_tables,
    erk_strategy,
    lamp_strategy,
    measure_strategy,
    strategy_flops,
    uniform_strategy,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _add_common(p: argparse.ArgumentParser, seed_required: bool = False) -> None:
    p.add_argument("--config", type=Path, help="flat key-value config file")
    p.add_argument("--seed", type=int, required=seed_required, help="run seed")
    p.add_argument("--out", type=Path, default=Path("runs/out"), help="output directory")
    p.add_argument("--arch", help="mlp-small | conv-small | resnet-tiny")
    p.add_argument("--method", help="harp | rates-only | scores-only")
    p.add_argument("--k-t", type=float, dest="k_t", help="target compression rate")
    p.add_argument("--k-init", type=float, dest="k_init")
    p.add_argument("--gamma-step", type=float, dest="gamma_step")
    p.add_argument("--granularity", choices=["weight", "channel"])
    p.add_argument("--budget", choices=["param-count", "flops"])
    p.add_argument("--epochs-pretrain", type=int)
    p.add_argument("--epochs-prune", type=int)
    p.add_argument("--epochs-finetune", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--attack-step", type=float)
    p.add_argument("--attack-iters", type=int)
    p.add_argument("--loss", dest="loss_kind", choices=["pgd-at", "trades"])
    p.add_argument("--beta", type=float)


def _build_config(args):
    tree = parse_config_file(args.config) if args.config else {}
    overrides = {
        "arch": args.arch, "method": args.method, "batch_size": args.batch_size,
    }
    for key, val in overrides.items():
        if val is not None:
            tree[key] = val
    comp = tree.setdefault("compression", {})
    for key, val in (("k_t", args.k_t), ("k_init", args.k_init),
                     ("gamma_step", args.gamma_step), ("granularity", args.granularity),
                     ("budget", args.budget)):
        if val is not None:
            comp[key] = val
    stages = tree.setdefault("stages", {})
    for key, val in (("pretrain_epochs", args.epochs_pretrain),
                     ("prune_epochs", args.epochs_prune),
                     ("finetune_epochs", args.epochs_finetune)):
        if val is not None:
            stages[key] = val
    attack = tree.setdefault("attack", {})
    for key, val in (("epsilon", args.epsilon), ("step_size", args.attack_step),
                     ("iters", args.attack_iters)):
        if val is not None:
            attack[key] = val
    loss = tree.setdefault("loss", {})
    if args.loss_kind is not None:
        loss["kind"] = args.loss_kind
    if args.beta is not None:
        loss["beta"] = args.beta
    return config_from_dict(tree, seed=args.seed)


def _cmd_run(args) -> int:
    cfg = _build_config(args)
    rows = run_all(cfg, args.out)
    for r in rows:
        print(f"{r.attack}: {r.accuracy_pct:.2f}%")
    return EXIT_OK


def _cmd_pretrain(args) -> int:
    cfg = _build_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, _ = ingest(cfg.dataset, cfg.seed)
    stage_pretrain(cfg, train, out)
    print(f"pretrain checkpoint written to {out / 'pretrain.npz'}")
    return EXIT_OK


def _cmd_prune(args) -> int:
    cfg = _build_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    net, ckpt = load_network(args.from_ckpt)
    _check_compat(cfg, ckpt)
    train, _ = ingest(cfg.dataset, cfg.seed)
    _, history = stage_prune(cfg, net, train, out)
    arrived = history.arrival_epoch is not None
    print(f"prune finished: global rate {history.final_rate:.5f}, "
          f"arrival epoch {history.arrival_epoch if arrived else 'none'}")
    return EXIT_OK


def _cmd_finetune(args) -> int:
    cfg = _build_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    net, ckpt = load_network(args.from_ckpt)
    _check_compat(cfg, ckpt)
    train, _ = ingest(cfg.dataset, cfg.seed)
    stage_finetune(cfg, net, train, out)
    print(f"final checkpoint written to {out / 'final.npz'}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg = _build_config(args)
    net, _ = load_network(args.from_ckpt)
    _, test = ingest(cfg.dataset, cfg.seed)
    rows = evaluate(net, test.inputs, test.labels, default_eval_attacks(cfg.attack))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics_to_csv(rows, out / "metrics.csv")
    write_summary(out / "summary.csv", cfg, net, rows)
    if args.histograms:
        weight_histograms(net, out / "histograms.csv")
    for r in rows:
        print(f"{r.attack}: {r.accuracy_pct:.2f}%")
    return EXIT_OK


def _cmd_strategy(args) -> int:
    cfg = _build_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tables: list[StrategyTable] = []
    for ckpt_path in args.from_ckpt:
        net, _ = load_network(ckpt_path)
        table = measure_strategy(net)
        tables.append(table)
        path = out / f"strategy_{Path(ckpt_path).stem}.csv"
        table.save_csv(path, strategy_flops(net, table))
        print(f"strategy exported to {path}")
    if args.baselines:
        net, _ = load_network(args.from_ckpt[0])
        k_t = cfg.compression.k_t
        tables += [uniform_strategy(net, k_t), erk_strategy(net, k_t), lamp_strategy(net, k_t)]
    if len(tables) > 1 or args.baselines:
        compare_tables(tables, out / "strategy_compare.csv")
        print(f"comparison written to {out / 'strategy_compare.csv'}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _build_config(args)
    path = sweep(cfg, args.k_values, args.methods, args.out)
    print(f"sweep results written to {path}")
    return EXIT_OK


def _check_compat(cfg, ckpt) -> None:
    if ckpt.meta["arch"] != cfg.arch:
        raise ConfigError(
            f"checkpoint arch {ckpt.meta['arch']!r} does not match config arch {cfg.arch!r}"
        )


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="robustprune",
                                     description="Adversarially robust pruning pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="pretrain, prune, finetune, evaluate")
    _add_common(p_run, seed_required=True)
    p_run.set_defaults(fn=_cmd_run)

    p_pre = sub.add_parser("pretrain", help="robust pretraining only")
    _add_common(p_pre)
    p_pre.set_defaults(fn=_cmd_pretrain)

    p_prune = sub.add_parser("prune", help="strategy search from a pretrain checkpoint")
    _add_common(p_prune)
    p_prune.add_argument("--from", dest="from_ckpt", type=Path, required=True)
    p_prune.set_defaults(fn=_cmd_prune)

    p_ft = sub.add_parser("finetune", help="fine-tune from a prune checkpoint")
    _add_common(p_ft)
    p_ft.add_argument("--from", dest="from_ckpt", type=Path, required=True)
    p_ft.set_defaults(fn=_cmd_finetune)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint under attacks")
    _add_common(p_eval)
    p_eval.add_argument("--from", dest="from_ckpt", type=Path, required=True)
    p_eval.add_argument("--histograms", action="store_true",
                        help="also export per-layer retained-weight histograms")
    p_eval.set_defaults(fn=_cmd_eval)

    p_stg = sub.add_parser("strategy", help="export / compare per-layer strategies")
    _add_common(p_stg)
    p_stg.add_argument("--from", dest="from_ckpt", type=Path, nargs="+", required=True)
    p_stg.add_argument("--baselines", action="store_true",
                       help="include uniform/erk/lamp tables in the comparison")
    p_stg.set_defaults(fn=_cmd_strategy)

    p_sweep = sub.add_parser("sweep", help="run a grid of target rates and methods")
    _add_common(p_sweep, seed_required=True)
    p_sweep.add_argument("--k-values", type=float, nargs="+", default=[1.0, 0.1, 0.01, 0.001])
    p_sweep.add_argument("--methods", nargs="+", default=["harp", "scores-only"])
    p_sweep.set_defaults(fn=_cmd_sweep)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DataFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
