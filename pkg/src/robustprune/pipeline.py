"""Three-stage pipeline: robust pretraining, strategy search, fine-tuning.

Each stage is a pure function of (config, incoming network, data) plus its
own seeded RNG stream, so running stages separately through checkpoints is
identical to one monolithic run.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .adversary import AttackConfig, MetricRow, evaluate, metrics_to_csv, robust_loss
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import Dataset, ingest
from .network import Network, build_network, count_preserved, flops
from .optim import CosineSchedule, SgdState, sgd_step
from .pruning import (
    CompressionConfig,
    GammaSchedule,
    gamma_update,
    build_masks,
    init_rate,
    init_scores_channel,
    init_scores_weight,
    prune_epoch,
    retie_shortcut_quotas,
)
from .strategies import measure_strategy, strategy_flops
from .tensor import Tensor


class DivergenceError(RuntimeError):
    """Training loss became non-finite; maps to CLI exit code 3."""


def _stage_rng(seed: int, tag: str) -> np.random.Generator:
    key = sum(ord(c) << (8 * i) for i, c in enumerate(tag[:4]))
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))


def _train_theta(net: Network, cfg: RunConfig, train: Dataset, epochs: int,
                 opt_cfg, rng: np.random.Generator, stage: str) -> None:
    """Train layer weights under the robust loss with frozen masks."""
    opt = SgdState(opt_cfg.lr, opt_cfg.momentum, opt_cfg.weight_decay,
                   schedule=CosineSchedule(opt_cfg.lr, epochs))
    params = [l.params for l in net.layers]
    for epoch in range(epochs):
        opt.set_epoch(epoch)
        for x, y in train.batches(cfg.batch_size, rng):
            with T.scoped_tape():
                loss, _ = robust_loss(net, x, y, cfg.loss, cfg.attack, rng)
                if not np.isfinite(loss.item()):
                    raise DivergenceError(f"{stage}: loss diverged at epoch {epoch + 1}")
                T.backward(loss)
            sgd_step(opt, params)


def stage_pretrain(cfg: RunConfig, train: Dataset, outdir: Path | None = None) -> Network:
    """Robustly train the dense model (all-ones masks)."""
    net = build_network(cfg.arch, _input_shape(cfg), int(cfg.dataset.get("classes", 2)),
                        seed=cfg.seed)
    rng = _stage_rng(cfg.seed, "pretrain")
    _train_theta(net, cfg, train, cfg.pretrain_epochs, cfg.opt_pretrain, rng, "pretrain")
    if outdir is not None:
        save_checkpoint(Path(outdir) / "pretrain.npz", net, "pretrain", cfg.seed,
                        cfg.config_hash(), rng_state=rng.bit_generator.state)
    return net


@dataclass
class PruneHistory:
    epochs: list[dict]
    arrival_epoch: int | None
    final_rate: float

    def save_csv(self, path, layer_names: list[str]) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["epoch", "gamma", "robust_loss", "hw_loss", "global_rate"]
                + [f"rate_{n}" for n in layer_names]
            )
            for row in self.epochs:
                writer.writerow(
                    [row["epoch"], f"{row['gamma']:.6f}", f"{row['robust_loss']:.6f}",
                     f"{row['hw_loss']:.8f}", f"{row['global_rate']:.8f}"]
                    + [f"{r:.8f}" for r in row["layer_rates"]]
                )


def init_pruning_state(net: Network, comp: CompressionConfig, method: str = "harp") -> None:
    """Initialize scores from the pre-trained weights and quotas at a uniform rate."""
    k_init = comp.k_init
    if method == "scores-only":
        k_init = comp.k_t  # fixed uniform rates at the target
    # the inverse of the rate activation needs k_init strictly inside (k_min, 1)
    k_init = min(k_init, 0.99)
    r0 = init_rate(k_init, comp.k_min)
    for layer in net.layers:
        theta = layer.params.values
        if comp.granularity == "weight":
            layer.scores = Tensor(init_scores_weight(theta, layer.spec.fan_in))
        else:
            layer.scores = Tensor(init_scores_channel(theta, layer.spec.fan_in))
        layer.quota = Tensor(np.asarray(r0))
    if comp.granularity == "channel":
        retie_shortcut_quotas(net)
    build_masks(net, comp.k_min)


def stage_prune(cfg: RunConfig, net: Network, train: Dataset,
                outdir: Path | None = None) -> tuple[Network, PruneHistory]:
    """Strategy search: optimize scores and quotas, weights frozen."""
    comp = cfg.compression
    init_pruning_state(net, comp, cfg.method)
    learn_scores = cfg.method in ("harp", "scores-only")
    learn_rates = cfg.method in ("harp", "rates-only")
    rng = _stage_rng(cfg.seed, "prune")
    score_opt = SgdState(cfg.opt_scores.lr, cfg.opt_scores.momentum, cfg.opt_scores.weight_decay,
                         schedule=CosineSchedule(cfg.opt_scores.lr, cfg.prune_epochs))
    rate_opt = SgdState(cfg.opt_rates.lr, cfg.opt_rates.momentum, cfg.opt_rates.weight_decay,
                        schedule=CosineSchedule(cfg.opt_rates.lr, cfg.prune_epochs))
    sched = GammaSchedule(step=comp.gamma_step)
    history = []
    for epoch in range(1, cfg.prune_epochs + 1):
        score_opt.set_epoch(epoch - 1)
        rate_opt.set_epoch(epoch - 1)
        gamma = sched.value(epoch)
        stats = prune_epoch(net, comp, gamma, cfg.loss, cfg.attack,
                            train.batches(cfg.batch_size, rng), score_opt, rate_opt, rng,
                            learn_scores=learn_scores, learn_rates=learn_rates)
        if not np.isfinite(stats.robust_loss_mean):
            raise DivergenceError(f"prune: loss diverged at epoch {epoch}")
        gamma_update(sched, epoch, stats.hw_loss_mean)
        history.append({
            "epoch": epoch, "gamma": gamma, "robust_loss": stats.robust_loss_mean,
            "hw_loss": stats.hw_loss_mean, "global_rate": stats.global_rate,
            "layer_rates": stats.layer_rates,
        })
    final_rate = history[-1]["global_rate"]
    if sched.arrival_epoch is None and final_rate > comp.k_t:
        warnings.warn(
            f"target compression {comp.k_t} not reached after {cfg.prune_epochs} epochs; "
            f"final rate {final_rate:.5f}",
            stacklevel=2,
        )
    result = PruneHistory(history, sched.arrival_epoch, final_rate)
    if outdir is not None:
        outdir = Path(outdir)
        save_checkpoint(outdir / "prune.npz", net, "prune", cfg.seed, cfg.config_hash(),
                        rng_state=rng.bit_generator.state,
                        velocities={"scores": score_opt.velocity, "rates": rate_opt.velocity})
        result.save_csv(outdir / "prune_curve.csv", [l.spec.name for l in net.layers])
    return net, result


def stage_finetune(cfg: RunConfig, net: Network, train: Dataset,
                   outdir: Path | None = None) -> Network:
    """Recover performance of the masked weights; masks, scores, quotas frozen."""
    rng = _stage_rng(cfg.seed, "finetune")
    _train_theta(net, cfg, train, cfg.finetune_epochs, cfg.opt_finetune, rng, "finetune")
    if outdir is not None:
        save_checkpoint(Path(outdir) / "final.npz", net, "final", cfg.seed,
                        cfg.config_hash(), rng_state=rng.bit_generator.state)
    return net


def _input_shape(cfg: RunConfig) -> tuple[int, ...]:
    size = int(cfg.dataset.get("size", 16))
    return (1, size, size)


def default_eval_attacks(train_attack: AttackConfig) -> list[tuple[str, AttackConfig]]:
    eps = train_attack.epsilon
    attacks = [("pgd", AttackConfig(eps, train_attack.step_size, train_attack.iters))]
    if eps > 0:
        attacks.append(("fgsm", AttackConfig(eps, eps, 1, random_init=False)))
    return attacks


def run_all(cfg: RunConfig, outdir: Path) -> list[MetricRow]:
    """pretrain -> prune -> finetune -> evaluate; writes all artifacts."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    train, test = ingest(cfg.dataset, cfg.seed)
    net = stage_pretrain(cfg, train, outdir)
    net, _ = stage_prune(cfg, net, train, outdir)
    net = stage_finetune(cfg, net, train, outdir)
    rows = evaluate(net, test.inputs, test.labels, default_eval_attacks(cfg.attack))
    metrics_to_csv(rows, outdir / "metrics.csv")
    table = measure_strategy(net)
    table.save_csv(outdir / "strategy.csv", strategy_flops_list(net))
    write_summary(outdir / "summary.csv", cfg, net, rows)
    return rows


def strategy_flops_list(net: Network) -> list[float]:
    _, per_layer = flops(net)
    return per_layer


def write_summary(path, cfg: RunConfig, net: Network, rows: list[MetricRow]) -> None:
    preserved, _ = count_preserved(net)
    cur_flops, _ = flops(net)
    full_flops, _ = flops(net, [np.ones(l.spec.weight_shape) for l in net.layers])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["key", "value"])
        writer.writerow(["config_hash", cfg.config_hash()])
        writer.writerow(["method", cfg.method])
        writer.writerow(["arch", cfg.arch])
        writer.writerow(["seed", cfg.seed])
        writer.writerow(["k_t", f"{cfg.compression.k_t:.8f}"])
        writer.writerow(["global_rate", f"{preserved / net.total_params:.8f}"])
        writer.writerow(["flops_rate", f"{cur_flops / full_flops:.8f}"])
        for r in rows:
            writer.writerow([f"accuracy_{r.attack}", f"{r.accuracy_pct:.4f}"])


def load_network(ckpt_path) -> tuple[Network, Checkpoint]:
    ckpt = load_checkpoint(ckpt_path)
    return ckpt.build(), ckpt


def weight_histograms(net: Network, path, bins: int = 20) -> None:
    """Per-layer histograms of retained (non-zero masked) weights."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "bin_lo", "bin_hi", "count"])
        for layer in net.layers:
            masked = layer.params.values * layer.mask_broadcast()
            kept = masked[masked != 0]
            if kept.size == 0:
                continue
            counts, edges = np.histogram(kept, bins=bins)
            for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                writer.writerow([layer.spec.name, f"{lo:.8f}", f"{hi:.8f}", int(c)])


def sweep(base_cfg: RunConfig, k_values: list[float], methods: list[str],
          outdir: Path) -> Path:
    """Run the full pipeline over a grid of targets; emit a joined accuracy CSV."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows_out = []
    for method in methods:
        for k_t in k_values:
            cfg = _with(base_cfg, method=method, k_t=k_t)
            subdir = outdir / f"{method}_kt{k_t:g}"
            rows = run_all(cfg, subdir)
            for r in rows:
                rows_out.append([method, f"{k_t:.6f}", r.attack, f"{r.accuracy_pct:.4f}"])
    path = outdir / "sweep.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "k_t", "attack", "accuracy_pct"])
        writer.writerows(rows_out)
    return path


def _with(cfg: RunConfig, method: str, k_t: float) -> RunConfig:
    from .config import config_from_dict

    tree = cfg.to_dict()
    tree["method"] = method
    tree["compression"]["k_t"] = k_t
    return config_from_dict(tree)
