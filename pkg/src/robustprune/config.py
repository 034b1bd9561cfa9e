"""Run configuration and the flat dotted key-value config format.

A config file holds one ``section.key = value`` pair per line; ``#`` starts
a comment. The full schema is documented in the README. Every run is fully
determined by (config, seed).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .adversary import AttackConfig, RobustLossConfig
from .pruning import CompressionConfig

METHODS = ("harp", "rates-only", "scores-only")
ARCHS = ("mlp-small", "conv-small", "resnet-tiny")


class ConfigError(ValueError):
    """Invalid run configuration; maps to CLI exit code 2."""


@dataclass
class OptConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0005

    def validate(self, name: str) -> None:
        if self.lr < 0:
            raise ConfigError(f"{name}.lr must be >= 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"{name}.momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"{name}.weight_decay must be >= 0, got {self.weight_decay}")


@dataclass
class RunConfig:
    seed: int
    arch: str = "conv-small"
    method: str = "harp"  # harp | rates-only | scores-only
    dataset: dict = field(default_factory=lambda: {
        "kind": "synthetic", "n": 2000, "size": 16, "classes": 2, "noise": 0.15,
        "test_fraction": 0.2,
    })
    pretrain_epochs: int = 30
    prune_epochs: int = 20
    finetune_epochs: int = 100
    batch_size: int = 128
    compression: CompressionConfig = field(default_factory=lambda: CompressionConfig(k_t=0.1))
    attack: AttackConfig = field(default_factory=lambda: AttackConfig(8 / 255, 2 / 255, 10))
    loss: RobustLossConfig = field(default_factory=RobustLossConfig)
    opt_pretrain: OptConfig = field(default_factory=OptConfig)
    opt_finetune: OptConfig = field(default_factory=OptConfig)
    opt_scores: OptConfig = field(default_factory=lambda: OptConfig(lr=0.02, momentum=0.9, weight_decay=0.0))
    opt_rates: OptConfig = field(default_factory=lambda: OptConfig(lr=0.5, momentum=0.9, weight_decay=0.0))

    def validate(self) -> None:
        if self.arch not in ARCHS:
            raise ConfigError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        for n in ("pretrain_epochs", "prune_epochs", "finetune_epochs"):
            if getattr(self, n) < 0:
                raise ConfigError(f"{n} must be >= 0")
        if self.prune_epochs < 1:
            raise ConfigError("prune_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        for name in ("opt_pretrain", "opt_finetune", "opt_scores", "opt_rates"):
            getattr(self, name).validate(name)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "arch": self.arch,
            "method": self.method,
            "dataset": dict(self.dataset),
            "stages": {
                "pretrain_epochs": self.pretrain_epochs,
                "prune_epochs": self.prune_epochs,
                "finetune_epochs": self.finetune_epochs,
            },
            "batch_size": self.batch_size,
            "compression": {
                "k_t": self.compression.k_t,
                "k_init": self.compression.k_init,
                "gamma_step": self.compression.gamma_step,
                "granularity": self.compression.granularity,
                "budget": self.compression.budget,
            },
            "attack": {
                "epsilon": self.attack.epsilon,
                "step_size": self.attack.step_size,
                "iters": self.attack.iters,
                "random_init": self.attack.random_init,
            },
            "loss": {"kind": self.loss.kind, "beta": self.loss.beta},
            "opt": {
                name: {"lr": o.lr, "momentum": o.momentum, "weight_decay": o.weight_decay}
                for name, o in (
                    ("pretrain", self.opt_pretrain),
                    ("finetune", self.opt_finetune),
                    ("scores", self.opt_scores),
                    ("rates", self.opt_rates),
                )
            },
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _coerce(value: str):
    low = value.strip()
    if low.lower() in ("true", "false"):
        return low.lower() == "true"
    try:
        return int(low)
    except ValueError:
        pass
    try:
        return float(low)
    except ValueError:
        return low


def parse_config_file(path) -> dict:
    """Parse ``section.key = value`` lines into a nested dict."""
    tree: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = line.split("=", 1)
            parts = key.strip().split(".")
            if not all(parts):
                raise ConfigError(f"{path}:{lineno}: empty key component in {key.strip()!r}")
            node = tree
            for part in parts[:-1]:
                node = node.setdefault(part, {})
                if not isinstance(node, dict):
                    raise ConfigError(f"{path}:{lineno}: {key.strip()!r} conflicts with earlier value")
            node[parts[-1]] = _coerce(value)
    return tree


def config_from_dict(tree: dict, seed: int | None = None) -> RunConfig:
    """Build and validate a RunConfig from a parsed config tree."""
    try:
        stages = tree.get("stages", {})
        comp = tree.get("compression", {})
        attack = tree.get("attack", {})
        loss = tree.get("loss", {})
        opts = tree.get("opt", {})
        use_seed = seed if seed is not None else tree.get("seed")
        if use_seed is None:
            raise ConfigError("seed is required (config key 'seed' or --seed)")
        cfg = RunConfig(
            seed=int(use_seed),
            arch=tree.get("arch", "conv-small"),
            method=tree.get("method", "harp"),
            dataset=dict(tree.get("dataset", RunConfig(seed=0).dataset)),
            pretrain_epochs=int(stages.get("pretrain_epochs", 30)),
            prune_epochs=int(stages.get("prune_epochs", 20)),
            finetune_epochs=int(stages.get("finetune_epochs", 100)),
            batch_size=int(tree.get("batch_size", 128)),
            compression=CompressionConfig(
                k_t=float(comp.get("k_t", 0.1)),
                k_init=float(comp.get("k_init", 0.1)),
                gamma_step=float(comp.get("gamma_step", 0.01)),
                granularity=comp.get("granularity", "weight"),
                budget=comp.get("budget", "param-count"),
            ),
            attack=AttackConfig(
                epsilon=float(attack.get("epsilon", 8 / 255)),
                step_size=float(attack.get("step_size", 2 / 255)),
                iters=int(attack.get("iters", 10)),
                random_init=bool(attack.get("random_init", True)),
            ),
            loss=RobustLossConfig(
                kind=loss.get("kind", "pgd-at"),
                beta=float(loss.get("beta", 6.0)),
            ),
            opt_pretrain=_opt_from(opts.get("pretrain", {}), OptConfig()),
            opt_finetune=_opt_from(opts.get("finetune", {}), OptConfig()),
            opt_scores=_opt_from(opts.get("scores", {}), OptConfig(lr=0.02, momentum=0.9, weight_decay=0.0)),
            opt_rates=_opt_from(opts.get("rates", {}), OptConfig(lr=0.5, momentum=0.9, weight_decay=0.0)),
        )
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def _opt_from(node: dict, default: OptConfig) -> OptConfig:
    return OptConfig(
        lr=float(node.get("lr", default.lr)),
        momentum=float(node.get("momentum", default.momentum)),
        weight_decay=float(node.get("weight_decay", default.weight_decay)),
    )
