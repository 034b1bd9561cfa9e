"""l-infinity attacks (FGSM, PGD) and robust training losses (PGD-AT, TRADES)."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .network import Network
from .tensor import Tensor

# Attacks inside evaluation draw from this dedicated stream so reported
# accuracies are reproducible independent of training RNG consumption.
EVAL_ATTACK_SEED = 20230817

LOSS_KINDS = ("pgd-at", "trades")


@dataclass
class AttackConfig:
    epsilon: float
    step_size: float
    iters: int = 10
    random_init: bool = True
    bounds: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not 0.0 <= self.step_size <= self.epsilon and self.epsilon > 0:
            raise ValueError(f"step size must be in [0, epsilon], got {self.step_size}")
        if self.epsilon == 0 and self.step_size != 0:
            raise ValueError("step size must be 0 when epsilon is 0")
        if self.iters < 1:
            raise ValueError(f"iteration count must be >= 1, got {self.iters}")


@dataclass
class RobustLossConfig:
    kind: str = "pgd-at"
    beta: float = 6.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if self.kind == "trades" and self.beta < 0:
            raise ValueError(f"trades beta must be >= 0, got {self.beta}")


def _attack_grad(net: Network, x_now: np.ndarray, y: np.ndarray,
                 clean_logits: np.ndarray | None) -> np.ndarray:
    """Gradient of the attack objective w.r.t. the current iterate."""
    with T.scoped_tape(), T.input_grads_only():
        xt = Tensor(x_now, requires_grad=True)
        logits = net.forward(xt)
        if clean_logits is None:
            loss = T.softmax_cross_entropy(logits, y)
        else:
            loss = T.kl_divergence(Tensor(clean_logits), logits)
        T.backward(loss)
        return xt.grad


def _project(x_adv: np.ndarray, x0: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    lo, hi = cfg.bounds
    delta = np.clip(x_adv - x0, -cfg.epsilon, cfg.epsilon)
    out = np.clip(x0 + delta, lo, hi)
    # x0 + delta can round one ulp past the ball; nudge back toward x0 so the
    # measured difference satisfies the constraint exactly
    for _ in range(3):
        over = np.abs(out - x0) > cfg.epsilon
        if not over.any():
            break
        out[over] = np.nextafter(out[over], x0[over])
    return out


def fgsm(net: Network, x: np.ndarray, y: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """Single step of size epsilon along the sign of the input gradient."""
    x = np.asarray(x, dtype=np.float64)
    if cfg.epsilon == 0:
        return x.copy()
    grad = _attack_grad(net, x, y, None)
    return _project(x + cfg.epsilon * np.sign(grad), x, cfg)


def pgd(net: Network, x: np.ndarray, y: np.ndarray, cfg: AttackConfig,
        rng: np.random.Generator | None = None,
        clean_logits: np.ndarray | None = None) -> np.ndarray:
    """Iterated sign-gradient ascent projected onto the epsilon-ball and box.

    Maximizes cross-entropy against ``y`` by default; when ``clean_logits``
    is given it maximizes the KL divergence from the clean prediction
    instead (the TRADES inner problem). Returns the final iterate.
    """
    x0 = np.asarray(x, dtype=np.float64)
    if cfg.epsilon == 0:
        return x0.copy()
    if cfg.random_init:
        if rng is None:
            raise ValueError("random-init pgd needs an RNG stream")
        x_adv = _project(x0 + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x0.shape), x0, cfg)
    else:
        x_adv = x0.copy()
    for _ in range(cfg.iters):
        grad = _attack_grad(net, x_adv, y, clean_logits)
        x_adv = _project(x_adv + cfg.step_size * np.sign(grad), x0, cfg)
    return x_adv


def robust_loss(net: Network, x: np.ndarray, y: np.ndarray,
                loss_cfg: RobustLossConfig, attack_cfg: AttackConfig,
                rng: np.random.Generator | None = None) -> tuple[Tensor, np.ndarray]:
    """Adversarial training loss on one batch; differentiable through theta and masks.

    The inner maximization is treated as fixed: gradients do not flow back
    through the attack iterations, only through the final forward passes.
    """
    y = np.asarray(y)
    if loss_cfg.kind == "pgd-at":
        x_adv = pgd(net, x, y, attack_cfg, rng)
        loss = T.softmax_cross_entropy(net.forward(Tensor(x_adv)), y)
        return loss, x_adv
    # trades: clean cross-entropy plus beta-weighted boundary KL
    with T.no_grad():
        clean_logits = net.forward(Tensor(np.asarray(x, dtype=np.float64))).values
    x_adv = pgd(net, x, y, attack_cfg, rng, clean_logits=clean_logits)
    logits_nat = net.forward(Tensor(np.asarray(x, dtype=np.float64)))
    logits_adv = net.forward(Tensor(x_adv))
    loss = T.add(
        T.softmax_cross_entropy(logits_nat, y),
        T.scale(T.kl_divergence(logits_nat, logits_adv), loss_cfg.beta),
    )
    return loss, x_adv


@dataclass
class MetricRow:
    attack: str
    accuracy_pct: float
    epsilon: float
    iters: int


def _accuracy(net: Network, inputs: np.ndarray, labels: np.ndarray, batch: int = 256) -> float:
    correct = 0
    with T.no_grad():
        for i in range(0, len(inputs), batch):
            logits = net.forward(Tensor(inputs[i : i + batch])).values
            correct += int((logits.argmax(axis=1) == labels[i : i + batch]).sum())
    return 100.0 * correct / len(inputs)


def evaluate(net: Network, inputs: np.ndarray, labels: np.ndarray,
             attacks: list[tuple[str, AttackConfig]] | None = None,
             batch: int = 256) -> list[MetricRow]:
    """Natural plus per-attack accuracy over a full dataset.

    Every adversarial example is checked against the epsilon-ball and box
    constraints before it counts; attack randomness comes from a fixed
    dedicated seed so repeated evaluations agree.
    """
    if len(inputs) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    labels = np.asarray(labels)
    rows = [MetricRow("natural", _accuracy(net, inputs, labels, batch), 0.0, 0)]
    for name, cfg in attacks or []:
        rng = np.random.default_rng(np.random.SeedSequence(EVAL_ATTACK_SEED))
        correct = 0
        for i in range(0, len(inputs), batch):
            xb, yb = inputs[i : i + batch], labels[i : i + batch]
            x_adv = pgd(net, xb, yb, cfg, rng)
            if not constraints_satisfied(x_adv, xb, cfg):
                raise AssertionError(f"attack {name} produced out-of-constraint examples")
            with T.no_grad():
                logits = net.forward(Tensor(x_adv)).values
            correct += int((logits.argmax(axis=1) == yb).sum())
        rows.append(MetricRow(name, 100.0 * correct / len(inputs), cfg.epsilon, cfg.iters))
    return rows


def constraints_satisfied(x_adv: np.ndarray, x: np.ndarray, cfg: AttackConfig) -> bool:
    lo, hi = cfg.bounds
    return bool(
        np.all(np.abs(x_adv - x) <= cfg.epsilon)
        and np.all(x_adv >= lo)
        and np.all(x_adv <= hi)
    )


def metrics_to_csv(rows: list[MetricRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["attack", "accuracy_pct", "epsilon", "iters"])
        for r in rows:
            writer.writerow([r.attack, f"{r.accuracy_pct:.4f}", f"{r.epsilon:.8f}", r.iters])
