"""Learned compression: trainable per-layer rates and scores, percentile masks,
straight-through gradients, the clamped global budget loss, and its schedule.

Rates live in an unconstrained quota r per layer, squeezed into [k_min, 1]
by a scaled sigmoid. Masks keep the top score fraction of each layer; the
binarization is bypassed for gradients, which are assigned straight through
to scores and quotas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .adversary import AttackConfig, RobustLossConfig, robust_loss
from .network import Network, count_preserved, flops
from .optim import SgdState, sgd_step
from .tensor import Tensor

GRANULARITIES = ("weight", "channel")
BUDGETS = ("param-count", "flops")


@dataclass
class CompressionConfig:
    """Target rate and the knobs controlling how it is reached.

    k_min is fixed at one tenth of the target so no layer can be removed
    completely; k_init seeds every quota at the same uniform rate.
    """

    k_t: float
    k_init: float = 0.1
    gamma_step: float = 0.01
    granularity: str = "weight"
    budget: str = "param-count"

    def __post_init__(self):
        if not 0.0 < self.k_t <= 1.0:
            raise ValueError(f"target rate must be in (0, 1], got {self.k_t}")
        if not self.k_min < self.k_init <= 1.0:
            raise ValueError(f"k_init must be in (k_min, 1], got {self.k_init}")
        if self.gamma_step <= 0.0:
            raise ValueError(f"gamma step must be positive, got {self.gamma_step}")
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"granularity must be one of {GRANULARITIES}")
        if self.budget not in BUDGETS:
            raise ValueError(f"budget must be one of {BUDGETS}")
        if self.budget == "flops" and self.granularity != "channel":
            raise ValueError("the flops budget requires channel granularity")

    @property
    def k_min(self) -> float:
        return 0.1 * self.k_t


@dataclass
class GammaSchedule:
    """Step-wise ramp of the budget-loss weight, frozen once the budget is met."""

    step: float
    current: float = 0.0
    frozen: bool = False
    arrival_epoch: int | None = None

    def value(self, epoch: int) -> float:
        if self.frozen:
            return self.current
        return self.step * epoch


def gamma_update(sched: GammaSchedule, epoch: int, hw_loss_value: float) -> float:
    """Advance the ramp for ``epoch`` and freeze it at the first zero budget loss."""
    if epoch < 1:
        raise ValueError(f"epochs are 1-based, got {epoch}")
    gamma = sched.value(epoch)
    sched.current = gamma
    if not sched.frozen and hw_loss_value == 0.0:
        sched.frozen = True
        sched.arrival_epoch = epoch
    return gamma


# ---------------------------------------------------------------------------
# rate activation and initializers


def g_activation(r: float, k_min: float) -> float:
    """Sigmoid squeezed into [k_min, 1]: the layer rate for a quota r."""
    if not 0.0 < k_min < 1.0:
        raise ValueError(f"k_min must be in (0, 1), got {k_min}")
    sig = 1.0 / (1.0 + math.exp(-r))
    return (1.0 - k_min) * sig + k_min


def g_derivative(r: float, k_min: float) -> float:
    sig = 1.0 / (1.0 + math.exp(-r))
    return (1.0 - k_min) * sig * (1.0 - sig)


def init_rate(k_init: float, k_min: float) -> float:
    """Quota whose activation equals k_init (inverse of g_activation)."""
    if not k_min < k_init < 1.0:
        raise ValueError(f"k_init must be in (k_min, 1) to invert, got {k_init} with k_min {k_min}")
    return math.log((k_init - k_min) / (1.0 - k_init))


def init_scores_weight(theta: np.ndarray, fan_in: int) -> np.ndarray:
    """Scores proportional to pre-trained weights, scaled by sqrt(6 / fan_in)."""
    peak = np.abs(theta).max()
    if peak == 0.0:
        raise ValueError("cannot initialize scores from an all-zero layer")
    eta = math.sqrt(6.0 / fan_in)
    return eta * theta / peak


def init_scores_channel(theta: np.ndarray, fan_in: int) -> np.ndarray:
    """Per-input-channel scores: normalized absolute weight sums over axis 0 slices."""
    sums = np.abs(theta).reshape(theta.shape[0], -1).sum(axis=1)
    peak = sums.max()
    if peak == 0.0:
        raise ValueError("cannot initialize channel scores from an all-zero layer")
    eta = math.sqrt(6.0 / fan_in)
    return eta * sums / peak


# ---------------------------------------------------------------------------
# percentile masks


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def percentile_threshold(alpha: float, scores: np.ndarray) -> float:
    """Cutoff such that ``scores > threshold`` keeps the top (1 - alpha) fraction.

    Exact cardinality holds for distinct scores; ties at the threshold are
    resolved by the mask builder in flat-index order.
    """
    flat = np.asarray(scores).ravel()
    if flat.size == 0:
        raise ValueError("percentile threshold of empty scores")
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must be in [0, 1), got {alpha}")
    keep = _round_half_up((1.0 - alpha) * flat.size)
    if keep >= flat.size:
        return -np.inf
    if keep <= 0:
        return float(flat.max())
    return float(np.partition(flat, flat.size - keep - 1)[flat.size - keep - 1])


def top_fraction_mask(scores: np.ndarray, rate: float) -> np.ndarray:
    """Binary mask keeping the top ``rate`` fraction by score, at least one entry.

    Strictly-greater comparison against the percentile cutoff; entries tied
    at the cutoff fill the remaining quota in flat-index order, which makes
    the mask deterministic for any score vector.
    """
    flat = np.asarray(scores, dtype=np.float64).ravel()
    keep = max(1, _round_half_up(rate * flat.size))
    keep = min(keep, flat.size)
    thresh = percentile_threshold(1.0 - keep / flat.size, flat)
    mask = flat > thresh
    short = keep - int(mask.sum())
    if short > 0:
        tied = np.flatnonzero(flat == thresh)
        mask[tied[:short]] = True
    return mask.astype(np.float64).reshape(np.asarray(scores).shape)


def build_masks(net: Network, k_min: float) -> list[np.ndarray]:
    """Rebuild every prunable layer's mask from its current quota and scores."""
    masks = []
    for layer in net.layers:
        if layer.scores is None or layer.quota is None:
            raise ValueError(f"{layer.spec.name}: scores/quota not initialized")
        rate = g_activation(float(layer.quota.values), k_min)
        mask = top_fraction_mask(layer.scores.values, rate)
        if mask.shape == layer.spec.weight_shape:
            layer.set_weight_mask(mask)
        else:
            layer.set_channel_mask(mask)
        masks.append(mask)
    return masks


# ---------------------------------------------------------------------------
# budget losses


def hw_loss_count(preserved: int, total: int, k_t: float) -> float:
    """Clamped overshoot of the preserved-parameter budget."""
    if total <= 0:
        raise ValueError("total parameter count must be positive")
    return max(preserved / (k_t * total) - 1.0, 0.0)


def hw_loss_flops(current: float, full: float, k_t: float) -> float:
    """Clamped overshoot of the FLOPs budget."""
    if full <= 0:
        raise ValueError("full FLOPs must be positive")
    return max(current / (k_t * full) - 1.0, 0.0)


# ---------------------------------------------------------------------------
# straight-through gradients


def ste_score_grad(upstream: np.ndarray, theta: np.ndarray, granularity: str = "weight") -> np.ndarray:
    """Pass d(loss)/d(masked theta) through the binarization onto the scores.

    Weight granularity: elementwise upstream * theta. Channel granularity:
    that product summed over every weight of the input channel.
    """
    prod = np.asarray(upstream) * np.asarray(theta)
    if granularity == "weight":
        return prod
    if granularity == "channel":
        return prod.reshape(prod.shape[0], -1).sum(axis=1)
    raise ValueError(f"granularity must be one of {GRANULARITIES}")


def ste_rate_grad(upstream: np.ndarray, theta: np.ndarray, r: float, k_min: float) -> float:
    """Layer-summed straight-through product times the rate activation slope."""
    total = float((np.asarray(upstream) * np.asarray(theta)).sum())
    return total * g_derivative(r, k_min)


# ---------------------------------------------------------------------------
# one epoch of strategy search


@dataclass
class PruneEpochStats:
    robust_loss_mean: float
    hw_loss_mean: float
    global_rate: float
    layer_rates: list[float]


def budget_state(net: Network, cfg: CompressionConfig):
    """Budget-loss value, its derivative per mask unit, and the realized rate."""
    if cfg.budget == "param-count":
        preserved, _ = count_preserved(net)
        loss = hw_loss_count(preserved, net.total_params, cfg.k_t)
        over = preserved > cfg.k_t * net.total_params
        dloss = 1.0 / (cfg.k_t * net.total_params) if over else 0.0
        unit_grads = []
        for layer in net.layers:
            alive = (layer.params.values != 0).astype(np.float64)
            if cfg.granularity == "channel":
                alive = alive.reshape(alive.shape[0], -1).sum(axis=1)
            unit_grads.append(dloss * alive)
        rate = preserved / net.total_params
        return loss, unit_grads, rate
    current, per_layer = flops(net)
    full, _ = flops(net, [np.ones(l.spec.weight_shape) for l in net.layers])
    loss = hw_loss_flops(current, full, cfg.k_t)
    dloss = 1.0 / (cfg.k_t * full) if current > cfg.k_t * full else 0.0
    unit_grads = []
    for layer in net.layers:
        s = layer.spec
        per_channel = s.c_o * (s.kernel**2 * s.spatial_out**2 if s.kind != "fc" else 1)
        unit_grads.append(dloss * per_channel * np.ones(s.c_i))
    return loss, unit_grads, current / full


def retie_shortcut_quotas(net: Network) -> None:
    """Shortcut layers take the quota of their block's input layer."""
    for input_idx, shortcut_idx in net.residual_links:
        src = net.layers[input_idx].quota
        dst = net.layers[shortcut_idx].quota
        if src is not None and dst is not None:
            dst.values = src.values.copy()


def prune_epoch(
    net: Network,
    cfg: CompressionConfig,
    gamma: float,
    loss_cfg: RobustLossConfig,
    attack_cfg: AttackConfig,
    batches,
    score_opt: SgdState,
    rate_opt: SgdState,
    rng: np.random.Generator,
    learn_scores: bool = True,
    learn_rates: bool = True,
) -> PruneEpochStats:
    """One epoch of optimizing scores and quotas on the joint objective.

    Layer weights stay frozen; masks are rebuilt from the current (quota,
    scores) before every batch. Returns per-epoch means and the realized
    global rate.
    """
    rob_losses = []
    hw_losses = []
    tie_channels = cfg.granularity == "channel"
    for x, y in batches:
        if tie_channels:
            retie_shortcut_quotas(net)
        build_masks(net, cfg.k_min)
        hw_value, hw_unit, _ = budget_state(net, cfg)

        with T.scoped_tape():
            loss, _ = robust_loss(net, x, y, loss_cfg, attack_cfg, rng)
            T.backward(loss)
        rob_losses.append(loss.item())
        hw_losses.append(hw_value)

        scores, quotas = [], []
        for i, layer in enumerate(net.layers):
            theta_hat = net.last_theta_hat[i]
            upstream = theta_hat.grad if theta_hat is not None and theta_hat.grad is not None \
                else np.zeros(layer.spec.weight_shape)
            r = float(layer.quota.values)
            layer.scores.grad = (
                ste_score_grad(upstream, layer.params.values, cfg.granularity)
                + gamma * hw_unit[i]
            )
            rate_grad = ste_rate_grad(upstream, layer.params.values, r, cfg.k_min)
            rate_grad += gamma * float(hw_unit[i].sum()) * g_derivative(r, cfg.k_min)
            layer.quota.grad = np.asarray(rate_grad)
            scores.append(layer.scores)
            quotas.append(layer.quota)

        if learn_scores:
            sgd_step(score_opt, scores)
        else:
            for s in scores:
                s.grad = None
        if learn_rates:
            sgd_step(rate_opt, quotas)
        else:
            for q in quotas:
                q.grad = None

    if tie_channels:
        retie_shortcut_quotas(net)
    build_masks(net, cfg.k_min)
    final_hw, _, global_rate = budget_state(net, cfg)
    layer_rates = [g_activation(float(l.quota.values), cfg.k_min) for l in net.layers]
    return PruneEpochStats(
        robust_loss_mean=float(np.mean(rob_losses)) if rob_losses else 0.0,
        hw_loss_mean=float(np.mean(hw_losses)) if hw_losses else final_hw,
        global_rate=global_rate,
        layer_rates=layer_rates,
    )
