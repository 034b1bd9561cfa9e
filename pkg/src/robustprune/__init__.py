"""Adversarially robust pruning with learned per-layer rates and connection scores."""

from .adversary import AttackConfig, RobustLossConfig, evaluate, fgsm, pgd, robust_loss
from .config import RunConfig, config_from_dict, parse_config_file
from .data import Dataset, ingest, synthetic_blobs
from .network import Network, LayerSpec, build_network, count_preserved, flops, masked_forward
from .optim import CosineSchedule, SgdState, sgd_step
from .pipeline import run_all, stage_finetune, stage_pretrain, stage_prune
from .pruning import (
    CompressionConfig,
    GammaSchedule,
    build_masks,
    g_activation,
    g_derivative,
    gamma_update,
    hw_loss_count,
    hw_loss_flops,
    init_rate,
    init_scores_channel,
    init_scores_weight,
    percentile_threshold,
    prune_epoch,
    ste_rate_grad,
    ste_score_grad,
    top_fraction_mask,
)
from .strategies import (
    StrategyTable,
    apply_strategy,
    erk_strategy,
    lamp_strategy,
    measure_strategy,
    uniform_strategy,
)
from .tensor import Tensor, backward, forward_op, no_grad, scoped_tape

__version__ = "0.1.0"
