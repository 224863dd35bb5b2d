"""Uncertainty-aware ensemble pseudo-labeling for semi-supervised learning."""

from .probcore import argmax_class, cross_entropy, heatmap_peak, mse, softmax
from .uncertainty import (
    HeadBatch,
    HeadWeightState,
    ema_update,
    head_uncertainty,
    head_weights,
    long_tailed_weights,
    mean_reference,
    sample_uncertainty,
)
from .pseudolabel import PseudoLabelConfig, ensemble_prediction
from .losses import ensemble_loss, supervised_loss
from .tinynet import NetSpec, TinyNet, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, run_ablation, train

__version__ = "0.1.0"
