"""triseg: scribble-supervised image segmentation with three heterogeneous
mini networks (CNN / windowed attention / selective-scan SSM) co-trained
against a randomly weighted pseudo-label mixture."""

from .tensor import Tensor, softmax_channels
from .mixer import MixWeights, sample_mix_weights, mix_pseudo
from .losses import pce_loss, dice_loss, total_loss, LossBreakdown, UNLABELED
from .backbones import build, SegNetwork, BACKBONE_KINDS
from .trainer import TrainConfig, fit, fit_baseline_pce

__version__ = "0.1.0"
