"""Loss ingredients: partial cross-entropy on scribbled pixels, soft dice
against the one-hot pseudo label, and their per-network sum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

UNLABELED = 255
DICE_EPS = 1e-5
LOG_CLAMP = 1e-12

__all__ = ["UNLABELED", "LossBreakdown", "pce_loss", "dice_loss", "total_loss"]


@dataclass
class LossBreakdown:
    pce: list[float]
    dice: list[float]
    total: float


def pce_loss(probs: Tensor, scrib: np.ndarray, mode: str = "mean") -> Tensor:
    """Cross-entropy restricted to scribbled pixels.

    probs: (N,K,H,W) probabilities; scrib: (N,H,W) integer map with 255 for
    unlabeled pixels.  ``mode`` selects mean (default) or literal sum over
    the labeled set.  Returns a 0-tensor when nothing is labeled.
    """
    N, K, H, W = probs.shape
    if scrib.shape != (N, H, W):
        raise ValueError(f"scribble shape {scrib.shape} does not match "
                         f"probs {probs.shape}")
    labeled = scrib != UNLABELED
    if np.any((scrib >= K) & labeled):
        bad = int(scrib[(scrib >= K) & labeled].max())
        raise ValueError(f"scribble class {bad} out of range for K={K}")
    count = int(labeled.sum())
    if count == 0:
        return Tensor(np.zeros((), dtype=probs.dtype))
    onehot = np.zeros(probs.shape, dtype=probs.dtype)
    n, h, w = np.nonzero(labeled)
    onehot[n, scrib[labeled], h, w] = 1.0
    picked = (probs * Tensor(onehot)).sum(axis=1)  # (N,H,W) prob of true class
    # unlabeled pixels contribute log(0+clamp) * 0 weight; mask them out first
    ll = (picked.clamp_min(LOG_CLAMP).log() * Tensor(labeled.astype(probs.dtype))).sum()
    if mode == "mean":
        return -ll * (1.0 / count)
    if mode == "sum":
        return -ll
    raise ValueError(f"unknown pce mode {mode!r}")


def dice_loss(probs: Tensor, pseudo: np.ndarray) -> Tensor:
    """Soft dice between probabilities and a constant one-hot target,
    averaged over all K classes (background included)."""
    if pseudo.shape != probs.shape:
        raise ValueError(f"pseudo label shape {pseudo.shape} does not match "
                         f"probs {probs.shape}")
    axes = (0, 2, 3)
    tgt = Tensor(pseudo.astype(probs.dtype))
    inter = (probs * tgt).sum(axis=axes)
    denom = probs.sum(axis=axes) + Tensor(pseudo.sum(axis=axes).astype(probs.dtype))
    dice = (inter * 2.0 + DICE_EPS) / (denom + DICE_EPS)
    return (1.0 - dice).mean()


def total_loss(probs, scrib: np.ndarray, pseudo: np.ndarray,
               mode: str = "mean", dice_weight: float = 1.0):
    """Per-network pce + dice_weight * dice against the shared targets.

    Returns (LossBreakdown, per-network scalar loss Tensors) so the caller
    can backpropagate each network's own loss.  The reported dice entries
    carry the weight, so ``total`` always equals the sum of the parts.
    """
    per_net = []
    pces, dices = [], []
    for p in probs:
        lp = pce_loss(p, scrib, mode)
        ld = dice_loss(p, pseudo) * dice_weight
        per_net.append(lp + ld)
        pces.append(lp.item())
        dices.append(ld.item())
    return LossBreakdown(pces, dices, float(sum(pces) + sum(dices))), per_net
