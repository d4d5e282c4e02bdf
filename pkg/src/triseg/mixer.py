"""Pseudo-label synthesis: a randomly weighted convex combination of the
three networks' probability maps, hardened to a one-hot target.

The weights live on the 2-simplex and are redrawn once per training
iteration; the resulting pseudo label is a constant (no gradient flows
through it).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["MixWeights", "sample_mix_weights", "mix_pseudo"]


@dataclass(frozen=True)
class MixWeights:
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        w = (self.alpha, self.beta, self.gamma)
        if any(v < 0 for v in w):
            raise ValueError(f"mix weights must be non-negative, got {w}")
        if abs(sum(w) - 1.0) > 1e-9:
            raise ValueError(f"mix weights must sum to 1, got {sum(w)!r}")

    def as_tuple(self):
        return (self.alpha, self.beta, self.gamma)


def sample_mix_weights(rng: np.random.Generator) -> MixWeights:
    """Uniform draw on the 2-simplex: Dirichlet(1,1,1) via normalized
    exponential variates."""
    e = -np.log1p(-rng.random(3))  # Exp(1); 1-U avoids log(0)
    e /= e.sum()
    # close the rounding gap so the simplex invariant holds exactly
    a, b = float(e[0]), float(e[1])
    return MixWeights(a, b, 1.0 - a - b)


def mix_pseudo(p_cnn: np.ndarray, p_vit: np.ndarray, p_mamba: np.ndarray,
               w: MixWeights) -> np.ndarray:
    """Convex mixture of three probability maps, argmaxed to one-hot.

    Maps are (K,H,W) or (N,K,H,W) with the class axis at ``ndim-3``.  Ties
    break toward the lowest class index.  The result is a float32 one-hot
    array carrying no gradient.
    """
    if not (p_cnn.shape == p_vit.shape == p_mamba.shape):
        raise ValueError(f"probability map shapes differ: {p_cnn.shape}, "
                         f"{p_vit.shape}, {p_mamba.shape}")
    m = w.alpha * p_cnn + w.beta * p_vit + w.gamma * p_mamba
    axis = m.ndim - 3
    idx = m.argmax(axis=axis)  # first maximum = lowest class on ties
    k = m.shape[axis]
    onehot = (np.expand_dims(idx, axis) ==
              np.arange(k).reshape((k,) + (1,) * (m.ndim - 1 - axis)))
    return onehot.astype(np.float32)
