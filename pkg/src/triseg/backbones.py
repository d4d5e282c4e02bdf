"""The three segmentation networks behind one interface: grayscale image in,
K-channel logit map out.

* ``cnn``  – UNet: double-conv stem, 4 maxpool levels with width doubling,
  bilinear-upsample decoder with concatenated skips, 1x1 head.
* ``attn`` – patch embedding, shifted-window attention block pairs with patch
  merging on the way down and patch expanding (additive skips) on the way up.
* ``ssm``  – same topology with gated selective-scan block pairs instead of
  attention.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, concat
from . import ops
from .blocks import (ConvBlock, SwinBlockPair, VssBlockPair, PatchEmbed,
                     PatchMerge, PatchExpand, FinalPatchExpand, he_uniform,
                     _norm_groups)

__all__ = ["SegNetwork", "build", "BACKBONE_KINDS"]

BACKBONE_KINDS = ("cnn", "attn", "ssm")


class SegNetwork:
    """A built backbone: ``forward(batch)`` maps (N,1,H,W) -> (N,K,H,W)."""

    # token networks need a larger step size than the UNet to make
    # progress under plain SGD; the trainer multiplies its base rate by this
    LR_SCALE = 1.0

    def __init__(self, kind: str, image_size: int, num_classes: int, width: int):
        self.kind = kind
        self.image_size = image_size
        self.num_classes = num_classes
        self.width = width
        self.params: dict[str, Tensor] = {}
        self._blocks = []

    def _register(self, block):
        for name, t in block.params():
            if name in self.params:
                raise ValueError(f"duplicate parameter name {name}")
            self.params[name] = t
        self._blocks.append(block)
        return block

    def add_param(self, name: str, data) -> Tensor:
        t = Tensor(data, requires_grad=True, name=name)
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name}")
        self.params[name] = t
        return t

    def num_params(self) -> int:
        return sum(t.size for t in self.params.values())

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        for k, t in self.params.items():
            if k not in state:
                raise KeyError(f"checkpoint missing parameter {k}")
            if state[k].shape != t.data.shape:
                raise ValueError(f"shape mismatch for {k}: "
                                 f"{state[k].shape} vs {t.data.shape}")
            t.data = state[k].astype(t.data.dtype)
            t.grad = None

    def forward(self, batch) -> Tensor:
        if not isinstance(batch, Tensor):
            batch = Tensor(batch)
        N, C, H, W = batch.shape
        if H != self.image_size or W != self.image_size:
            raise ValueError(f"network built for {self.image_size}px, "
                             f"got {H}x{W}")
        return self._forward(batch)


class _UNet(SegNetwork):
    LEVELS = 4

    def __init__(self, image_size, num_classes, width, rng):
        super().__init__("cnn", image_size, num_classes, width)
        if image_size % (1 << self.LEVELS):
            raise ValueError(
                f"cnn backbone needs image_size divisible by {1 << self.LEVELS}, "
                f"got {image_size}")
        w = width
        self.stem = self._register(ConvBlock("stem", rng, 1, w))
        self.down = [self._register(ConvBlock(f"down{i}", rng,
                                              w << i, w << (i + 1)))
                     for i in range(self.LEVELS)]
        self.up = [self._register(ConvBlock(f"up{i}", rng,
                                            (w << (i + 1)) + (w << i), w << i))
                   for i in reversed(range(self.LEVELS))]
        self.head_w = self.add_param(
            "head.w", he_uniform(rng, (num_classes, w, 1, 1), w))
        self.head_b = self.add_param("head.b", np.zeros(num_classes, np.float32))

    def _forward(self, x: Tensor) -> Tensor:
        skips = [self.stem(x)]
        for blk in self.down:
            skips.append(blk(ops.maxpool2x(skips[-1])))
        h = skips.pop()
        for blk in self.up:
            h = ops.bilinear_upsample2x(h)
            h = blk(concat([h, skips.pop()], axis=1))
        return ops.conv2d(h, self.head_w, self.head_b)


class _TokenNet(SegNetwork):
    """Shared encoder-decoder topology of the attention and SSM backbones."""

    PATCH = 4
    WINDOW = 4
    D_STATE = 8
    LR_SCALE = 5.0

    def __init__(self, kind, image_size, num_classes, width, rng):
        super().__init__(kind, image_size, num_classes, width)
        side = image_size // self.PATCH
        if image_size % self.PATCH or side < 2:
            raise ValueError(
                f"{kind} backbone needs image_size divisible by {self.PATCH} "
                f"with at least 2x2 token map, got {image_size}")
        # as many merge stages as the token map allows, at most 3
        self.stages = 0
        s = side
        while self.stages < 3 and s % 2 == 0 and s >= 4:
            self.stages += 1
            s //= 2
        self.embed = self._register(PatchEmbed("embed", rng, self.PATCH, width))
        self.enc, self.merge, self.dec, self.expand = [], [], [], []
        dim = width
        for i in range(self.stages):
            self.enc.append(self._register(self._pair(f"enc{i}", rng, dim)))
            self.merge.append(self._register(PatchMerge(f"merge{i}", rng, dim)))
            dim *= 2
        self.bottleneck = self._register(self._pair("bottleneck", rng, dim))
        for i in range(self.stages):
            self.expand.append(self._register(PatchExpand(f"expand{i}", rng, dim)))
            dim //= 2
            self.dec.append(self._register(self._pair(f"dec{i}", rng, dim)))
        self.final = self._register(
            FinalPatchExpand("final", rng, width, self.PATCH))
        # full-resolution stem skip: token features alone converge too
        # slowly under plain SGD at this scale
        self.stem_w = self.add_param(
            "stem.w", he_uniform(rng, (width, 1, 3, 3), 9))
        self.stem_b = self.add_param("stem.b", np.zeros(width, np.float32))
        self.stem_g = self.add_param("stem.g", np.ones(width, np.float32))
        self.stem_be = self.add_param("stem.be", np.zeros(width, np.float32))
        self.head_w = self.add_param(
            "head.w", he_uniform(rng, (num_classes, 2 * width), 2 * width))
        self.head_b = self.add_param("head.b", np.zeros(num_classes, np.float32))

    def _pair(self, prefix, rng, dim):
        if self.kind == "attn":
            heads = max(1, dim // 8)
            return SwinBlockPair(prefix, rng, dim, self.WINDOW, heads)
        return VssBlockPair(prefix, rng, dim, self.D_STATE)

    def _forward(self, x: Tensor) -> Tensor:
        N = x.shape[0]
        side = self.image_size // self.PATCH
        t = self.embed(x)
        s = side
        skips = []
        for i in range(self.stages):
            t = self.enc[i](t, s, s)
            skips.append((t, s))
            t = self.merge[i](t, s, s)
            s //= 2
        t = self.bottleneck(t, s, s)
        for i in range(self.stages):
            t = self.expand[i](t, s, s)
            s *= 2
            skip, _ = skips.pop()
            t = self.dec[i](t + skip, s, s)
        t = self.final(t, s, s)
        stem = ops.group_norm(
            ops.conv2d(x, self.stem_w, self.stem_b, padding=1),
            self.stem_g, self.stem_be, _norm_groups(self.width)).relu()
        stok = stem.reshape(N, self.width,
                            self.image_size * self.image_size) \
            .transpose(0, 2, 1)
        t = concat([t, stok], axis=2)
        logits = ops.linear(t, self.head_w, self.head_b)
        return logits.transpose(0, 2, 1).reshape(
            N, self.num_classes, self.image_size, self.image_size)


def build(kind: str, image_size: int, num_classes: int, width: int,
          seed: int) -> SegNetwork:
    """Construct a backbone with seeded He-uniform initialization."""
    if kind not in BACKBONE_KINDS:
        raise ValueError(f"unknown backbone kind {kind!r}; "
                         f"expected one of {BACKBONE_KINDS}")
    rng = np.random.default_rng(seed)
    if kind == "cnn":
        return _UNet(image_size, num_classes, width, rng)
    return _TokenNet(kind, image_size, num_classes, width, rng)
