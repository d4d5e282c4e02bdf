"""Building blocks for the three backbone families: double-conv blocks,
shifted-window attention block pairs, gated selective-scan block pairs, and
the patch-level resolution changes used by the token networks.

Each block is a small class owning named parameter Tensors; ``params()``
yields ``(name, Tensor)`` pairs with the block prefix applied.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, concat
from . import ops

__all__ = [
    "he_uniform", "ConvBlock", "SwinBlockPair", "VssBlockPair",
    "PatchEmbed", "PatchMerge", "PatchExpand", "FinalPatchExpand",
    "scan_orders",
]


def he_uniform(rng: np.random.Generator, shape, fan_in: int,
               dtype=np.float32) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Block:
    """Base: named-parameter bookkeeping."""

    def __init__(self, prefix: str):
        self.prefix = prefix
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True, name=f"{self.prefix}.{name}")
        self._params[name] = t
        return t

    def params(self):
        for name, t in self._params.items():
            yield f"{self.prefix}.{name}", t


def _norm_groups(channels: int) -> int:
    for g in (8, 4, 2):
        if channels % g == 0:
            return g
    return 1


class ConvBlock(Block):
    """(conv3x3 -> group norm -> ReLU) twice."""

    def __init__(self, prefix, rng, in_ch: int, out_ch: int):
        super().__init__(prefix)
        self.out_ch = out_ch
        self.w1 = self.add("w1", he_uniform(rng, (out_ch, in_ch, 3, 3), in_ch * 9))
        self.b1 = self.add("b1", np.zeros(out_ch, np.float32))
        self.g1 = self.add("g1", np.ones(out_ch, np.float32))
        self.be1 = self.add("be1", np.zeros(out_ch, np.float32))
        self.w2 = self.add("w2", he_uniform(rng, (out_ch, out_ch, 3, 3), out_ch * 9))
        self.b2 = self.add("b2", np.zeros(out_ch, np.float32))
        self.g2 = self.add("g2", np.ones(out_ch, np.float32))
        self.be2 = self.add("be2", np.zeros(out_ch, np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        g = _norm_groups(self.out_ch)
        x = ops.conv2d(x, self.w1, self.b1, padding=1)
        x = ops.group_norm(x, self.g1, self.be1, g).relu()
        x = ops.conv2d(x, self.w2, self.b2, padding=1)
        return ops.group_norm(x, self.g2, self.be2, g).relu()


# ---------------------------------------------------------------------------
# windowed attention

def _window_partition(x: Tensor, H: int, W: int, win: int) -> Tensor:
    """(N, H*W, d) -> (N*nW, win*win, d)."""
    N, L, d = x.shape
    t = x.reshape(N, H // win, win, W // win, win, d)
    t = t.transpose(0, 1, 3, 2, 4, 5)
    return t.reshape(N * (H // win) * (W // win), win * win, d)


def _window_reverse(x: Tensor, N: int, H: int, W: int, win: int) -> Tensor:
    d = x.shape[-1]
    t = x.reshape(N, H // win, W // win, win, win, d).transpose(0, 1, 3, 2, 4, 5)
    return t.reshape(N, H * W, d)


class SwinBlockPair(Block):
    """Two transformer blocks on a token map; the second uses windows
    cyclically shifted by window/2 (no attention mask at this scale)."""

    def __init__(self, prefix, rng, dim: int, window: int, heads: int, mlp_ratio: int = 2):
        super().__init__(prefix)
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by {heads} heads")
        self.dim, self.window, self.heads = dim, window, heads
        hid = dim * mlp_ratio
        for i in range(2):
            p = f"b{i}"
            self.add(f"{p}.ln1_g", np.ones(dim, np.float32))
            self.add(f"{p}.ln1_b", np.zeros(dim, np.float32))
            for nm in ("wq", "wk", "wv", "wo"):
                self.add(f"{p}.{nm}", he_uniform(rng, (dim, dim), dim))
                self.add(f"{p}.{nm[1]}b", np.zeros(dim, np.float32))
            self.add(f"{p}.ln2_g", np.ones(dim, np.float32))
            self.add(f"{p}.ln2_b", np.zeros(dim, np.float32))
            self.add(f"{p}.mlp_w1", he_uniform(rng, (hid, dim), dim))
            self.add(f"{p}.mlp_b1", np.zeros(hid, np.float32))
            self.add(f"{p}.mlp_w2", he_uniform(rng, (dim, hid), hid))
            self.add(f"{p}.mlp_b2", np.zeros(dim, np.float32))

    def _one(self, x: Tensor, H: int, W: int, i: int, shift: int) -> Tensor:
        P = self._params
        p = f"b{i}"
        N = x.shape[0]
        win = min(self.window, H, W)
        h = ops.layer_norm(x, P[f"{p}.ln1_g"], P[f"{p}.ln1_b"])
        if shift:
            h = h.reshape(N, H, W, self.dim).roll((-shift, -shift), axis=(1, 2)) \
                 .reshape(N, H * W, self.dim)
        wins = _window_partition(h, H, W, win)
        wins = ops.window_attention(
            wins, P[f"{p}.wq"], P[f"{p}.qb"], P[f"{p}.wk"], P[f"{p}.kb"],
            P[f"{p}.wv"], P[f"{p}.vb"], P[f"{p}.wo"], P[f"{p}.ob"], self.heads)
        h = _window_reverse(wins, N, H, W, win)
        if shift:
            h = h.reshape(N, H, W, self.dim).roll((shift, shift), axis=(1, 2)) \
                 .reshape(N, H * W, self.dim)
        x = x + h
        h = ops.layer_norm(x, P[f"{p}.ln2_g"], P[f"{p}.ln2_b"])
        h = ops.linear(h, P[f"{p}.mlp_w1"], P[f"{p}.mlp_b1"]).gelu()
        h = ops.linear(h, P[f"{p}.mlp_w2"], P[f"{p}.mlp_b2"])
        return x + h

    def __call__(self, x: Tensor, H: int, W: int) -> Tensor:
        win = min(self.window, H, W)
        x = self._one(x, H, W, 0, 0)
        return self._one(x, H, W, 1, win // 2)


# ---------------------------------------------------------------------------
# gated selective-scan blocks

def scan_orders(H: int, W: int) -> list[np.ndarray]:
    """Token-index permutations for the 4 scan directions: row-major
    forward/backward, column-major forward/backward."""
    raster = np.arange(H * W)
    colmajor = raster.reshape(H, W).T.reshape(-1)
    return [raster, raster[::-1].copy(), colmajor, colmajor[::-1].copy()]


class VssBlockPair(Block):
    """Two gated selective-scan blocks.  Inside each block the scan runs in
    4 directions over the token map (shared SSM parameters, different
    orderings) and the directional outputs are summed."""

    def __init__(self, prefix, rng, dim: int, d_state: int):
        super().__init__(prefix)
        self.dim, self.d_state = dim, d_state
        for i in range(2):
            p = f"b{i}"
            self.add(f"{p}.ln_g", np.ones(dim, np.float32))
            self.add(f"{p}.ln_b", np.zeros(dim, np.float32))
            self.add(f"{p}.in_w", he_uniform(rng, (dim, dim), dim))
            self.add(f"{p}.in_b", np.zeros(dim, np.float32))
            self.add(f"{p}.dw_w", he_uniform(rng, (dim, 3, 3), 9))
            self.add(f"{p}.dw_b", np.zeros(dim, np.float32))
            # projection to (delta_raw, B, C); delta bias set so that
            # softplus(delta_raw) starts in roughly [0.01, 0.1]
            xw = he_uniform(rng, (dim + 2 * d_state, dim), dim)
            xb = np.zeros(dim + 2 * d_state, np.float32)
            dt = np.exp(rng.uniform(np.log(0.01), np.log(0.1), size=dim))
            xb[:dim] = np.log(np.expm1(dt))  # inverse softplus
            self.add(f"{p}.xproj_w", xw)
            self.add(f"{p}.xproj_b", xb.astype(np.float32))
            # negative-real state matrix, skip gain 1
            A = -np.tile(np.arange(1, d_state + 1, dtype=np.float32), (dim, 1))
            self.add(f"{p}.A", A)
            self.add(f"{p}.D", np.ones(dim, np.float32))
            self.add(f"{p}.gate_w", he_uniform(rng, (dim, dim), dim))
            self.add(f"{p}.gate_b", np.zeros(dim, np.float32))
            self.add(f"{p}.out_w", he_uniform(rng, (dim, dim), dim))
            self.add(f"{p}.out_b", np.zeros(dim, np.float32))

    def _ss2d(self, u: Tensor, H: int, W: int, p: str) -> Tensor:
        P = self._params
        d, ds = self.dim, self.d_state
        dbc = ops.linear(u, P[f"{p}.xproj_w"], P[f"{p}.xproj_b"])
        delta = dbc[:, :, :d].softplus()
        B = dbc[:, :, d:d + ds]
        C = dbc[:, :, d + ds:]
        y = None
        for perm in scan_orders(H, W):
            yd = ops.selective_scan(u[:, perm, :], delta[:, perm, :],
                                    P[f"{p}.A"], B[:, perm, :], C[:, perm, :],
                                    P[f"{p}.D"])
            inv = np.argsort(perm)
            yd = yd[:, inv, :]
            y = yd if y is None else y + yd
        return y

    def _one(self, x: Tensor, H: int, W: int, i: int) -> Tensor:
        P = self._params
        p = f"b{i}"
        N = x.shape[0]
        h = ops.layer_norm(x, P[f"{p}.ln_g"], P[f"{p}.ln_b"])
        u = ops.linear(h, P[f"{p}.in_w"], P[f"{p}.in_b"])
        u = u.transpose(0, 2, 1).reshape(N, self.dim, H, W)
        u = ops.depthwise_conv2d(u, P[f"{p}.dw_w"], P[f"{p}.dw_b"], padding=1)
        u = u.reshape(N, self.dim, H * W).transpose(0, 2, 1).silu()
        y = self._ss2d(u, H, W, p)
        gate = ops.linear(h, P[f"{p}.gate_w"], P[f"{p}.gate_b"]).silu()
        out = ops.linear(y * gate, P[f"{p}.out_w"], P[f"{p}.out_b"])
        return x + out

    def __call__(self, x: Tensor, H: int, W: int) -> Tensor:
        x = self._one(x, H, W, 0)
        return self._one(x, H, W, 1)


# ---------------------------------------------------------------------------
# patch-level resolution changes

class PatchEmbed(Block):
    """Non-overlapping patch flattening + linear projection + norm."""

    def __init__(self, prefix, rng, patch: int, dim: int, in_ch: int = 1):
        super().__init__(prefix)
        self.patch, self.dim, self.in_ch = patch, dim, in_ch
        fan = in_ch * patch * patch
        self.add("w", he_uniform(rng, (dim, fan), fan))
        self.add("b", np.zeros(dim, np.float32))
        self.add("ln_g", np.ones(dim, np.float32))
        self.add("ln_b", np.zeros(dim, np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        N, C, H, W = x.shape
        p = self.patch
        if H % p or W % p:
            raise ValueError(f"image {H}x{W} not divisible by patch {p}")
        t = x.reshape(N, C, H // p, p, W // p, p).transpose(0, 2, 4, 1, 3, 5)
        t = t.reshape(N, (H // p) * (W // p), C * p * p)
        t = ops.linear(t, self._params["w"], self._params["b"])
        return ops.layer_norm(t, self._params["ln_g"], self._params["ln_b"])


class PatchMerge(Block):
    """2x2 neighborhood concat -> norm -> linear 4d -> 2d."""

    def __init__(self, prefix, rng, dim: int):
        super().__init__(prefix)
        self.dim = dim
        self.add("ln_g", np.ones(4 * dim, np.float32))
        self.add("ln_b", np.zeros(4 * dim, np.float32))
        self.add("w", he_uniform(rng, (2 * dim, 4 * dim), 4 * dim))

    def __call__(self, x: Tensor, H: int, W: int) -> Tensor:
        N, L, d = x.shape
        if H % 2 or W % 2:
            raise ValueError(f"patch_merge needs even map, got {H}x{W}")
        t = x.reshape(N, H, W, d)
        quads = concat([t[:, 0::2, 0::2, :], t[:, 1::2, 0::2, :],
                        t[:, 0::2, 1::2, :], t[:, 1::2, 1::2, :]], axis=-1)
        quads = quads.reshape(N, (H // 2) * (W // 2), 4 * d)
        quads = ops.layer_norm(quads, self._params["ln_g"], self._params["ln_b"])
        return quads.matmul(self._params["w"].transpose(1, 0))


class PatchExpand(Block):
    """linear d -> 2d, then rearrange into a 2x-larger map at d/2 channels."""

    def __init__(self, prefix, rng, dim: int):
        super().__init__(prefix)
        if dim % 2:
            raise ValueError(f"patch_expand needs even dim, got {dim}")
        self.dim = dim
        self.add("w", he_uniform(rng, (2 * dim, dim), dim))
        self.add("ln_g", np.ones(dim // 2, np.float32))
        self.add("ln_b", np.zeros(dim // 2, np.float32))

    def __call__(self, x: Tensor, H: int, W: int) -> Tensor:
        N, L, d = x.shape
        t = x.matmul(self._params["w"].transpose(1, 0))
        t = t.reshape(N, H, W, 2, 2, d // 2).transpose(0, 1, 3, 2, 4, 5)
        t = t.reshape(N, (2 * H) * (2 * W), d // 2)
        return ops.layer_norm(t, self._params["ln_g"], self._params["ln_b"])


class FinalPatchExpand(Block):
    """patch x patch upsampling back to pixel resolution, keeping dim."""

    def __init__(self, prefix, rng, dim: int, patch: int):
        super().__init__(prefix)
        self.dim, self.patch = dim, patch
        self.add("w", he_uniform(rng, (patch * patch * dim, dim), dim))
        self.add("ln_g", np.ones(dim, np.float32))
        self.add("ln_b", np.zeros(dim, np.float32))

    def __call__(self, x: Tensor, H: int, W: int) -> Tensor:
        N, L, d = x.shape
        p = self.patch
        t = x.matmul(self._params["w"].transpose(1, 0))
        t = t.reshape(N, H, W, p, p, d).transpose(0, 1, 3, 2, 4, 5)
        t = t.reshape(N, (p * H) * (p * W), d)
        return ops.layer_norm(t, self._params["ln_g"], self._params["ln_b"])
