"""Structured differentiable operations: convolution, pooling, resampling,
normalization, windowed attention, and the selective-scan recurrence.

Convolutions are lowered to im2col + GEMM; the selective scan (which is
inherently sequential over the token axis) runs as numba-compiled kernels for
both forward and backward passes.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

__all__ = [
    "linear", "conv2d", "depthwise_conv2d", "maxpool2x",
    "bilinear_upsample2x", "layer_norm", "group_norm",
    "window_attention", "selective_scan",
]


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x (..., in) @ weight (out, in)^T + bias (out,)."""
    y = x.matmul(weight.transpose(1, 0))
    if bias is not None:
        y = y + bias
    return y


# ---------------------------------------------------------------------------
# convolution

from numba import njit


@njit(cache=True)
def _im2col_kernel(xp, K, stride, OH, OW, cols):
    N, C = xp.shape[0], xp.shape[1]
    for n in range(N):
        for oh in range(OH):
            for ow in range(OW):
                p = oh * OW + ow
                q = 0
                for c in range(C):
                    for i in range(K):
                        for j in range(K):
                            cols[n, p, q] = xp[n, c, oh * stride + i,
                                               ow * stride + j]
                            q += 1


@njit(cache=True)
def _col2im_kernel(gcols, K, stride, OH, OW, gxp):
    N, C = gxp.shape[0], gxp.shape[1]
    for n in range(N):
        for oh in range(OH):
            for ow in range(OW):
                p = oh * OW + ow
                q = 0
                for c in range(C):
                    for i in range(K):
                        for j in range(K):
                            gxp[n, c, oh * stride + i, ow * stride + j] += \
                                gcols[n, p, q]
                            q += 1


def _im2col(x: np.ndarray, K: int, stride: int, padding: int):
    N, C, H, W = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    OH = (H + 2 * padding - K) // stride + 1
    OW = (W + 2 * padding - K) // stride + 1
    cols = np.empty((N, OH * OW, C * K * K), dtype=x.dtype)
    _im2col_kernel(np.ascontiguousarray(x), K, stride, OH, OW, cols)
    return cols, OH, OW


def _col2im(cols: np.ndarray, x_shape, K: int, stride: int, padding: int,
            OH: int, OW: int) -> np.ndarray:
    N, C, H, W = x_shape
    xp = np.zeros((N, C, H + 2 * padding, W + 2 * padding), dtype=cols.dtype)
    _col2im_kernel(np.ascontiguousarray(cols), K, stride, OH, OW, xp)
    if padding:
        return xp[:, :, padding:-padding, padding:-padding]
    return xp


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2D convolution: x (N,C,H,W), weight (O,C,K,K), bias (O,)."""
    N, C, H, W = x.shape
    O, I, K, K2 = weight.shape
    if K != K2 or K % 2 != 1:
        raise ValueError(f"kernel must be square with odd size, got {weight.shape}")
    if I != C:
        raise ValueError(f"input has {C} channels but kernel expects {I}")
    cols, OH, OW = _im2col(x.data, K, stride, padding)
    wmat = weight.data.reshape(O, I * K * K)
    out_data = np.matmul(cols, wmat.T)           # (N, OH*OW, O)
    if bias is not None:
        out_data += bias.data
    out_data = out_data.transpose(0, 2, 1).reshape(N, O, OH, OW)
    parents = (x, weight) if bias is None else (x, weight, bias)
    out = Tensor(out_data, _parents=parents)

    def bwd(g):
        gmat = np.ascontiguousarray(
            g.reshape(N, O, OH * OW).transpose(0, 2, 1))  # (N, OH*OW, O)
        if weight.requires_grad:
            gw = np.matmul(gmat.reshape(-1, O).T, cols.reshape(-1, I * K * K))
            weight._accum(gw.reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias._accum(gmat.sum(axis=(0, 1)))
        if x.requires_grad:
            gcols = np.matmul(gmat, wmat)        # (N, OH*OW, C*K*K)
            x._accum(_col2im(gcols, x.shape, K, stride, padding, OH, OW))
    out._bwd = bwd
    return out


def depthwise_conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     padding: int = 1) -> Tensor:
    """Per-channel convolution: x (N,C,H,W), weight (C,K,K), bias (C,)."""
    N, C, H, W = x.shape
    Cw, K, K2 = weight.shape
    if Cw != C or K != K2:
        raise ValueError(f"depthwise kernel {weight.shape} does not match {C} channels")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_data = np.zeros_like(x.data)
    for i in range(K):
        for j in range(K):
            out_data += xp[:, :, i:i + H, j:j + W] * weight.data[None, :, i, j, None, None]
    if bias is not None:
        out_data += bias.data[None, :, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)
    out = Tensor(out_data, _parents=parents)

    def bwd(g):
        if weight.requires_grad:
            gw = np.empty_like(weight.data)
            for i in range(K):
                for j in range(K):
                    gw[:, i, j] = (g * xp[:, :, i:i + H, j:j + W]).sum(axis=(0, 2, 3))
            weight._accum(gw)
        if bias is not None and bias.requires_grad:
            bias._accum(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(K):
                for j in range(K):
                    gxp[:, :, i:i + H, j:j + W] += g * weight.data[None, :, i, j, None, None]
            x._accum(gxp[:, :, padding:H + padding, padding:W + padding]
                     if padding else gxp)
    out._bwd = bwd
    return out


# ---------------------------------------------------------------------------
# resolution changes

def maxpool2x(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; ties resolve to the first window element."""
    N, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"maxpool2x needs even spatial dims, got {H}x{W}")
    win = x.data.reshape(N, C, H // 2, 2, W // 2, 2).transpose(
        0, 1, 2, 4, 3, 5).reshape(N, C, H // 2, W // 2, 4)
    idx = win.argmax(axis=-1)
    out_data = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    out = Tensor(out_data, _parents=(x,))

    def bwd(g):
        gwin = np.zeros_like(win)
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
        x._accum(gwin.reshape(N, C, H // 2, W // 2, 2, 2).transpose(
            0, 1, 2, 4, 3, 5).reshape(N, C, H, W))
    out._bwd = bwd
    return out


_interp_cache: dict = {}


def _interp_matrix(n_in: int, dtype) -> np.ndarray:
    """Row-stochastic (2n x n) bilinear 2x interpolation matrix (align_corners=False)."""
    key = (n_in, np.dtype(dtype).name)
    if key not in _interp_cache:
        M = np.zeros((2 * n_in, n_in), dtype=np.float64)
        for i in range(2 * n_in):
            src = (i + 0.5) / 2.0 - 0.5
            j0 = int(np.floor(src))
            w = src - j0
            j0c = min(max(j0, 0), n_in - 1)
            j1c = min(max(j0 + 1, 0), n_in - 1)
            M[i, j0c] += 1.0 - w
            M[i, j1c] += w
        _interp_cache[key] = M.astype(dtype)
    return _interp_cache[key]


def bilinear_upsample2x(x: Tensor) -> Tensor:
    """Bilinear 2x upsampling of (N,C,H,W); exact linear map, so the backward
    pass is the transposed interpolation."""
    N, C, H, W = x.shape
    Mh = _interp_matrix(H, x.dtype)
    Mw = _interp_matrix(W, x.dtype)
    out_data = np.einsum("ih,nchw,jw->ncij", Mh, x.data, Mw, optimize=True)
    out = Tensor(out_data, _parents=(x,))
    out._bwd = lambda g: x._accum(
        np.einsum("ih,ncij,jw->nchw", Mh, g, Mw, optimize=True))
    return out


# ---------------------------------------------------------------------------
# normalization

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale/shift by gamma/beta."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data, _parents=(x, gamma, beta))

    def bwd(g):
        if gamma.requires_grad:
            red = tuple(range(g.ndim - 1))
            gamma._accum((g * xhat).sum(axis=red))
            beta._accum(g.sum(axis=red))
        if x.requires_grad:
            gh = g * gamma.data
            m1 = gh.mean(axis=-1, keepdims=True)
            m2 = (gh * xhat).mean(axis=-1, keepdims=True)
            x._accum(inv * (gh - m1 - xhat * m2))
    out._bwd = bwd
    return out


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int,
               eps: float = 1e-5) -> Tensor:
    """Group normalization over (C/groups, H, W) per sample; batch-free."""
    N, C, H, W = x.shape
    if C % groups:
        raise ValueError(f"{C} channels not divisible into {groups} groups")
    xg = x.data.reshape(N, groups, -1)
    mu = xg.mean(axis=-1, keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).reshape(N, C, H, W)
    out = Tensor(xhat * gamma.data[None, :, None, None]
                 + beta.data[None, :, None, None], _parents=(x, gamma, beta))

    def bwd(g):
        if gamma.requires_grad:
            gamma._accum((g * xhat).sum(axis=(0, 2, 3)))
            beta._accum(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gh = (g * gamma.data[None, :, None, None]).reshape(N, groups, -1)
            xh = xhat.reshape(N, groups, -1)
            m1 = gh.mean(axis=-1, keepdims=True)
            m2 = (gh * xh).mean(axis=-1, keepdims=True)
            x._accum((inv * (gh - m1 - xh * m2)).reshape(N, C, H, W))
    out._bwd = bwd
    return out


# ---------------------------------------------------------------------------
# windowed attention

def window_attention(tokens: Tensor, wq: Tensor, bq: Tensor, wk: Tensor,
                     bk: Tensor, wv: Tensor, bv: Tensor, wo: Tensor,
                     bo: Tensor, num_heads: int) -> Tensor:
    """Multi-head self-attention within each window.

    tokens: (num_windows, window_len, dim); all projections are (dim, dim).
    Attention never crosses window boundaries.
    """
    nw, wl, dim = tokens.shape
    if dim % num_heads:
        raise ValueError(f"dim {dim} not divisible by {num_heads} heads")
    dh = dim // num_heads

    def split_heads(t: Tensor) -> Tensor:
        return t.reshape(nw, wl, num_heads, dh).transpose(0, 2, 1, 3)

    q = split_heads(linear(tokens, wq, bq))
    k = split_heads(linear(tokens, wk, bk))
    v = split_heads(linear(tokens, wv, bv))
    attn = (q.matmul(k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))).softmax(axis=-1)
    ctx = attn.matmul(v).transpose(0, 2, 1, 3).reshape(nw, wl, dim)
    return linear(ctx, wo, bo)


# ---------------------------------------------------------------------------
# selective scan (sequential SSM recurrence)



@njit(cache=True)
def _scan_fwd(x, delta, A, B, C, D, h, y):
    Nb, L, dn = x.shape
    ds = A.shape[1]
    for b in range(Nb):
        for t in range(L):
            for n in range(dn):
                xv = x[b, t, n]
                dv = delta[b, t, n]
                acc = 0.0
                for s in range(ds):
                    a = np.exp(dv * A[n, s])
                    hp = h[b, t - 1, n, s] if t > 0 else 0.0
                    hv = a * hp + dv * B[b, t, s] * xv
                    h[b, t, n, s] = hv
                    acc += C[b, t, s] * hv
                y[b, t, n] = acc + D[n] * xv


@njit(cache=True)
def _scan_bwd(x, delta, A, B, C, D, h, gy, gx, gdelta, gA, gB, gC, gD, ghc):
    Nb, L, dn = x.shape
    ds = A.shape[1]
    for b in range(Nb):
        ghc[:] = 0.0
        for t in range(L - 1, -1, -1):
            for n in range(dn):
                xv = x[b, t, n]
                dv = delta[b, t, n]
                gyv = gy[b, t, n]
                gD_n = gyv * xv
                gx_v = gyv * D[n]
                gd_v = 0.0
                for s in range(ds):
                    a = np.exp(dv * A[n, s])
                    hv = h[b, t, n, s]
                    hp = h[b, t - 1, n, s] if t > 0 else 0.0
                    gh = gyv * C[b, t, s] + ghc[n, s]
                    gC[b, t, s] += gyv * hv
                    # through h_t = a*h_{t-1} + dv*B*x
                    ga = gh * hp
                    gA[n, s] += ga * dv * a
                    gd_v += ga * A[n, s] * a + gh * B[b, t, s] * xv
                    gB[b, t, s] += gh * dv * xv
                    gx_v += gh * dv * B[b, t, s]
                    ghc[n, s] = gh * a
                gx[b, t, n] = gx_v
                gdelta[b, t, n] = gd_v
                gD[n] += gD_n


def selective_scan(x: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor,
                   D: Tensor) -> Tensor:
    """Input-dependent SSM recurrence along the token axis.

    Shapes (Nb = batch, L = sequence length, dn = channels, ds = state size):
    x, delta (Nb,L,dn); B, C (Nb,L,ds); A (dn,ds); D (dn,).  2D inputs
    (L,dn)/(L,ds) are treated as batch 1.  Per channel n and state s:

        h_t = exp(delta_t * A) * h_{t-1} + delta_t * B_t * x_t
        y_t = <C_t, h_t> + D * x_t        with h_0 = 0.

    delta must be non-negative (softplus upstream; 0 allowed only in tests).
    """
    squeeze = x.ndim == 2
    if squeeze:
        x, delta, B, C = (t.reshape(1, *t.shape) for t in (x, delta, B, C))
    if np.any(delta.data < 0):
        raise ValueError("selective_scan requires non-negative delta")
    Nb, L, dn = x.shape
    ds = A.shape[1]
    dt = x.dtype
    h = np.empty((Nb, L, dn, ds), dtype=dt)
    y = np.empty((Nb, L, dn), dtype=dt)
    _scan_fwd(x.data, delta.data, A.data, B.data, C.data, D.data, h, y)
    out = Tensor(y, _parents=(x, delta, A, B, C, D))

    def bwd(g):
        gx = np.zeros_like(x.data)
        gdelta = np.zeros_like(delta.data)
        gA = np.zeros_like(A.data)
        gB = np.zeros_like(B.data)
        gC = np.zeros_like(C.data)
        gD = np.zeros_like(D.data)
        ghc = np.zeros((dn, ds), dtype=dt)
        _scan_bwd(x.data, delta.data, A.data, B.data, C.data, D.data, h,
                  np.ascontiguousarray(g), gx, gdelta, gA, gB, gC, gD, ghc)
        if x.requires_grad:
            x._accum(gx)
        if delta.requires_grad:
            delta._accum(gdelta)
        if A.requires_grad:
            A._accum(gA)
        if B.requires_grad:
            B._accum(gB)
        if C.requires_grad:
            C._accum(gC)
        if D.requires_grad:
            D._accum(gD)
    out._bwd = bwd
    if squeeze:
        out = out.reshape(L, dn)
    return out
