"""Layer primitives used by the network, each with a hand-written backward.

Layout convention is channels-last on a 2-D grid: ``(B, H, W, F)`` where H
is the electrode axis, W the time axis and F the feature axis. Kernels are
``(kh, kw, F_in, F_out)`` and convolution is cross-correlation.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, add, as_tensor, make_node, matmul, mul, reshape, transpose, unbroadcast

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772

BN_MOMENTUM = 0.99
BN_EPSILON = 1e-3


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    a, b = v
    return int(a), int(b)


def _same_pads(size: int, k: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def _pad_input(x: np.ndarray, kernel_hw, stride_hw, padding: str):
    kh, kw = kernel_hw
    sh, sw = stride_hw
    if padding == "valid":
        pads = ((0, 0), (0, 0))
    elif padding == "same":
        pads = (_same_pads(x.shape[1], kh, sh), _same_pads(x.shape[2], kw, sw))
    else:
        raise ValueError(f"padding must be 'valid' or 'same', got {padding!r}")
    if any(p for pair in pads for p in pair):
        x = np.pad(x, ((0, 0), pads[0], pads[1], (0, 0)))
    hp, wp = x.shape[1], x.shape[2]
    if kh > hp or kw > wp:
        raise ValueError(
            f"kernel {kh}x{kw} larger than padded input {hp}x{wp}"
        )
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    return x, pads, ho, wo


def _window(i, j, ho, wo, sh, sw):
    return (
        slice(None),
        slice(i, i + sh * (ho - 1) + 1, sh),
        slice(j, j + sw * (wo - 1) + 1, sw),
    )


def _unpad(g: np.ndarray, pads) -> np.ndarray:
    (t, b), (l, r) = pads
    return g[:, t : g.shape[1] - b, l : g.shape[2] - r, :]


# convolutions -------------------------------------------------------------


def conv2d(x: Tensor, kernel: Tensor, stride=1, padding: str = "valid") -> Tensor:
    """Cross-correlate ``x`` (B,H,W,Fin) with ``kernel`` (kh,kw,Fin,Fout)."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    kh, kw, fin, fout = kernel.shape
    if x.ndim != 4 or x.shape[3] != fin:
        raise ValueError(f"conv2d: input {x.shape} incompatible with kernel {kernel.shape}")
    sh, sw = _pair(stride)
    xp, pads, ho, wo = _pad_input(x.data, (kh, kw), (sh, sw), padding)
    k = kernel.data
    out = np.zeros((x.shape[0], ho, wo, fout))
    for i in range(kh):
        for j in range(kw):
            out += xp[_window(i, j, ho, wo, sh, sw)] @ k[i, j]

    def backward(g):
        gk = np.zeros_like(k) if kernel.requires_grad else None
        gxp = np.zeros_like(xp) if x.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                win = _window(i, j, ho, wo, sh, sw)
                if gk is not None:
                    gk[i, j] = np.tensordot(xp[win], g, axes=([0, 1, 2], [0, 1, 2]))
                if gxp is not None:
                    gxp[win] += g @ k[i, j].T
        return (None if gxp is None else _unpad(gxp, pads)), gk

    return make_node(out, (x, kernel), backward)


def depthwise_conv2d(x: Tensor, kernel: Tensor, stride=1, padding: str = "valid") -> Tensor:
    """Per-feature convolution with a depth multiplier.

    ``kernel`` is (kh, kw, Fin, depth); output feature ``f`` comes from input
    feature ``f // depth`` and multiplier ``f % depth``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    kh, kw, fin, depth = kernel.shape
    if x.ndim != 4 or x.shape[3] != fin:
        raise ValueError(
            f"depthwise_conv2d: input {x.shape} incompatible with kernel {kernel.shape}"
        )
    sh, sw = _pair(stride)
    xp, pads, ho, wo = _pad_input(x.data, (kh, kw), (sh, sw), padding)
    b = x.shape[0]
    taps = kh * kw
    kr = kernel.data.reshape(taps, fin, depth).transpose(1, 0, 2)

    def patches():
        # (Fin, N, taps) windows; matched against (Fin, taps, depth) kernels
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::sh, ::sw][:, :ho, :wo]
        return win.reshape(-1, fin, taps).transpose(1, 0, 2)

    out = np.matmul(patches(), kr).transpose(1, 0, 2)

    def backward(g):
        gf = g.reshape(-1, fin, depth).transpose(1, 0, 2)
        gk = gxp = None
        if kernel.requires_grad:
            gk = np.matmul(patches().transpose(0, 2, 1), gf).transpose(1, 0, 2).reshape(kernel.shape)
        if x.requires_grad:
            gcols = np.matmul(gf, kr.transpose(0, 2, 1)).transpose(1, 0, 2)
            gcols = gcols.reshape(b, ho, wo, fin, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[_window(i, j, ho, wo, sh, sw)] += gcols[..., i, j]
        return (None if gxp is None else _unpad(gxp, pads)), gk

    return make_node(out.reshape(b, ho, wo, fin * depth), (x, kernel), backward)


def separable_conv2d(
    x: Tensor, depthwise_kernel: Tensor, pointwise_kernel: Tensor, stride=1, padding: str = "valid"
) -> Tensor:
    """Depthwise stage followed by a 1x1 pointwise mix (no bias)."""
    h = depthwise_conv2d(x, depthwise_kernel, stride=stride, padding=padding)
    return conv2d(h, pointwise_kernel, stride=1, padding="valid")


# normalization & activations ----------------------------------------------


class BatchNormState:
    """Running statistics for one batch-norm site."""

    def __init__(self, features: int):
        self.moving_mean = np.zeros(features)
        self.moving_var = np.ones(features)

    def copy(self) -> "BatchNormState":
        s = BatchNormState(self.moving_mean.size)
        s.moving_mean = self.moving_mean.copy()
        s.moving_var = self.moving_var.copy()
        return s


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    mode: str = "train",
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPSILON,
) -> Tensor:
    """Normalize over every axis but the last.

    In train mode the batch statistics are used and ``state`` is updated in
    place; in infer mode the running statistics are used.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        state.moving_mean = momentum * state.moving_mean + (1.0 - momentum) * mu
        state.moving_var = momentum * state.moving_var + (1.0 - momentum) * var
    elif mode == "infer":
        mu, var = state.moving_mean, state.moving_var
    else:
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = gamma.data * xhat + beta.data

    def backward(g):
        g_gamma = (g * xhat).sum(axis=axes)
        g_beta = g.sum(axis=axes)
        if mode == "train":
            n = x.data.size // x.shape[-1]
            gx = (gamma.data * inv_std / n) * (n * g - g_beta - xhat * g_gamma)
        else:
            gx = g * gamma.data * inv_std
        return gx, g_gamma, g_beta

    return make_node(out, (x, gamma, beta), backward)


def selu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    e = np.exp(np.minimum(x.data, 0.0))
    out = np.where(pos, SELU_LAMBDA * x.data, SELU_LAMBDA * SELU_ALPHA * (e - 1.0))
    del e

    def backward(g):
        # on the negative side out + lambda*alpha == lambda*alpha*exp(x)
        return (g * np.where(pos, SELU_LAMBDA, out + SELU_LAMBDA * SELU_ALPHA),)

    return make_node(out, (x,), backward)


def prelu(x: Tensor, alpha: Tensor) -> Tensor:
    """``x`` for x > 0, ``alpha * x`` otherwise; ``alpha`` broadcasts."""
    x, alpha = as_tensor(x), as_tensor(alpha)
    pos = x.data > 0
    out = np.where(pos, x.data, alpha.data * x.data)

    def backward(g):
        gx = np.where(pos, g, g * alpha.data)
        ga = unbroadcast(np.where(pos, 0.0, g * x.data), alpha.shape)
        return gx, ga

    return make_node(out, (x, alpha), backward)


# pooling, dropout, dense ----------------------------------------------------


def avg_pool(x: Tensor, pool, stride) -> Tensor:
    """Unpadded mean pooling over the (H, W) grid of (B,H,W,F)."""
    x = as_tensor(x)
    ph, pw = _pair(pool)
    sh, sw = _pair(stride)
    b, h, w, f = x.shape
    if ph > h or pw > w:
        raise ValueError(f"pool {ph}x{pw} larger than input {h}x{w}")
    ho = (h - ph) // sh + 1
    wo = (w - pw) // sw + 1
    scale = 1.0 / (ph * pw)
    out = np.zeros((b, ho, wo, f))
    for i in range(ph):
        for j in range(pw):
            out += x.data[_window(i, j, ho, wo, sh, sw)]
    out *= scale

    def backward(g):
        gx = np.zeros_like(x.data)
        gs = g * scale
        for i in range(ph):
            for j in range(pw):
                gx[_window(i, j, ho, wo, sh, sw)] += gs
        return (gx,)

    return make_node(out, (x,), backward)


def dropout(x: Tensor, rate: float, mode: str, rng) -> Tensor:
    """Inverted dropout; identity in infer mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if mode == "infer" or rate == 0.0:
        return x
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return make_node(x.data * keep, (x,), lambda g: (g * keep,))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ W (+ b)`` over the last axis."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if x.ndim == 2:
        y = matmul(x, weight)
    else:
        lead = x.shape[:-1]
        y = reshape(matmul(reshape(x, (-1, x.shape[-1])), weight), lead + (weight.shape[1],))
    return y if bias is None else add(y, bias)


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None,
            uniform_fallback: bool = False) -> Tensor:
    """Max-stabilized softmax; masked-out positions get exactly zero."""
    x = as_tensor(x)
    if mask is None:
        z = x.data - x.data.max(axis=axis, keepdims=True)
        e = np.exp(z)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        empty = ~mask.any(axis=axis, keepdims=True)
        if empty.any():
            if not uniform_fallback:
                raise ValueError("softmax: a slice has every position masked")
            mask = mask | np.broadcast_to(empty, x.shape)
        zmax = np.where(mask, x.data, -np.inf).max(axis=axis, keepdims=True)
        e = np.where(mask, np.exp(np.where(mask, x.data - zmax, 0.0)), 0.0)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return make_node(p, (x,), backward)


# positional encoding & attention --------------------------------------------


def positional_encoding(length: int, dim: int) -> np.ndarray:
    """Sinusoidal table: sin on even features, cos on odd ones."""
    if dim % 2:
        raise ValueError(f"positional encoding needs an even feature dim, got {dim}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / dim)
    pe = np.empty((length, dim))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def scaled_add(x: Tensor, pe: np.ndarray, scale: Tensor) -> Tensor:
    return add(x, mul(scale, Tensor(pe)))


def multi_head_attention(
    query: Tensor,
    key: Tensor,
    value: Tensor,
    params: dict[str, Tensor],
    heads: int,
    key_dim: int,
    value_dim: int,
    dropout_rate: float = 0.0,
    mode: str = "infer",
    rng=None,
    return_scores: bool = False,
):
    """Scaled dot-product attention over the second-to-last axis.

    Inputs are (B, S, D). ``params`` holds ``query/key/value/output`` kernels
    and biases: (D, heads*key_dim) etc. and (heads*value_dim, D) for output.
    """
    query, key, value = as_tensor(query), as_tensor(key), as_tensor(value)
    if query.ndim != 3 or key.shape != value.shape or query.shape[-1] != key.shape[-1]:
        raise ValueError(
            f"attention shape mismatch: q={query.shape} k={key.shape} v={value.shape}"
        )
    b, sq, _ = query.shape
    sk = key.shape[1]

    def split(t, s, d):
        return transpose(reshape(t, (b, s, heads, d)), (0, 2, 1, 3))

    q = split(linear(query, params["query.kernel"], params["query.bias"]), sq, key_dim)
    k = split(linear(key, params["key.kernel"], params["key.bias"]), sk, key_dim)
    v = split(linear(value, params["value.kernel"], params["value.bias"]), sk, value_dim)
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(key_dim))
    weights = softmax(scores, axis=-1)
    dropped = dropout(weights, dropout_rate, mode, rng)
    ctx = transpose(matmul(dropped, v), (0, 2, 1, 3))
    ctx = reshape(ctx, (b, sq, heads * value_dim))
    out = linear(ctx, params["output.kernel"], params["output.bias"])
    if return_scores:
        return out, weights.data
    return out
