"""Reverse-mode building blocks shared by the toy encoders.

Every op is a pair of pure functions: ``*_fwd(...) -> (out, cache)`` and
``*_bwd(cache, dout) -> grads``. All math is float64.
"""

from __future__ import annotations

import numpy as np

_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def linear_fwd(x, w, b):
    return x @ w + b, (x, w)


def linear_bwd(cache, dy, need_param_grads=True):
    x, w = cache
    dx = dy @ w.T
    if not need_param_grads:
        return dx, None, None
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dx, x2.T @ dy2, dy2.sum(axis=0)


def gelu_fwd(x):
    u = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), (x, t)


def gelu_bwd(cache, dy):
    x, t = cache
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def layernorm_fwd(x, g, b, eps=1e-6):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def layernorm_bwd(cache, dy, need_param_grads=True):
    xhat, inv, g = cache
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    if not need_param_grads:
        return dx, None, None
    axes = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=axes), dy.sum(axis=axes)


def softmax_fwd(x):
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    s = e / e.sum(axis=-1, keepdims=True)
    return s, s


def softmax_bwd(s, dy):
    return s * (dy - (dy * s).sum(axis=-1, keepdims=True))


def attention_fwd(h, wqkv, bqkv, wo, bo, n_heads, key_mask=None):
    """Multi-head self-attention. h: (B, n, d). key_mask: (B, n) bool, True=keep."""
    bsz, n, d = h.shape
    dh = d // n_heads
    qkv, c_qkv = linear_fwd(h, wqkv, bqkv)  # (B, n, 3d)
    qkv = qkv.reshape(bsz, n, 3, n_heads, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]  # (B, H, n, dh)
    scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh)
    if key_mask is not None:
        scores = scores + np.where(key_mask, 0.0, -1e9)[:, None, None, :]
    attn, c_sm = softmax_fwd(scores)
    ctx = attn @ v  # (B, H, n, dh)
    ctx2 = ctx.transpose(0, 2, 1, 3).reshape(bsz, n, d)
    out, c_o = linear_fwd(ctx2, wo, bo)
    return out, (c_qkv, q, k, v, c_sm, ctx2, c_o, n_heads)


def attention_bwd(cache, dy, need_param_grads=True):
    c_qkv, q, k, v, attn, ctx2, c_o, n_heads = cache
    bsz, n, d = ctx2.shape
    dh = d // n_heads
    dctx2, dwo, dbo = linear_bwd(c_o, dy, need_param_grads)
    dctx = dctx2.reshape(bsz, n, n_heads, dh).transpose(0, 2, 1, 3)
    dattn = dctx @ v.transpose(0, 1, 3, 2)
    dv = attn.transpose(0, 1, 3, 2) @ dctx
    dscores = softmax_bwd(attn, dattn) / np.sqrt(dh)
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q
    dqkv = np.stack([dq, dk, dv], axis=0)  # (3, B, H, n, dh)
    dqkv = dqkv.transpose(1, 3, 0, 2, 4).reshape(bsz, n, 3 * d)
    dh_, dwqkv, dbqkv = linear_bwd(c_qkv, dqkv, need_param_grads)
    grads = {"wqkv": dwqkv, "bqkv": dbqkv, "wo": dwo, "bo": dbo} if need_param_grads else None
    return dh_, grads


def avgpool2_fwd(x):
    b, c, h, w = x.shape
    return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5)), (h, w)


def avgpool2_bwd(cache, dy):
    h, w = cache
    b, c = dy.shape[:2]
    dx = np.broadcast_to(dy[:, :, :, None, :, None] / 4.0, (b, c, h // 2, 2, w // 2, 2))
    return dx.reshape(b, c, h, w)
