"""Transformer building blocks with explicit forward/backward passes.

Everything is written against plain numpy arrays of shape (batch, tokens,
dim) so the whole network runs in whatever dtype the parameters carry:
float32 for training and checkpoints, float64 when tests compare analytic
gradients against central finite differences. Each forward returns the cache
its backward needs; backwards return input gradients plus a dict of
parameter gradients keyed like the parameter dict.
"""
from __future__ import annotations

import numpy as np
from scipy import special

LN_EPS = 1e-6
_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


# ---------------------------------------------------------------------------
# primitives


def linear_fwd(x, W, b):
    return x @ W + b, x


def linear_bwd(dy, cache, W):
    x = cache
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dx = dy @ W.T
    dW = x2.T @ dy2
    db = dy2.sum(axis=0)
    return dx, dW, db


def layernorm_fwd(x, gamma, beta):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return gamma * xhat + beta, (xhat, inv)


def layernorm_bwd(dy, cache, gamma):
    xhat, inv = cache
    dxhat = dy * gamma
    dgamma = (dy * xhat).reshape(-1, dy.shape[-1]).sum(axis=0)
    dbeta = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dgamma, dbeta


def gelu_fwd(x):
    # Exact (erf) form; the derivative is Phi(x) + x * phi(x).
    phi_cdf = 0.5 * (1.0 + special.erf(x * _INV_SQRT2))
    return x * phi_cdf, (x, phi_cdf)


def gelu_bwd(dy, cache):
    x, phi_cdf = cache
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return dy * (phi_cdf + x * pdf)


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_bwd(dy, s):
    return s * (dy - (dy * s).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# multi-head self-attention


def attention_fwd(x, p, prefix, heads):
    """x: (B, N, D). Parameter names are `{prefix}.{q,k,v,o}.{W,b}`."""
    B, N, D = x.shape
    dh = D // heads
    q, _ = linear_fwd(x, p[f"{prefix}.q.W"], p[f"{prefix}.q.b"])
    k, _ = linear_fwd(x, p[f"{prefix}.k.W"], p[f"{prefix}.k.b"])
    v, _ = linear_fwd(x, p[f"{prefix}.v.W"], p[f"{prefix}.v.b"])
    qh = q.reshape(B, N, heads, dh).transpose(0, 2, 1, 3)
    kh = k.reshape(B, N, heads, dh).transpose(0, 2, 1, 3)
    vh = v.reshape(B, N, heads, dh).transpose(0, 2, 1, 3)
    scale = 1.0 / np.sqrt(dh)
    scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale
    attn = softmax(scores)
    ctx = attn @ vh
    merged = ctx.transpose(0, 2, 1, 3).reshape(B, N, D)
    out, _ = linear_fwd(merged, p[f"{prefix}.o.W"], p[f"{prefix}.o.b"])
    return out, (x, qh, kh, vh, attn, merged)


def attention_bwd(dy, cache, p, prefix, heads):
    x, qh, kh, vh, attn, merged = cache
    B, N, D = x.shape
    dh = D // heads
    scale = 1.0 / np.sqrt(dh)
    grads = {}
    dmerged, grads[f"{prefix}.o.W"], grads[f"{prefix}.o.b"] = linear_bwd(
        dy, merged, p[f"{prefix}.o.W"]
    )
    dctx = dmerged.reshape(B, N, heads, dh).transpose(0, 2, 1, 3)
    dattn = dctx @ vh.transpose(0, 1, 3, 2)
    dvh = attn.transpose(0, 1, 3, 2) @ dctx
    dscores = softmax_bwd(dattn, attn) * scale
    dqh = dscores @ kh
    dkh = dscores.transpose(0, 1, 3, 2) @ qh
    dq = dqh.transpose(0, 2, 1, 3).reshape(B, N, D)
    dk = dkh.transpose(0, 2, 1, 3).reshape(B, N, D)
    dv = dvh.transpose(0, 2, 1, 3).reshape(B, N, D)
    dx_q, grads[f"{prefix}.q.W"], grads[f"{prefix}.q.b"] = linear_bwd(dq, x, p[f"{prefix}.q.W"])
    dx_k, grads[f"{prefix}.k.W"], grads[f"{prefix}.k.b"] = linear_bwd(dk, x, p[f"{prefix}.k.W"])
    dx_v, grads[f"{prefix}.v.W"], grads[f"{prefix}.v.b"] = linear_bwd(dv, x, p[f"{prefix}.v.W"])
    return dx_q + dx_k + dx_v, grads


# ---------------------------------------------------------------------------
# transformer block: pre-norm attention + pre-norm MLP, both residual


def block_fwd(x, p, prefix, heads):
    n1, c_ln1 = layernorm_fwd(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
    a, c_attn = attention_fwd(n1, p, f"{prefix}.attn", heads)
    x1 = x + a
    n2, c_ln2 = layernorm_fwd(x1, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
    h, c_fc1 = linear_fwd(n2, p[f"{prefix}.mlp.fc1.W"], p[f"{prefix}.mlp.fc1.b"])
    g, c_gelu = gelu_fwd(h)
    m, c_fc2 = linear_fwd(g, p[f"{prefix}.mlp.fc2.W"], p[f"{prefix}.mlp.fc2.b"])
    x2 = x1 + m
    return x2, (c_ln1, c_attn, c_ln2, c_fc1, c_gelu, c_fc2)


def block_bwd(dy, cache, p, prefix, heads):
    c_ln1, c_attn, c_ln2, c_fc1, c_gelu, c_fc2 = cache
    grads = {}
    dm = dy
    dg, grads[f"{prefix}.mlp.fc2.W"], grads[f"{prefix}.mlp.fc2.b"] = linear_bwd(
        dm, c_fc2, p[f"{prefix}.mlp.fc2.W"]
    )
    dh = gelu_bwd(dg, c_gelu)
    dn2, grads[f"{prefix}.mlp.fc1.W"], grads[f"{prefix}.mlp.fc1.b"] = linear_bwd(
        dh, c_fc1, p[f"{prefix}.mlp.fc1.W"]
    )
    dx1, grads[f"{prefix}.ln2.g"], grads[f"{prefix}.ln2.b"] = layernorm_bwd(
        dn2, c_ln2, p[f"{prefix}.ln2.g"]
    )
    dx1 = dx1 + dy
    da = dx1
    dn1, attn_grads = attention_bwd(da, c_attn, p, f"{prefix}.attn", heads)
    grads.update(attn_grads)
    dx, grads[f"{prefix}.ln1.g"], grads[f"{prefix}.ln1.b"] = layernorm_bwd(
        dn1, c_ln1, p[f"{prefix}.ln1.g"]
    )
    return dx + dx1, grads
