"""Functional neural-net layers with explicit backward passes.

Every forward returns (output, cache); the matching backward consumes the
cache and returns input/parameter gradients. All layers are deterministic
given their inputs (dropout takes an explicit Generator).
"""

from __future__ import annotations

import numpy as np

from .. import backend

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


# ---------------------------------------------------------------- conv block

def conv3x3_forward(x, w, b):
    """3x3 convolution, padding 1, stride 1. x: (B,C,H,W), w: (K,C,3,3)."""
    bsz, c, h, wd = x.shape
    k = w.shape[0]
    cols = backend.im2col3(x)  # (B, H*W, C*9)
    out = cols @ w.reshape(k, -1).T + b
    out = np.ascontiguousarray(out.transpose(0, 2, 1)).reshape(bsz, k, h, wd)
    return out, (x, w)


def conv3x3_backward(grad, cache):
    x, w = cache
    bsz, c, h, wd = x.shape
    k = w.shape[0]
    gmat = grad.reshape(bsz, k, h * wd).transpose(0, 2, 1)  # (B, HW, K)
    cols = backend.im2col3(x)
    dw = np.tensordot(gmat, cols, axes=([0, 1], [0, 1])).reshape(w.shape)
    db = grad.sum(axis=(0, 2, 3))
    dcols = np.ascontiguousarray(gmat @ w.reshape(k, -1))
    dx = backend.col2im3(dcols, h, wd)
    return dx, dw, db


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train):
    """Channel-wise batch norm over (B, H, W); running stats updated in place."""
    if train:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        n = x.shape[0] * x.shape[2] * x.shape[3]
        unbiased = var * n / max(n - 1, 1)
        running_mean *= 1.0 - BN_MOMENTUM
        running_mean += BN_MOMENTUM * mean
        running_var *= 1.0 - BN_MOMENTUM
        running_var += BN_MOMENTUM * unbiased
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, gamma, inv_std, train)


def batchnorm_backward(grad, cache):
    xhat, gamma, inv_std, train = cache
    dgamma = (grad * xhat).sum(axis=(0, 2, 3))
    dbeta = grad.sum(axis=(0, 2, 3))
    dxhat = grad * gamma[None, :, None, None]
    if train:
        n = grad.shape[0] * grad.shape[2] * grad.shape[3]
        sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        dx = (inv_std[None, :, None, None] / n) * (
            n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat
        )
    else:
        dx = dxhat * inv_std[None, :, None, None]
    return dx, dgamma, dbeta


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(grad, mask):
    return grad * mask


def maxpool_forward(x):
    out, idx = backend.maxpool2(x)
    return out, (idx, x.shape[2], x.shape[3])


def maxpool_backward(grad, cache):
    idx, h, w = cache
    return backend.maxpool2_backward(np.ascontiguousarray(grad), idx, h, w)


# ------------------------------------------------------------------- generic

def dropout_forward(x, p, train, rng):
    """Inverted dropout; identity in eval mode or when p == 0."""
    if not train or p <= 0.0:
        return x, None
    if rng is None:
        raise ValueError("dropout in train mode needs an explicit rng")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * mask, mask


def dropout_backward(grad, mask):
    return grad if mask is None else grad * mask


def affine_forward(x, w, b):
    """y = x @ w.T + b over the last axis."""
    return x @ w.T + b, (x, w)


def affine_backward(grad, cache):
    x, w = cache
    axes = tuple(range(x.ndim - 1))
    dw = np.tensordot(grad, x, axes=(axes, axes))
    db = grad.sum(axis=axes)
    return grad @ w, dw, db


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x, axis=-1):
    shifted = x - x.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=axis, keepdims=True)


def softmax_backward(grad, probs, axis=-1):
    inner = (grad * probs).sum(axis=axis, keepdims=True)
    return probs * (grad - inner)


# ---------------------------------------------------------------------- LSTM

def lstm_forward(x, w_x, w_h, b, reverse=False):
    """Single-direction LSTM over (B, T, D); returns (B, T, H) hidden states.

    Gate order along the 4H axis is input, forget, cell, output.
    """
    if reverse:
        x = x[:, ::-1]
    bsz, steps, _ = x.shape
    hidden = w_h.shape[1]
    xw = x @ w_x.T + b  # (B, T, 4H)
    h = np.zeros((bsz, hidden), dtype=x.dtype)
    c = np.zeros((bsz, hidden), dtype=x.dtype)
    outs = np.empty((bsz, steps, hidden), dtype=x.dtype)
    gates = []
    for t in range(steps):
        z = xw[:, t] + h @ w_h.T
        i = sigmoid(z[:, :hidden])
        f = sigmoid(z[:, hidden : 2 * hidden])
        g = np.tanh(z[:, 2 * hidden : 3 * hidden])
        o = sigmoid(z[:, 3 * hidden :])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        outs[:, t] = h
        gates.append((i, f, g, o, c_prev, tc, h_prev))
    if reverse:
        outs = outs[:, ::-1]
    return np.ascontiguousarray(outs), (x, w_x, w_h, gates, reverse)


def lstm_backward(grad, cache):
    x, w_x, w_h, gates, reverse = cache
    if reverse:
        grad = grad[:, ::-1]
    bsz, steps, hidden = grad.shape
    dw_x = np.zeros_like(w_x)
    dw_h = np.zeros_like(w_h)
    db = np.zeros(4 * hidden, dtype=x.dtype)
    dx = np.empty_like(x)
    dh_next = np.zeros((bsz, hidden), dtype=x.dtype)
    dc_next = np.zeros((bsz, hidden), dtype=x.dtype)
    for t in range(steps - 1, -1, -1):
        i, f, g, o, c_prev, tc, h_prev = gates[t]
        dh = grad[:, t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_next = dc * f
        dz = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)],
            axis=1,
        )
        dw_x += dz.T @ x[:, t]
        dw_h += dz.T @ h_prev
        db += dz.sum(axis=0)
        dx[:, t] = dz @ w_x
        dh_next = dz @ w_h
    if reverse:
        dx = dx[:, ::-1]
    return np.ascontiguousarray(dx), dw_x, dw_h, db


# ------------------------------------------------------------------ pooling

def attention_forward(z, w1, b1, w2, b2, p_drop, train, rng):
    """Softmax attention pooling over time: (B, T, F) -> (B, F) context."""
    a1, c_aff1 = affine_forward(z, w1, b1)
    t1 = np.tanh(a1)
    td, mask = dropout_forward(t1, p_drop, train, rng)
    scores = (td @ w2.T + b2)[..., 0]  # (B, T)
    alpha = softmax(scores, axis=1)
    ctx = (alpha[..., None] * z).sum(axis=1)
    return ctx, alpha, (z, c_aff1, t1, td, mask, w2, alpha)


def attention_backward(dctx, dalpha_extra, cache):
    z, c_aff1, t1, td, mask, w2, alpha = cache
    dalpha = (dctx[:, None, :] * z).sum(axis=-1)
    if dalpha_extra is not None:
        dalpha = dalpha + dalpha_extra
    dz = alpha[..., None] * dctx[:, None, :]
    dscores = softmax_backward(dalpha, alpha, axis=1)
    dtd = dscores[..., None] * w2[0]
    dw2 = np.tensordot(dscores, td, axes=([0, 1], [0, 1]))[None, :]
    db2 = np.array([dscores.sum()], dtype=z.dtype)
    dt1 = dropout_backward(dtd, mask)
    da1 = dt1 * (1.0 - t1 * t1)
    da1_in, dw1, db1 = affine_backward(da1, c_aff1)
    dz += da1_in
    return dz, dw1, db1, dw2, db2
