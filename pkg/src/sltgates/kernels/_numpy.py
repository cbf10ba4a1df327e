"""Pure-numpy reference versions of the hot kernels.

Every function here has a twin with the same signature in ``_numba``.
"""

import numpy as np
from scipy.special import erfc

_SQRT1_2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def clamp01(a):
    return np.clip(a, 0.0, 1.0)


def clamp01_grad(a, g):
    inside = (a > 0.0) & (a < 1.0)
    return np.where(inside, g, np.zeros((), dtype=g.dtype))


def relu_grad(a, g):
    return np.where(a > 0.0, g, np.zeros((), dtype=g.dtype))


def normal_cdf(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * erfc(-x * _SQRT1_2)


def normal_pdf(x):
    x = np.asarray(x, dtype=np.float64)
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def softmax_xent(logits, labels):
    """Mean cross-entropy and softmax probabilities (float64)."""
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    s = ez.sum(axis=1, keepdims=True)
    probs = ez / s
    n = z.shape[0]
    picked = z[np.arange(n), labels]
    loss = float(np.sum(np.log(s[:, 0]) - picked)) / n
    return loss, probs


def im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        i_end = i + stride * oh
        for j in range(kw):
            j_end = j + stride * ow
            cols[:, :, i, j] = xp[:, :, i:i_end:stride, j:j_end:stride]
    # rows ordered (n, oh, ow); columns ordered (c, kh, kw)
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, c * kh * kw)


def col2im(cols, x_shape, kh, kw, stride, pad):
    n, c, h, w = x_shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols6 = cols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        i_end = i + stride * oh
        for j in range(kw):
            j_end = j + stride * ow
            out[:, :, i:i_end:stride, j:j_end:stride] += cols6[:, :, i, j]
    return out[:, :, pad:pad + h, pad:pad + w]


def maxpool2d(x, k):
    """Non-overlapping k x k max pooling; returns (out, flat argmax within window)."""
    n, c, h, w = x.shape
    oh, ow = h // k, w // k
    win = x[:, :, :oh * k, :ow * k].reshape(n, c, oh, k, ow, k)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, k * k)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg.astype(np.int64)


def maxpool2d_grad(g, arg, x_shape, k):
    n, c, h, w = x_shape
    oh, ow = g.shape[2], g.shape[3]
    win = np.zeros((n, c, oh, ow, k * k), dtype=g.dtype)
    np.put_along_axis(win, arg[..., None], g[..., None], axis=-1)
    win = win.reshape(n, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5)
    out = np.zeros((n, c, h, w), dtype=g.dtype)
    out[:, :, :oh * k, :ow * k] = win.reshape(n, c, oh * k, ow * k)
    return out


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """In-place Adam update of ``param``, ``m`` and ``v``."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / bc1
    v_hat = v / bc2
    param -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype, copy=False)
