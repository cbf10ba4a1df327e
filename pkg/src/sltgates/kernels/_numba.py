"""numba-compiled twins of the kernels in ``_numpy``."""

import math

import numpy as np
from numba import njit

_SQRT1_2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


@njit(cache=True)
def _clamp01_flat(a, out):
    for i in range(a.size):
        x = a[i]
        if x < 0.0:
            out[i] = 0.0
        elif x > 1.0:
            out[i] = 1.0
        else:
            out[i] = x


def clamp01(a):
    out = np.empty_like(a)
    _clamp01_flat(a.ravel(), out.reshape(-1))
    return out


@njit(cache=True)
def _window_grad_flat(a, g, lo, hi, out):
    # gradient passes where lo < a < hi, zero elsewhere (kinks included)
    for i in range(a.size):
        x = a[i]
        if x > lo and x < hi:
            out[i] = g[i]
        else:
            out[i] = 0.0


def clamp01_grad(a, g):
    out = np.empty_like(g)
    _window_grad_flat(np.ascontiguousarray(a).ravel(), np.ascontiguousarray(g).ravel(),
                      0.0, 1.0, out.reshape(-1))
    return out


def relu_grad(a, g):
    out = np.empty_like(g)
    _window_grad_flat(np.ascontiguousarray(a).ravel(), np.ascontiguousarray(g).ravel(),
                      0.0, np.inf, out.reshape(-1))
    return out


@njit(cache=True)
def _normal_cdf_flat(x, out):
    for i in range(x.size):
        out[i] = 0.5 * math.erfc(-x[i] * _SQRT1_2)


@njit(cache=True)
def _normal_pdf_flat(x, out):
    for i in range(x.size):
        out[i] = _INV_SQRT_2PI * math.exp(-0.5 * x[i] * x[i])


def normal_cdf(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(x)
    _normal_cdf_flat(x.ravel(), out.reshape(-1))
    return out


def normal_pdf(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(x)
    _normal_pdf_flat(x.ravel(), out.reshape(-1))
    return out


@njit(cache=True)
def _softmax_xent(z, labels, probs):
    n, k = z.shape
    total = 0.0
    for r in range(n):
        mx = z[r, 0]
        for c in range(1, k):
            if z[r, c] > mx:
                mx = z[r, c]
        s = 0.0
        for c in range(k):
            e = math.exp(z[r, c] - mx)
            probs[r, c] = e
            s += e
        for c in range(k):
            probs[r, c] /= s
        total += math.log(s) - (z[r, labels[r]] - mx)
    return total / n


def softmax_xent(logits, labels):
    z = np.ascontiguousarray(logits, dtype=np.float64)
    probs = np.empty_like(z)
    loss = _softmax_xent(z, np.ascontiguousarray(labels, dtype=np.int64), probs)
    return float(loss), probs


@njit(cache=True)
def _im2col(xp, kh, kw, stride, oh, ow, cols):
    # xp is already zero-padded, so every window read is in bounds
    n, c = xp.shape[0], xp.shape[1]
    for b in range(n):
        for oy in range(oh):
            for ox in range(ow):
                row = (b * oh + oy) * ow + ox
                col = 0
                for ch in range(c):
                    for i in range(kh):
                        y = oy * stride + i
                        for j in range(kw):
                            cols[row, col] = xp[b, ch, y, ox * stride + j]
                            col += 1


def _padded(x, pad):
    if pad == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = np.empty((n * oh * ow, c * kh * kw), dtype=x.dtype)
    _im2col(_padded(x, pad), kh, kw, stride, oh, ow, cols)
    return cols


@njit(cache=True)
def _col2im(cols, kh, kw, stride, oh, ow, outp):
    n, c = outp.shape[0], outp.shape[1]
    for b in range(n):
        for oy in range(oh):
            for ox in range(ow):
                row = (b * oh + oy) * ow + ox
                col = 0
                for ch in range(c):
                    for i in range(kh):
                        y = oy * stride + i
                        for j in range(kw):
                            outp[b, ch, y, ox * stride + j] += cols[row, col]
                            col += 1


def col2im(cols, x_shape, kh, kw, stride, pad):
    n, c, h, w = x_shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    outp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    _col2im(np.ascontiguousarray(cols), kh, kw, stride, oh, ow, outp)
    return np.ascontiguousarray(outp[:, :, pad:pad + h, pad:pad + w])


@njit(cache=True)
def _maxpool(x, k, out, arg):
    n, c, oh, ow = out.shape
    for b in range(n):
        for ch in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    best = x[b, ch, oy * k, ox * k]
                    best_i = 0
                    for i in range(k):
                        for j in range(k):
                            v = x[b, ch, oy * k + i, ox * k + j]
                            if v > best:
                                best = v
                                best_i = i * k + j
                    out[b, ch, oy, ox] = best
                    arg[b, ch, oy, ox] = best_i


def maxpool2d(x, k):
    n, c, h, w = x.shape
    out = np.empty((n, c, h // k, w // k), dtype=x.dtype)
    arg = np.empty(out.shape, dtype=np.int64)
    _maxpool(np.ascontiguousarray(x), k, out, arg)
    return out, arg


@njit(cache=True)
def _maxpool_grad(g, arg, k, out):
    n, c, oh, ow = g.shape
    for b in range(n):
        for ch in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    a = arg[b, ch, oy, ox]
                    out[b, ch, oy * k + a // k, ox * k + a % k] += g[b, ch, oy, ox]


def maxpool2d_grad(g, arg, x_shape, k):
    out = np.zeros(x_shape, dtype=g.dtype)
    _maxpool_grad(np.ascontiguousarray(g), arg, k, out)
    return out


@njit(cache=True)
def _adam_flat(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    for i in range(p.size):
        gi = g[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
        p[i] -= lr * (m[i] / bc1) / (math.sqrt(v[i] / bc2) + eps)


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
    _adam_flat(param.reshape(-1), np.ascontiguousarray(grad).reshape(-1),
               m.reshape(-1), v.reshape(-1), lr, beta1, beta2, eps, bc1, bc2)
