"""Deliberately naive reference implementations used as test oracles.

Nothing here imports the library's kernels.
"""

import numpy as np


def conv2d_loops(x, w, b, stride=1, padding=0):
    c, h, wd = x.shape
    o, c2, k, _ = w.shape
    assert c == c2
    xp = np.zeros((c, h + 2 * padding, wd + 2 * padding), dtype=np.float64)
    xp[:, padding:padding + h, padding:padding + wd] = x
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    y = np.zeros((o, ho, wo))
    for oc in range(o):
        for i in range(ho):
            for j in range(wo):
                acc = float(b[oc])
                for ch in range(c):
                    for ki in range(k):
                        for kj in range(k):
                            acc += xp[ch, i * stride + ki, j * stride + kj] * w[oc, ch, ki, kj]
                y[oc, i, j] = acc
    return y


def maxpool_loops(x, window=2):
    c, h, w = x.shape
    ho, wo = h // window, w // window
    y = np.zeros((c, ho, wo), dtype=x.dtype)
    for ch in range(c):
        for i in range(ho):
            for j in range(wo):
                best = x[ch, i * window, j * window]
                for a in range(window):
                    for bb in range(window):
                        v = x[ch, i * window + a, j * window + bb]
                        if v > best:
                            best = v
                y[ch, i, j] = best
    return y


def mean_pool_loops(img):
    h, w = img.shape
    out = np.zeros((h // 2, w // 2))
    for i in range(h // 2):
        for j in range(w // 2):
            out[i, j] = (img[2 * i, 2 * j] + img[2 * i + 1, 2 * j] + img[2 * i, 2 * j + 1] + img[2 * i + 1, 2 * j + 1]) / 4
    return out


def bilinear_loops(img, out_h, out_w):
    """Align-corners bilinear interpolation, one output pixel at a time."""
    h, w = img.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        sy = 0.0 if out_h == 1 else i * (h - 1) / (out_h - 1)
        y0 = min(int(np.floor(sy)), h - 1)
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for j in range(out_w):
            sx = 0.0 if out_w == 1 else j * (w - 1) / (out_w - 1)
            x0 = min(int(np.floor(sx)), w - 1)
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
            bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
            out[i, j] = top * (1 - fy) + bot * fy
    return out


def pearson(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    return float((a * b).sum() / np.sqrt((a * a).sum() * (b * b).sum()))


def adam_scalar(w, grad_fn, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        g = grad_fn(w)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps)
    return w
