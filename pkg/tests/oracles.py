"""Slow reference implementations that share no code with the package."""

import copy
import math

import numpy as np


def conv2d_loops(x, w, b):
    """Direct valid convolution by explicit loops: x [C,H,W], w [F,C,k,k]."""
    c_in, h, wd = x.shape
    f_out, _, k, _ = w.shape
    out = np.zeros((f_out, h - k + 1, wd - k + 1))
    for f in range(f_out):
        for i in range(h - k + 1):
            for j in range(wd - k + 1):
                s = b[f]
                for c in range(c_in):
                    for a in range(k):
                        for bb in range(k):
                            s += w[f, c, a, bb] * x[c, i + a, j + bb]
                out[f, i, j] = s
    return out


def dense_loops(x, w, b):
    out = []
    for i in range(w.shape[0]):
        s = b[i]
        for j in range(w.shape[1]):
            s += w[i, j] * x[j]
        out.append(s)
    return np.array(out)


def central_differences(loss_fn, params, h=1e-5):
    """Numerical gradient of ``loss_fn()`` w.r.t. every entry of every array in ``params``."""
    grads = []
    for p in params:
        g = {}
        for key, arr in p.items():
            num = np.zeros_like(arr)
            flat = arr.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = loss_fn()
                flat[i] = orig - h
                down = loss_fn()
                flat[i] = orig
                num.reshape(-1)[i] = (up - down) / (2 * h)
            g[key] = num
        grads.append(g)
    return grads


def type7_quantile(values, q):
    v = sorted(values)
    pos = 1 + (len(v) - 1) * q
    lo = math.floor(pos)
    frac = pos - lo
    if lo >= len(v):
        return v[-1]
    return v[lo - 1] + frac * (v[lo] - v[lo - 1])


def kink_margin(net, x):
    """Distance of a forward pass from the network's non-differentiable points.

    Returns the smallest |pre-activation| over ReLU units and the smallest gap
    between the two largest entries of any pooling window.  Central
    differences are only meaningful when this exceeds the step size.
    """
    margin = math.inf
    h = x
    for layer, p in zip(net.layers, net.params):
        if getattr(layer, "activation", None) == "relu":
            linear = copy.copy(layer)
            linear.activation = None
            z, _ = linear.forward(p, h)
            margin = min(margin, float(np.min(np.abs(z))))
        if layer.kind == "maxpool2d":
            k = layer.pool
            n, c, hh, ww = h.shape
            ho, wo = hh // k, ww // k
            win = h[:, :, :ho * k, :wo * k].reshape(n, c, ho, k, wo, k)
            win = np.sort(win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k), axis=-1)
            top = win[..., -1]
            gaps = (top - win[..., -2])[top > 0]
            if gaps.size:
                margin = min(margin, float(np.min(gaps)))
        h, _ = layer.forward(p, h)
    return margin
