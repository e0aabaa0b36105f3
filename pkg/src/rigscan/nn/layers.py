"""Hand-differentiated CNN layers.

Tensors are float64 numpy arrays in row-major (C) order.  Every layer works on
a leading batch axis: images are ``[N, C, H, W]`` and vectors ``[N, n]``.
Each layer exposes ``forward(params, x) -> (out, cache)`` and
``backward(params, cache, dout) -> (dx, grads)`` so that a network is just an
ordered list of layers plus one parameter dict per layer.
"""

import numpy as np

from ..errors import ShapeMismatch


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    # tanh form: no overflow, sigmoid(0) == 0.5 exactly, odd symmetry is exact
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


BCE_EPS = 1e-7


def bce_loss(p, y):
    """Binary cross-entropy with ``p`` clamped to ``[eps, 1 - eps]``.

    Works elementwise; callers average over the batch themselves.
    """
    p = np.clip(np.asarray(p, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(y, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def _activate(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0, out=z)
    if kind is None:
        return z
    raise ValueError(f"unknown activation {kind!r}")


def _activation_grad(kind, out, dout):
    if kind == "relu":
        # relu output > 0 exactly where the pre-activation is > 0; subgradient at 0 is 0
        return dout * (out > 0.0)
    return dout


class Conv2D:
    """Valid (unpadded), stride-1 convolution with an optional ReLU."""

    kind = "conv2d"

    def __init__(self, in_channels, filters, kernel=3, activation="relu"):
        self.in_channels = in_channels
        self.filters = filters
        self.kernel = kernel
        self.activation = activation

    def __repr__(self):
        return (f"Conv2D({self.in_channels}->{self.filters}, "
                f"{self.kernel}x{self.kernel}, {self.activation})")

    def param_shapes(self):
        k = self.kernel
        return {"w": (self.filters, self.in_channels, k, k), "b": (self.filters,)}

    def init_params(self, rng):
        fan_in = self.in_channels * self.kernel * self.kernel
        limit = np.sqrt(6.0 / fan_in)  # He-uniform
        return {
            "w": rng.uniform(-limit, limit, size=self.param_shapes()["w"]),
            "b": np.zeros(self.filters),
        }

    def output_shape(self, in_shape):
        c, h, w = in_shape
        k = self.kernel
        if c != self.in_channels:
            raise ShapeMismatch(f"{self!r} expects {self.in_channels} channels, got {c}")
        if h < k or w < k:
            raise ShapeMismatch(f"{self!r} needs at least {k}x{k} input, got {h}x{w}")
        return (self.filters, h - k + 1, w - k + 1)

    def _columns(self, x):
        # [C*k*k, N*Ho*Wo]; one contiguous copy per kernel offset
        n, c, h, w = x.shape
        k = self.kernel
        ho, wo = h - k + 1, w - k + 1
        cols = np.empty((c, k, k, n, ho, wo))
        xt = x.transpose(1, 0, 2, 3)
        for a in range(k):
            for b in range(k):
                cols[:, a, b] = xt[:, :, a:a + ho, b:b + wo]
        return cols.reshape(c * k * k, n * ho * wo)

    def forward(self, params, x):
        f, ho, wo = self.output_shape(x.shape[1:])
        n = x.shape[0]
        cols = self._columns(x)
        z = params["w"].reshape(f, -1) @ cols + params["b"][:, None]
        out = _activate(self.activation, np.ascontiguousarray(z.reshape(f, n, ho, wo).transpose(1, 0, 2, 3)))
        return out, (x.shape, cols, out)

    def backward(self, params, cache, dout, need_dx=True):
        shape, cols, out = cache
        n, c, h, w = shape
        k = self.kernel
        f = self.filters
        ho, wo = h - k + 1, w - k + 1
        dz = _activation_grad(self.activation, out, dout)
        dz = np.ascontiguousarray(dz.transpose(1, 0, 2, 3)).reshape(f, -1)
        grads = {"w": (dz @ cols.T).reshape(params["w"].shape), "b": dz.sum(axis=1)}
        if not need_dx:
            return None, grads
        dcols = (params["w"].reshape(f, -1).T @ dz).reshape(c, k, k, n, ho, wo)
        dx = np.zeros((c, n, h, w))
        for a in range(k):
            for b in range(k):
                dx[:, :, a:a + ho, b:b + wo] += dcols[:, a, b]
        return np.ascontiguousarray(dx.transpose(1, 0, 2, 3)), grads


class MaxPool2D:
    """Non-overlapping max pooling; trailing odd rows/columns are dropped.

    Gradient goes to the first maximum of each window in row-major order.
    """

    kind = "maxpool2d"

    def __init__(self, pool=2):
        self.pool = pool

    def __repr__(self):
        return f"MaxPool2D({self.pool}x{self.pool})"

    def param_shapes(self):
        return {}

    def init_params(self, rng):
        return {}

    def output_shape(self, in_shape):
        c, h, w = in_shape
        return (c, h // self.pool, w // self.pool)

    def forward(self, params, x):
        n, c, h, w = x.shape
        s = self.pool
        ho, wo = h // s, w // s
        views = [x[:, :, a:ho * s:s, b:wo * s:s] for a in range(s) for b in range(s)]
        out = views[0]
        for v in views[1:]:
            out = np.maximum(out, v)
        # first maximum in row-major window order: count offsets before the first hit
        found = views[0] == out
        idx = np.zeros(out.shape, dtype=np.int8)
        for v in views[1:]:
            idx += ~found
            found |= v == out
        return out, (x.shape, idx)

    def backward(self, params, cache, dout, need_dx=True):
        shape, idx = cache
        s = self.pool
        ho, wo = idx.shape[2:]
        dx = np.zeros(shape)
        for o in range(s * s):
            a, b = divmod(o, s)
            np.multiply(dout, idx == o, out=dx[:, :, a:ho * s:s, b:wo * s:s])
        return dx, {}


class Flatten:
    kind = "flatten"

    def __repr__(self):
        return "Flatten()"

    def param_shapes(self):
        return {}

    def init_params(self, rng):
        return {}

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, params, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, params, cache, dout, need_dx=True):
        return dout.reshape(cache), {}


class Dense:
    """Fully connected layer, ``out = W @ in + b`` with W of shape [m, n]."""

    kind = "dense"

    def __init__(self, inputs, units, activation="relu"):
        self.inputs = inputs
        self.units = units
        self.activation = activation

    def __repr__(self):
        return f"Dense({self.inputs}->{self.units}, {self.activation})"

    def param_shapes(self):
        return {"w": (self.units, self.inputs), "b": (self.units,)}

    def init_params(self, rng):
        limit = np.sqrt(6.0 / self.inputs)  # He-uniform
        return {
            "w": rng.uniform(-limit, limit, size=(self.units, self.inputs)),
            "b": np.zeros(self.units),
        }

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.inputs,):
            raise ShapeMismatch(f"{self!r} expects input ({self.inputs},), got {tuple(in_shape)}")
        return (self.units,)

    def forward(self, params, x):
        self.output_shape(x.shape[1:])
        out = _activate(self.activation, x @ params["w"].T + params["b"])
        return out, (x, out)

    def backward(self, params, cache, dout, need_dx=True):
        x, out = cache
        dz = _activation_grad(self.activation, out, dout)
        grads = {"w": dz.T @ x, "b": dz.sum(axis=0)}
        dx = dz @ params["w"] if need_dx else None
        return dx, grads


class SigmoidOutput(Dense):
    """Single-unit dense layer followed by a sigmoid.

    ``forward`` returns probabilities of shape [N].  ``backward`` takes the
    gradient with respect to the pre-sigmoid logit, since sigmoid and
    cross-entropy are differentiated together by the network.
    """

    kind = "sigmoid_output"

    def __init__(self, inputs):
        super().__init__(inputs, 1, activation=None)

    def __repr__(self):
        return f"SigmoidOutput({self.inputs}->1)"

    def init_params(self, rng):
        limit = np.sqrt(6.0 / (self.inputs + 1))  # Xavier-uniform
        return {
            "w": rng.uniform(-limit, limit, size=(1, self.inputs)),
            "b": np.zeros(1),
        }

    def forward(self, params, x):
        z, cache = super().forward(params, x)
        return sigmoid(z[:, 0]), cache

    def backward(self, params, cache, dlogit, need_dx=True):
        return super().backward(params, cache, dlogit[:, None], need_dx)


def conv2d_forward(x, w, b):
    """Single-sample convolution: ``x`` [C,H,W], ``w`` [F,C,k,k] -> [F,H-k+1,W-k+1]."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.ndim != 3 or w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeMismatch(f"bad shapes for conv2d: input {x.shape}, kernel {w.shape}")
    layer = Conv2D(w.shape[1], w.shape[0], w.shape[2], activation=None)
    out, _ = layer.forward({"w": w, "b": np.asarray(b, dtype=np.float64)}, x[None])
    return out[0]


def maxpool2d_forward(x, pool=2):
    """Single-sample max pooling; returns the pooled map and flat window argmax."""
    out, (_, idx) = MaxPool2D(pool).forward({}, np.asarray(x, dtype=np.float64)[None])
    return out[0], idx[0]


def dense_forward(x, w, b):
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.ndim != 1 or w.ndim != 2:
        raise ShapeMismatch(f"bad shapes for dense: input {x.shape}, weights {w.shape}")
    layer = Dense(w.shape[1], w.shape[0], activation=None)
    out, _ = layer.forward({"w": w, "b": np.asarray(b, dtype=np.float64)}, x[None])
    return out[0]
