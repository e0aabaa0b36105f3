import numpy as np

from ..errors import ShapeMismatch
from .layers import SigmoidOutput, bce_loss


class Network:
    """Ordered layer stack ending in a ``SigmoidOutput``.

    ``params`` holds one dict of arrays per layer (empty for parameter-free
    layers).  Gradients returned by :meth:`loss_and_grads` mirror that layout.
    """

    def __init__(self, layers, input_shape, params=None):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        if not isinstance(self.layers[-1], SigmoidOutput):
            raise ShapeMismatch("last layer must be a SigmoidOutput")
        self.shapes = self._shape_chain()
        self.params = params if params is not None else [{} for _ in self.layers]
        if params is not None:
            for layer, p in zip(self.layers, params):
                expected = layer.param_shapes()
                if set(p) != set(expected) or any(p[k].shape != expected[k] for k in p):
                    raise ShapeMismatch(f"parameters do not fit {layer!r}")

    def _shape_chain(self):
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(layer.output_shape(shapes[-1]))
        return shapes

    def init(self, rng):
        self.params = [layer.init_params(rng) for layer in self.layers]
        return self

    def zero_like_params(self):
        return [{k: np.zeros_like(v) for k, v in p.items()} for p in self.params]

    def _as_batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape == self.input_shape:
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise ShapeMismatch(f"network expects {self.input_shape}, got {x.shape[1:]}")
        return x

    def forward(self, x, keep_caches=False):
        x = self._as_batch(x)
        caches = []
        for layer, p in zip(self.layers, self.params):
            x, cache = layer.forward(p, x)
            caches.append(cache)
        return (x, caches) if keep_caches else x

    def predict_proba(self, x):
        return self.forward(x)

    def loss_and_grads(self, x, y):
        """Mean BCE over the batch and its exact gradients.

        Sigmoid and cross-entropy are differentiated jointly: the logit
        gradient is ``(p - y) / N``.
        """
        loss, grads, _ = self.forward_backward(x, y)
        return loss, grads

    def forward_backward(self, x, y):
        x = self._as_batch(x)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if y.shape[0] != x.shape[0]:
            raise ShapeMismatch(f"{x.shape[0]} inputs but {y.shape[0]} labels")
        p, caches = self.forward(x, keep_caches=True)
        loss = float(bce_loss(p, y).mean())
        d = (p - y) / x.shape[0]
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            d, grads[i] = self.layers[i].backward(self.params[i], caches[i], d, need_dx=i > 0)
        return loss, grads, p


def backward(network, x, y):
    return network.loss_and_grads(x, y)
