"""Minibatch optimizers.  Both update parameter arrays in place."""

from dataclasses import dataclass

import numpy as np


@dataclass
class OptimizerConfig:
    name: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def build(self):
        if self.name == "sgd":
            return SGD(self.learning_rate)
        if self.name == "adam":
            return Adam(self.learning_rate, self.beta1, self.beta2, self.eps)
        raise ValueError(f"unknown optimizer {self.name!r}")


class SGD:
    def __init__(self, learning_rate=0.01):
        self.learning_rate = learning_rate

    def step(self, params, grads):
        for p, g in zip(params, grads):
            for k in p:
                p[k] -= self.learning_rate * g[k]
        return params


class Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
            self.v = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
        self.t += 1
        # bias correction folded into the step size
        alpha = self.learning_rate * np.sqrt(1.0 - self.beta2 ** self.t) / (1.0 - self.beta1 ** self.t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            for k in p:
                tmp = g[k] * (1.0 - self.beta1)
                m[k] *= self.beta1
                m[k] += tmp
                np.square(g[k], out=tmp)
                tmp *= 1.0 - self.beta2
                v[k] *= self.beta2
                v[k] += tmp
                np.sqrt(v[k], out=tmp)
                tmp += self.eps
                np.divide(m[k], tmp, out=tmp)
                tmp *= alpha
                p[k] -= tmp
        return params


def sgd_step(params, grads, optimizer):
    return optimizer.step(params, grads)
