"""Adam optimizer over named (value, grad) parameter pairs."""

import numpy as np

from ..errors import NumericError


class Adam:
    def __init__(self, param_items, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.items = list(param_items)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(v) for _, v, _ in self.items]
        self.v = [np.zeros_like(v) for _, v, _ in self.items]
        self._scratch = [np.empty_like(v) for _, v, _ in self.items]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for (name, value, grad), m, v, s in zip(
            self.items, self.m, self.v, self._scratch
        ):
            if not np.all(np.isfinite(grad)):
                raise NumericError(f"non-finite gradient in {name}")
            m *= b1
            m += (1.0 - b1) * grad
            v *= b2
            np.multiply(grad, grad, out=s)
            s *= 1.0 - b2
            v += s
            np.divide(v, bc2, out=s)
            np.sqrt(s, out=s)
            s += self.eps
            np.divide(m, s, out=s)
            s *= self.lr / bc1
            value -= s

    def zero_grad(self):
        for _, _, grad in self.items:
            grad[...] = 0.0
