"""Adam optimizer over named parameter tensors."""

from __future__ import annotations

import numpy as np


class Adam:
    """Adaptive moment estimation with bias correction.

    Parameters are a dict name -> leaf Tensor; ``step`` consumes a matching
    dict of gradients.  Updates replace each tensor's array (old graphs keep
    the arrays they were built with).
    """

    def __init__(self, params, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros(p.data.shape) for k, p in self.params.items()}
        self.v = {k: np.zeros(p.data.shape) for k, p in self.params.items()}

    def step(self, grads):
        self.t += 1
        for name, p in self.params.items():
            g = grads[name]
            g = g.data if hasattr(g, "data") else np.asarray(g)
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1**self.t)
            v_hat = self.v[name] / (1 - self.beta2**self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
