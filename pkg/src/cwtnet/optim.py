"""First/second-moment adaptive optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from .autodiff import Parameters
from .errors import ConfigurationError


class Adam:
    """Standard adaptive-moment update. Deterministic given its state, so two
    identically-seeded training runs produce bit-identical trajectories."""

    def __init__(self, params: Parameters, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {lr}")
        self.params = params
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)

    def state_dict(self):
        return {
            "t": self.t,
            "m": [np.array(m, copy=True) for m in self.m],
            "v": [np.array(v, copy=True) for v in self.v],
        }

    def load_state_dict(self, state):
        if len(state["m"]) != len(self.m) or len(state["v"]) != len(self.v):
            raise ConfigurationError("optimizer state does not match parameter count")
        self.t = int(state["t"])
        for dst, src in zip(self.m, state["m"]):
            dst[...] = src
        for dst, src in zip(self.v, state["v"]):
            dst[...] = src
