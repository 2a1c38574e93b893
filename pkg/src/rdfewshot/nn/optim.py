"""First-order optimizers over named parameter lists."""

from __future__ import annotations

import numpy as np


class SGD:
    def __init__(self, named_params, lr: float = 1e-2, momentum: float = 0.0):
        self.named_params = list(named_params)
        self.lr = lr
        self.momentum = momentum
        self._velocity = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def step(self) -> None:
        for name, p in self.named_params:
            if p.grad is None:
                continue
            if self.momentum:
                v = self._velocity[name]
                v *= self.momentum
                v += p.grad
                p.data -= self.lr * v
            else:
                p.data -= self.lr * p.grad

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.grad = None

    def state_dict(self) -> dict:
        return {"kind": "sgd", "lr": self.lr, "momentum": self.momentum,
                "velocity": {k: v.tolist() for k, v in self._velocity.items()}}

    def load_state_dict(self, state: dict) -> None:
        for k, v in state.get("velocity", {}).items():
            self._velocity[k] = np.asarray(v, dtype=self._velocity[k].dtype) \
                .reshape(self._velocity[k].shape)


class Adam:
    def __init__(self, named_params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.named_params = list(named_params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self._v = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.named_params:
            if p.grad is None:
                continue
            m, v = self._m[name], self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * (p.grad * p.grad)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.grad = None

    def state_dict(self) -> dict:
        return {"kind": "adam", "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps, "t": self.t,
                "m": {k: v.tolist() for k, v in self._m.items()},
                "v": {k: v.tolist() for k, v in self._v.items()}}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state.get("t", 0))
        for key, store in (("m", self._m), ("v", self._v)):
            for k, v in state.get(key, {}).items():
                store[k] = np.asarray(v, dtype=store[k].dtype).reshape(store[k].shape)


def make_optimizer(kind: str, named_params, lr: float):
    kind = kind.lower()
    if kind == "adam":
        return Adam(named_params, lr=lr)
    if kind == "sgd":
        return SGD(named_params, lr=lr, momentum=0.9)
    raise ValueError(f"unknown optimizer {kind!r}, expected 'adam' or 'sgd'")
