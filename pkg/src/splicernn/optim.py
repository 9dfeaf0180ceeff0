"""First-order update rules: Adam, RMSprop and plain SGD.

Optimizers update a ``name -> array`` mapping in place. Keys present in
``grads`` are updated; state buffers are created lazily per key.
"""
from __future__ import annotations

import numpy as np

from .numerics import NumericalError


def _check_grads(grads: dict[str, np.ndarray]):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}")


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads
    factor = max_norm / norm
    return {k: g * factor for k, g in grads.items()}


class Optimizer:
    kind = ""

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        raise NotImplementedError

    def hyperparameters(self) -> dict:
        raise NotImplementedError

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def state_dict(self) -> dict:
        return {"kind": self.kind, "hyper": self.hyperparameters(), "t": getattr(self, "t", 0),
                "buffers": {k: v.copy() for k, v in self.buffers().items()}}


class SGD(Optimizer):
    kind = "sgd"

    def __init__(self, lr: float = 0.01):
        self.lr = lr
        self.t = 0

    def hyperparameters(self):
        return {"lr": self.lr}

    def step(self, params, grads):
        _check_grads(grads)
        self.t += 1
        for name, g in grads.items():
            params[name] -= self.lr * g


class RMSprop(Optimizer):
    """``s <- rho*s + (1-rho)*g^2``; ``theta <- theta - lr*g/(sqrt(s)+eps)``."""

    kind = "rmsprop"

    def __init__(self, lr: float = 1e-3, rho: float = 0.9, eps: float = 1e-8):
        self.lr = lr
        self.rho = rho
        self.eps = eps
        self.t = 0
        self.s: dict[str, np.ndarray] = {}

    def hyperparameters(self):
        return {"lr": self.lr, "rho": self.rho, "eps": self.eps}

    def buffers(self):
        return {f"s.{k}": v for k, v in self.s.items()}

    def step(self, params, grads):
        _check_grads(grads)
        self.t += 1
        for name, g in grads.items():
            s = self.s.setdefault(name, np.zeros_like(params[name]))
            s *= self.rho
            s += (1.0 - self.rho) * g * g
            params[name] -= self.lr * g / (np.sqrt(s) + self.eps)


class Adam(Optimizer):
    """Adam with bias-corrected moments.

    One call to :meth:`step` is one timestep, however many parameters it
    touches::

        m <- b1*m + (1-b1)*g        v <- b2*v + (1-b2)*g^2
        theta <- theta - lr * (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps)
    """

    kind = "adam"

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def hyperparameters(self):
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}

    def buffers(self):
        out = {f"m.{k}": v for k, v in self.m.items()}
        out.update({f"v.{k}": v for k, v in self.v.items()})
        return out

    def step(self, params, grads):
        _check_grads(grads)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(params[name]))
            v = self.v.setdefault(name, np.zeros_like(params[name]))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


OPTIMIZERS = {"adam": Adam, "rmsprop": RMSprop, "sgd": SGD}


def make_optimizer(kind: str, **hyper) -> Optimizer:
    if kind not in OPTIMIZERS:
        raise ValueError(f"unknown optimizer {kind!r}; choose from {sorted(OPTIMIZERS)}")
    return OPTIMIZERS[kind](**hyper)


def from_state_dict(state: dict) -> Optimizer:
    opt = make_optimizer(state["kind"], **state["hyper"])
    opt.t = int(state.get("t", 0))
    for key, arr in state.get("buffers", {}).items():
        slot, _, name = key.partition(".")
        getattr(opt, slot)[name] = np.array(arr)
    return opt
