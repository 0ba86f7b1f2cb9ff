"""SGD and Adam over lists of parameter tensors."""

from __future__ import annotations

from typing import Dict, List, Sequence

import numpy as np

from .errors import ConfigError, NumericError, ShapeError, ValidationError

STATE_VERSION = 1


def sgd_step(param: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    return param - lr * grad


def adam_step(param, grad, m, v, t: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update. ``t`` is the 1-based step count. Returns (param, m, v)."""
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


def _check_grads(params) -> None:
    for i, p in enumerate(params):
        if p.grad is None:
            continue
        if p.grad.shape != p.data.shape:
            raise ShapeError(f"param {i}: grad shape {p.grad.shape} != {p.data.shape}")
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in parameter {i} (shape {p.data.shape}); aborting step")


class Optimizer:
    kind = "base"

    def __init__(self, params: Sequence, lr: float):
        self.params = list(params)
        self.lr = float(lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_dict(self) -> Dict:
        return {"version": STATE_VERSION, "kind": self.kind, "lr": self.lr}

    def load_state_dict(self, state: Dict) -> None:
        if state.get("version") != STATE_VERSION or state.get("kind") != self.kind:
            raise ValidationError(f"optimizer state mismatch: {state.get('kind')} v{state.get('version')}")
        self.lr = float(state["lr"])


class SGD(Optimizer):
    kind = "sgd"

    def step(self) -> None:
        _check_grads(self.params)
        for p in self.params:
            if p.grad is not None:
                p.data = sgd_step(p.data, p.grad, self.lr).astype(p.dtype, copy=False)


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, params, lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m: List[np.ndarray] = [np.zeros_like(p.data) for p in self.params]
        self.v: List[np.ndarray] = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        _check_grads(self.params)
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            new, self.m[i], self.v[i] = adam_step(
                p.data, p.grad, self.m[i], self.v[i], self.t, self.lr, self.beta1, self.beta2, self.eps
            )
            p.data = new.astype(p.dtype, copy=False)

    def state_dict(self) -> Dict:
        state = super().state_dict()
        state.update(t=self.t, betas=[self.beta1, self.beta2], eps=self.eps, m=list(self.m), v=list(self.v))
        return state

    def load_state_dict(self, state: Dict) -> None:
        super().load_state_dict(state)
        if len(state["m"]) != len(self.params):
            raise ValidationError("optimizer state has a different parameter count")
        self.t = int(state["t"])
        self.beta1, self.beta2 = state["betas"]
        self.eps = float(state["eps"])
        self.m = [np.array(a, dtype=p.dtype) for a, p in zip(state["m"], self.params)]
        self.v = [np.array(a, dtype=p.dtype) for a, p in zip(state["v"], self.params)]


def make_optimizer(kind: str, params, lr: float) -> Optimizer:
    if kind == "adam":
        return Adam(params, lr=lr)
    if kind == "sgd":
        return SGD(params, lr=lr)
    raise ConfigError(f"unknown optimizer {kind!r}")
