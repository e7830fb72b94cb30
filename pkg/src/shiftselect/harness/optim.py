"""Adam with decoupled weight decay over named parameter groups, plus linear warmup."""

from __future__ import annotations

import math

import numpy as np

from ..numerics import Tensor

BACKBONE = "backbone"
SELECTION = "selection"
DECAYS = ("cosine", "constant")


def group_of(name: str) -> str:
    """Token-selection parameters train at their own rate; everything else is backbone."""
    return SELECTION if name.startswith("select.") else BACKBONE


def partition(named_params) -> dict[str, list[tuple[str, Tensor]]]:
    groups: dict[str, list[tuple[str, Tensor]]] = {BACKBONE: [], SELECTION: []}
    for name, p in named_params:
        groups[group_of(name)].append((name, p))
    return groups


def warmup_lr(base_lr: float, step: int, warmup: int) -> float:
    """Learning rate for 0-based ``step``: base * step / warmup during warmup, then base."""
    if warmup <= 0 or step >= warmup:
        return base_lr
    return base_lr * step / warmup


def scheduled_lr(base_lr: float, step: int, warmup: int, total: int, decay: str = "cosine") -> float:
    """Linear warmup, then either constant or a half-cosine from base toward zero at ``total``."""
    if step < warmup or decay == "constant" or total <= warmup:
        return warmup_lr(base_lr, step, warmup)
    if decay != "cosine":
        raise ValueError(f"unknown decay {decay!r}")
    progress = (step - warmup) / (total - warmup)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class Adam:
    def __init__(self, groups, betas=(0.9, 0.98), eps=1e-8, weight_decay=0.0):
        self.groups = groups
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for g in groups.values() for name, p in g}
        self.v = {name: np.zeros_like(p.data) for g in groups.values() for name, p in g}

    def step(self, lrs: dict[str, float]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for group, params in self.groups.items():
            lr = lrs[group]
            for name, p in params:
                if p.grad is None:
                    continue
                g = p.grad
                m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
                v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
                update = (m / c1) / (np.sqrt(v / c2) + self.eps)
                if self.weight_decay and p.ndim >= 2:
                    update = update + self.weight_decay * p.data
                p.data = p.data - lr * update

    def zero_grad(self) -> None:
        for params in self.groups.values():
            for _, p in params:
                p.grad = None
