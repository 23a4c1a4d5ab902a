"""Parameter groups and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, TrainingError
from .tensor import Tensor


@dataclass
class ParamGroup:
    name: str
    tensors: list[tuple[str, Tensor]]
    frozen: bool = False

    def __post_init__(self):
        # frozen tensors never record gradients of their own
        if self.frozen:
            for _, t in self.tensors:
                t.requires_grad = False


@dataclass
class AdamState:
    """First/second moment buffers keyed by ``(group, tensor name)``."""

    m: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)
    v: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)


def adam_step(
    groups: list[ParamGroup],
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    t: int,
    state: AdamState,
) -> None:
    """One bias-corrected Adam update on every non-frozen group, in place.

    Frozen groups are skipped entirely, whatever their ``.grad`` holds.
    """
    if t < 1:
        raise ContractError(f"Adam step index must be >= 1, got {t}")
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for group in groups:
        if group.frozen:
            continue
        for name, p in group.tensors:
            if p.grad is None:
                raise TrainingError(f"missing gradient for trainable tensor {group.name}/{name}")
            key = (group.name, name)
            g = p.grad
            m = state.m.get(key)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            else:
                v = state.v[key]
            m = beta1 * m + (1.0 - beta1) * g
            v = beta2 * v + (1.0 - beta2) * (g * g)
            state.m[key] = m
            state.v[key] = v
            m_hat = m / bc1
            v_hat = v / bc2
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    def __init__(
        self,
        groups: list[ParamGroup],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.groups = groups
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.state = AdamState()

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(f"{g.name}/{n}", t) for g in self.groups if not g.frozen for n, t in g.tensors]

    def zero_grad(self) -> None:
        for _, t in self.trainable():
            t.zero_grad()

    def step(self) -> None:
        self.t += 1
        adam_step(self.groups, self.lr, self.beta1, self.beta2, self.eps, self.t, self.state)
