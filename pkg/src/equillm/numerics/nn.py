"""Parameter containers, deterministic initialization and the dense layers."""

from __future__ import annotations

from typing import Callable, Iterator, Sequence

import numpy as np

from ..errors import ConfigError, DimensionError
from . import tensor as tn
from .tensor import Tensor

Activation = Callable[[Tensor], Tensor]

ACTIVATIONS: dict[str, Activation] = {
    "silu": tn.silu,
    "tanh": tn.tanh,
    "gelu": tn.gelu,
}


class Module:
    """Minimal parameter tree: attributes that are Tensors, Modules or lists of them."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            yield from _walk(value, f"{prefix}{key}")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def set_requires_grad(self, flag: bool) -> None:
        for t in self.parameters():
            t.requires_grad = flag

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.zero_grad()


def _walk(value, name: str) -> Iterator[tuple[str, Tensor]]:
    if isinstance(value, Tensor):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def affine(x: Tensor, W: Tensor, b: Tensor | None) -> Tensor:
    """``x @ W + b`` over the last axis of ``x``; ``b=None`` means no bias."""
    if x.shape[-1] != W.shape[0] or W.ndim != 2 or (b is not None and b.shape != (W.shape[1],)):
        raise DimensionError(
            f"affine: input {x.shape} incompatible with weight {W.shape} / bias {None if b is None else b.shape}"
        )
    out = tn.matmul(x, W)
    return out if b is None else tn.add(out, b)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, zero: bool = False, bias: bool = True):
        w = np.zeros((d_in, d_out)) if zero else glorot(rng, d_in, d_out)
        self.W = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    @property
    def d_in(self) -> int:
        return self.W.shape[0]

    @property
    def d_out(self) -> int:
        return self.W.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.W, self.b)


def mlp_forward(
    x: Tensor,
    layers: Sequence[tuple[Tensor, Tensor]],
    activation: Activation = tn.silu,
    final_activation: bool = False,
) -> Tensor:
    """Affine maps with ``activation`` between them (and after the last if asked)."""
    if not layers:
        raise ConfigError("mlp_forward needs at least one layer")
    out = x
    last = len(layers) - 1
    for i, (W, b) in enumerate(layers):
        out = affine(out, W, b)
        if i < last or final_activation:
            out = activation(out)
    return out


class MLP(Module):
    """Stack of :class:`Linear` layers.

    ``zero_last`` zero-initializes the final affine map so the network starts
    as the constant zero function; used for the coordinate heads and the
    feature re-projection to get an identity model at step 0.
    """

    def __init__(
        self,
        sizes: Sequence[int],
        rng: np.random.Generator,
        activation: str = "silu",
        final_activation: bool = False,
        zero_last: bool = False,
    ):
        if len(sizes) < 2:
            raise ConfigError(f"MLP needs at least input and output sizes, got {list(sizes)}")
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        n = len(sizes) - 1
        self.layers = [
            Linear(sizes[i], sizes[i + 1], rng, zero=zero_last and i == n - 1) for i in range(n)
        ]
        self.activation = activation
        self.final_activation = final_activation

    def __call__(self, x: Tensor) -> Tensor:
        return mlp_forward(
            x,
            [(layer.W, layer.b) for layer in self.layers],
            ACTIVATIONS[self.activation],
            self.final_activation,
        )

    def named_parameters(self, prefix: str = ""):
        for i, layer in enumerate(self.layers):
            yield from layer.named_parameters(prefix=f"{prefix}layers.{i}.")
