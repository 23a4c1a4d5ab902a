"""Seam between invariant and equivariant processing.

``project_in`` maps encoder features into the sequence-model width,
``reproject_residual`` brings the sequence-model output back and adds it to
the encoder features, and ``adapt`` is a single EGNN layer with one
coordinate head per predicted frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import EGNNLayer, egnn_layer
from .errors import DimensionError
from .numerics import Linear, Module, Tensor, as_tensor
from .numerics import tensor as tn


@dataclass
class AdapterOutput:
    coords_out: Tensor  # (F, N, 3)
    features_out: Tensor  # (N, c_h)
    messages: Tensor


class AdapterParams(Module):
    def __init__(self, hidden: int, d_llm: int, n_frames: int, rng: np.random.Generator, activation: str = "silu"):
        self.proj_in = Linear(hidden, d_llm, rng)
        self.proj_out = Linear(d_llm, hidden, rng, zero=True)
        self.egnn = EGNNLayer(hidden, rng, n_heads=n_frames, activation=activation)

    @property
    def n_frames(self) -> int:
        return len(self.egnn.phi_x)


def project_in(h_prime, params: AdapterParams) -> Tensor:
    h_prime = as_tensor(h_prime)
    if h_prime.shape[-1] != params.proj_in.d_in:
        raise DimensionError(f"features of width {h_prime.shape[-1]}, projector expects {params.proj_in.d_in}")
    return params.proj_in(h_prime)


def reproject_residual(h_llm, h_prime, params: AdapterParams) -> Tensor:
    """``H_r = H' + proj_out(H_llm)``."""
    h_llm, h_prime = as_tensor(h_llm), as_tensor(h_prime)
    if h_llm.shape[-1] != params.proj_out.d_in or h_prime.shape[-1] != params.proj_out.d_out:
        raise DimensionError(
            f"re-projection widths: got H_llm {h_llm.shape}, H' {h_prime.shape}, "
            f"weight {params.proj_out.W.shape}"
        )
    if h_llm.shape[0] != h_prime.shape[0]:
        raise DimensionError(f"H_llm has {h_llm.shape[0]} rows, H' has {h_prime.shape[0]}")
    return h_prime + params.proj_out(h_llm)


def adapt(x_prime, h_r, edges: np.ndarray, params: AdapterParams) -> AdapterOutput:
    """One EGNN layer; head ``f`` yields the coordinates of future frame ``f``."""
    out = egnn_layer(x_prime, h_r, edges, params.egnn)
    return AdapterOutput(tn.stack(out.coords, axis=0), out.feats, out.messages)
