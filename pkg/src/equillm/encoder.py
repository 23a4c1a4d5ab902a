"""Equivariant encoder: temporal speed embedding followed by stacked EGNN layers.

Graphs are processed as flat node sets; a batch of graphs is simply their
disjoint union (offset edge indices), which the layers never need to know about.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .numerics import MLP, Module, Tensor, as_tensor
from .numerics import tensor as tn


@dataclass
class EncodedGraph:
    coords_out: Tensor  # (N, 3), or (F, N, 3) with multiple coordinate heads
    features_out: Tensor  # (N, c_h)
    edges: np.ndarray


@dataclass
class LayerOutput:
    coords: list[Tensor]  # one (N, 3) tensor per coordinate head
    feats: Tensor
    messages: Tensor  # (E, d_m)


class EGNNLayer(Module):
    """One E(3)-equivariant message-passing layer.

    Messages ``m_ij = phi_m(h_i, h_j, |x_i - x_j|)`` are summed into the
    feature update and weight the relative vectors of a mean-aggregated
    coordinate update.  With ``n_heads > 1`` several coordinate heads share
    the same messages and each yields its own coordinate set.
    """

    def __init__(
        self,
        hidden: int,
        rng: np.random.Generator,
        n_heads: int = 1,
        activation: str = "silu",
        zero_heads: bool = True,
    ):
        if n_heads < 1:
            raise ContractError(f"need at least one coordinate head, got {n_heads}")
        self.phi_m = MLP([2 * hidden + 1, hidden, hidden], rng, activation, final_activation=True)
        self.phi_h = MLP([2 * hidden, hidden, hidden], rng, activation)
        self.phi_x = [MLP([hidden, hidden, 1], rng, activation, zero_last=zero_heads) for _ in range(n_heads)]

    @property
    def hidden(self) -> int:
        return self.phi_h.layers[-1].d_out

    def __call__(self, coords, feats, edges: np.ndarray) -> LayerOutput:
        return egnn_layer(coords, feats, edges, self)


def _in_degree(edges: np.ndarray, n: int) -> np.ndarray:
    if edges.size == 0:
        return np.zeros(n)
    return np.bincount(edges[:, 1], minlength=n).astype(np.float64)


def egnn_layer(coords, feats, edges: np.ndarray, params: EGNNLayer) -> LayerOutput:
    """Apply ``params`` to node ``coords (N, 3)`` and ``feats (N, d)``.

    ``edges`` holds ``(j, i)`` pairs, j being a neighbour of i.  Nodes
    without neighbours receive a zero coordinate update and a zero message sum.
    """
    coords, feats = as_tensor(coords), as_tensor(feats)
    n = coords.shape[0]
    if feats.shape[0] != n:
        raise DimensionError(f"coords {coords.shape} and features {feats.shape} disagree on N")
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    src, dst = edges[:, 0], edges[:, 1]

    h_i = tn.take_rows(feats, dst)
    h_j = tn.take_rows(feats, src)
    rel = tn.take_rows(coords, dst) - tn.take_rows(coords, src)  # x_i - x_j
    dist = tn.norm(rel, axis=-1, keepdims=True)
    m = params.phi_m(tn.concat([h_i, h_j, dist], axis=-1))

    agg = tn.segment_sum(m, dst, n)
    feats_out = feats + params.phi_h(tn.concat([feats, agg], axis=-1))

    deg = _in_degree(edges, n)
    inv_deg = (1.0 / np.where(deg > 0, deg, 1.0))[:, None]
    coords_out = []
    for head in params.phi_x:
        w = head(m)  # (E, 1)
        upd = tn.segment_sum(w * rel, dst, n) * inv_deg
        coords_out.append(coords + upd)
    return LayerOutput(coords_out, feats_out, m)


def temporal_speeds(window: np.ndarray) -> np.ndarray:
    """Per-node speeds ``|x_t - x_{t-1}|`` for t = 2..T, shape ``(N, T-1)``."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 3 or window.shape[0] < 2:
        raise ContractError(f"temporal embedding needs a (T>=2, N, 3) window, got {window.shape}")
    d = window[1:] - window[:-1]
    return np.sqrt(np.sum(d * d, axis=-1)).T


def temporal_embed(window, node_features, mlp: MLP, speed_scale: float = 1.0) -> Tensor:
    """``mlp(features || speed_scale * speeds)``: invariant per-node summary of a window."""
    speeds = temporal_speeds(window.data if isinstance(window, Tensor) else window)
    feats = as_tensor(node_features)
    return mlp(tn.concat([feats, Tensor(speeds * speed_scale)], axis=-1))


class Encoder(Module):
    """Reference spatio-temporal encoder.

    ``T >= 2`` selects the temporal front-end (features plus frame-to-frame
    speeds); ``T == 1`` embeds the node features alone, for static graphs.
    Base coordinates are the last input frame.  ``out_heads > 1`` gives the
    final layer that many coordinate heads, for use without an adapter.
    """

    def __init__(
        self,
        in_features: int,
        hidden: int,
        n_layers: int,
        T: int,
        rng: np.random.Generator,
        out_heads: int = 1,
        activation: str = "silu",
        speed_scale: float = 1.0,
    ):
        if T < 1:
            raise ContractError(f"T must be >= 1, got {T}")
        if n_layers < 1:
            raise ContractError(f"encoder needs at least one layer, got {n_layers}")
        self.T = T
        self.speed_scale = speed_scale
        extra = T - 1 if T >= 2 else 0
        self.embed = MLP([in_features + extra, hidden, hidden], rng, activation)
        self.layers = [
            EGNNLayer(hidden, rng, n_heads=out_heads if k == n_layers - 1 else 1, activation=activation)
            for k in range(n_layers)
        ]

    def __call__(self, window, node_features, edges: np.ndarray) -> EncodedGraph:
        return encode(window, node_features, edges, self)


def encode(window, node_features, edges: np.ndarray, params: Encoder) -> EncodedGraph:
    """Encode a ``(T, N, 3)`` window (or ``(N, 3)`` coordinates when ``T == 1``)."""
    window = window.data if isinstance(window, Tensor) else np.asarray(window, dtype=np.float64)
    if window.ndim == 2:
        window = window[None]
    if window.shape[0] != params.T:
        raise ContractError(f"encoder configured for T={params.T}, got a window of {window.shape[0]} frames")
    if params.T >= 2:
        h = temporal_embed(window, node_features, params.embed, params.speed_scale)
    else:
        h = params.embed(as_tensor(node_features))
    x = Tensor(window[-1])
    out = None
    for layer in params.layers:
        out = layer(x, h, edges)
        x, h = out.coords[0], out.feats
    coords = out.coords[0] if len(out.coords) == 1 else tn.stack(out.coords, axis=0)
    return EncodedGraph(coords, h, np.asarray(edges))
