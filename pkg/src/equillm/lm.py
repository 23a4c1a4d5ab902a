"""Frozen transformer that processes projected node features alongside prompt embeddings.

The weights are seeded random stand-ins for a pretrained model and never
receive optimizer updates; gradients still flow *through* them into the
projected features.  Attention is bidirectional, so features and prompt see
each other whichever comes first in the sequence.

Node-feature rows get no positional embedding: the nodes of a graph are an
unordered set, and leaving them unpositioned keeps the whole model
equivariant to node relabeling.  Prompt tokens are positioned by their index
within the prompt.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CapacityError, ConfigError, DimensionError, VocabularyError
from .numerics import Linear, Module, Tensor, as_tensor, glorot
from .numerics import tensor as tn
from .promptkit import VOCAB_SIZE

FEATURES_FIRST = "features_first"
PROMPT_FIRST = "prompt_first"
LAYOUTS = (FEATURES_FIRST, PROMPT_FIRST)

CALLS: Counter = Counter()

_MASKED = -1e30
_LN_EPS = 1e-5


@dataclass(frozen=True)
class SequenceLayout:
    order: str
    feature_span: tuple[int, int]  # (start, length) of the node-feature rows
    prompt_span: tuple[int, int]

    @classmethod
    def build(cls, order: str, n_features: int, n_prompt: int) -> "SequenceLayout":
        if order == FEATURES_FIRST:
            return cls(order, (0, n_features), (n_features, n_prompt))
        if order == PROMPT_FIRST:
            return cls(order, (n_prompt, n_features), (0, n_prompt))
        raise ConfigError(f"unknown layout {order!r}; expected one of {LAYOUTS}")

    @property
    def length(self) -> int:
        return self.feature_span[1] + self.prompt_span[1]


class Block(Module):
    def __init__(self, d: int, n_heads: int, d_ff: int, rng: np.random.Generator):
        self.ln1_g = Tensor(np.ones(d))
        self.ln1_b = Tensor(np.zeros(d))
        self.q = Linear(d, d, rng)
        # a key bias shifts every score of a query equally, so softmax cancels it
        self.k = Linear(d, d, rng, bias=False)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)
        self.ln2_g = Tensor(np.ones(d))
        self.ln2_b = Tensor(np.zeros(d))
        self.ff1 = Linear(d, d_ff, rng)
        self.ff2 = Linear(d_ff, d, rng)
        self.n_heads = n_heads


class FrozenLM(Module):
    def __init__(
        self,
        d_model: int = 64,
        n_blocks: int = 2,
        n_heads: int = 4,
        max_len: int = 512,
        seed: int = 0,
        vocab_size: int = VOCAB_SIZE,
        d_ff: int | None = None,
    ):
        if d_model % n_heads:
            raise ConfigError(f"d_model={d_model} is not divisible by n_heads={n_heads}")
        rng = np.random.default_rng(seed)
        self.token_embedding = Tensor(glorot(rng, vocab_size, d_model))
        self.positional_embedding = Tensor(glorot(rng, max_len, d_model))
        d_ff = 4 * d_model if d_ff is None else d_ff
        self.blocks = [Block(d_model, n_heads, d_ff, rng) for _ in range(n_blocks)]
        self.n_heads = n_heads
        self.set_requires_grad(False)

    @property
    def d_model(self) -> int:
        return self.token_embedding.shape[1]

    @property
    def max_len(self) -> int:
        return self.positional_embedding.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.token_embedding.shape[0]


def embed_tokens(token_ids: Sequence[int], params: FrozenLM) -> Tensor:
    """``token_embedding[id_i] + positional_embedding[i]`` for each position ``i``."""
    ids = np.asarray(list(token_ids), dtype=np.int64)
    if ids.size == 0:
        return Tensor(np.zeros((0, params.d_model)))
    if ids.min() < 0 or ids.max() >= params.vocab_size:
        bad = int(ids[(ids < 0) | (ids >= params.vocab_size)][0])
        raise VocabularyError(f"token id {bad} outside vocabulary of size {params.vocab_size}")
    if ids.size > params.max_len:
        raise CapacityError(f"{ids.size} tokens exceed L_max={params.max_len}")
    return tn.take_rows(params.token_embedding, ids) + params.positional_embedding[: ids.size]


def layer_norm(x: Tensor, g: Tensor, b: Tensor) -> Tensor:
    mu = tn.mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = tn.mean(xc * xc, axis=-1, keepdims=True)
    return xc / tn.sqrt(var + _LN_EPS) * g + b


def attention(x: Tensor, blk: Block, key_mask: np.ndarray | None = None) -> Tensor:
    """Bidirectional multi-head self-attention on ``x (B, S, d)``.

    ``key_mask (B, S)`` is True for real positions; padded keys get zero weight.
    """
    B, S, d = x.shape
    H = blk.n_heads
    dh = d // H

    def heads(t: Tensor) -> Tensor:
        return t.reshape(B, S, H, dh).transpose(0, 2, 1, 3)

    q, k, v = heads(blk.q(x)), heads(blk.k(x)), heads(blk.v(x))
    scores = tn.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    if key_mask is not None and not key_mask.all():
        scores = scores + np.where(key_mask, 0.0, _MASKED)[:, None, None, :]
    weights = tn.softmax(scores, axis=-1)
    ctx = tn.matmul(weights, v).transpose(0, 2, 1, 3).reshape(B, S, d)
    return blk.o(ctx)


def run_blocks(x: Tensor, params: FrozenLM, key_mask: np.ndarray | None = None) -> Tensor:
    """Pre-norm residual blocks: ``x + attn(LN(x))`` then ``x + FFN(LN(x))``."""
    for blk in params.blocks:
        x = x + attention(layer_norm(x, blk.ln1_g, blk.ln1_b), blk, key_mask)
        hidden = tn.gelu(blk.ff1(layer_norm(x, blk.ln2_g, blk.ln2_b)))
        x = x + blk.ff2(hidden)
    return x


def llm_forward_batch(
    h_proj: Tensor,
    node_counts: Sequence[int],
    prompts: Sequence[Tensor | None],
    order: str,
    params: FrozenLM,
) -> tuple[Tensor, list[Tensor]]:
    """Run several graphs at once.

    ``h_proj`` stacks the projected node features of all graphs (graph ``b``
    owns ``node_counts[b]`` consecutive rows); ``prompts[b]`` is that graph's
    embedded prompt ``(L_b, d)`` or ``None``.  Sequences are right-padded to a
    common length and padded keys are masked out.  Returns the stacked
    feature outputs (same row order as ``h_proj``) and the per-graph prompt outputs.
    """
    CALLS["llm_forward"] += 1
    h_proj = as_tensor(h_proj)
    d = params.d_model
    if h_proj.ndim != 2 or h_proj.shape[1] != d:
        raise DimensionError(f"projected features {h_proj.shape} do not match d_llm={d}")
    if sum(node_counts) != h_proj.shape[0]:
        raise DimensionError(f"node counts {list(node_counts)} do not cover {h_proj.shape[0]} rows")
    B = len(node_counts)
    prompt_lens = [0 if p is None else p.shape[0] for p in prompts]
    layouts = [SequenceLayout.build(order, n, L) for n, L in zip(node_counts, prompt_lens)]
    for lay in layouts:
        if lay.length > params.max_len:
            raise CapacityError(f"sequence of {lay.length} rows exceeds L_max={params.max_len}")
    S = max(lay.length for lay in layouts)

    # gather every sequence from one pool: features, prompts, then a zero pad row
    pieces = [h_proj] + [p for p in prompts if p is not None and p.shape[0]]
    n_feat = h_proj.shape[0]
    pool = tn.concat(pieces + [Tensor(np.zeros((1, d)))], axis=0)
    pad_row = pool.shape[0] - 1
    index = np.full((B, S), pad_row, dtype=np.int64)
    key_mask = np.zeros((B, S), dtype=bool)
    feat_pos = np.empty(n_feat, dtype=np.int64)
    f_off, p_off = 0, n_feat
    for b, lay in enumerate(layouts):
        fs, fn = lay.feature_span
        ps, pn = lay.prompt_span
        index[b, fs : fs + fn] = np.arange(f_off, f_off + fn)
        index[b, ps : ps + pn] = np.arange(p_off, p_off + pn)
        key_mask[b, : lay.length] = True
        feat_pos[f_off : f_off + fn] = b * S + np.arange(fs, fs + fn)
        f_off += fn
        p_off += pn
    x = tn.take_rows(pool, index.reshape(-1)).reshape(B, S, d)
    y = run_blocks(x, params, key_mask).reshape(B * S, d)
    h_llm = tn.take_rows(y, feat_pos)
    p_llm = []
    for b, lay in enumerate(layouts):
        ps, pn = lay.prompt_span
        p_llm.append(y[b * S + ps : b * S + ps + pn])
    return h_llm, p_llm


def llm_forward(
    h_proj: Tensor, prompt: Tensor | None, order: str, params: FrozenLM
) -> tuple[Tensor, Tensor]:
    """Single-graph form: returns ``(H_llm, P_llm)`` split out of the processed sequence."""
    h_llm, p_llm = llm_forward_batch(h_proj, [h_proj.shape[0]], [prompt], order, params)
    return h_llm, p_llm[0]


def freeze_fingerprint(params: FrozenLM) -> int:
    """Order-stable 64-bit digest of every parameter's name, shape and bytes."""
    h = hashlib.blake2b(digest_size=8)
    for name, t in params.named_parameters():
        h.update(name.encode())
        h.update(repr(t.shape).encode())
        h.update(np.ascontiguousarray(t.data, dtype=np.float64).tobytes())
    return int.from_bytes(h.digest(), "little")
