from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from equillm import lm
from equillm.errors import CapacityError, ConfigError, DimensionError, VocabularyError
from equillm.numerics import Tensor

import oracles

seeds = st.integers(0, 2**32 - 1)


def _randomize_norms(model, rng):
    for blk in model.blocks:
        for t in (blk.ln1_g, blk.ln1_b, blk.ln2_g, blk.ln2_b):
            t.data = t.data + rng.standard_normal(t.shape) * 0.3
        for lin in (blk.q, blk.v, blk.o, blk.ff1, blk.ff2):
            lin.b.data = rng.standard_normal(lin.b.shape) * 0.3


# -- embeddings -------------------------------------------------------------------------
def test_embed_empty():
    model = lm.FrozenLM(8, 1, 2, 16)
    assert lm.embed_tokens([], model).shape == (0, 8)


def test_embed_single_with_zero_position():
    model = lm.FrozenLM(8, 1, 2, 16)
    model.positional_embedding.data = np.zeros((16, 8))
    assert np.array_equal(lm.embed_tokens([65], model).data[0], model.token_embedding.data[65])


def test_embed_repeated_token_differs_by_positions():
    model = lm.FrozenLM(8, 1, 2, 16)
    e = lm.embed_tokens([7, 7], model).data
    pos = model.positional_embedding.data
    assert np.max(np.abs((e[1] - e[0]) - (pos[1] - pos[0]))) <= 1e-15


def test_embed_errors():
    model = lm.FrozenLM(8, 1, 2, 4)
    with pytest.raises(VocabularyError):
        lm.embed_tokens([259], model)
    with pytest.raises(VocabularyError):
        lm.embed_tokens([-1], model)
    with pytest.raises(CapacityError):
        lm.embed_tokens([1, 2, 3, 4, 5], model)


def test_heads_must_divide_width():
    with pytest.raises(ConfigError):
        lm.FrozenLM(10, 1, 4)


def test_all_parameters_frozen():
    model = lm.FrozenLM(8, 2, 2, 16)
    assert all(not t.requires_grad for t in model.parameters())


# -- forward ------------------------------------------------------------------------------
def test_zero_blocks_is_identity():
    rng = np.random.default_rng(0)
    model = lm.FrozenLM(8, 0, 2, 32)
    h = rng.standard_normal((5, 8))
    p = lm.embed_tokens([256, 1, 2, 257], model)
    for order in lm.LAYOUTS:
        h_llm, p_llm = lm.llm_forward(Tensor(h), p, order, model)
        assert np.array_equal(h_llm.data, h) and np.array_equal(p_llm.data, p.data)


def test_forward_deterministic():
    rng = np.random.default_rng(1)
    model = lm.FrozenLM(8, 2, 2, 32)
    h = Tensor(rng.standard_normal((5, 8)))
    p = lm.embed_tokens([256, 70, 71, 257], model)
    a, _ = lm.llm_forward(h, p, lm.FEATURES_FIRST, model)
    b, _ = lm.llm_forward(h, p, lm.FEATURES_FIRST, model)
    assert a.data.tobytes() == b.data.tobytes()


def test_small_attention_block_matches_oracle():
    rng = np.random.default_rng(2)
    model = lm.FrozenLM(4, 1, 1, 8, seed=5)
    _randomize_norms(model, rng)
    x = rng.standard_normal((3, 4))
    out = lm.run_blocks(Tensor(x[None]), model).data[0]
    ref = np.array(oracles.transformer_block(x.tolist(), model.blocks[0]))
    assert np.max(np.abs(out - ref)) <= 1e-10


@given(seeds, st.integers(1, 6), st.sampled_from([(4, 1), (4, 2), (6, 3), (8, 2)]))
@settings(max_examples=100, deadline=None)
def test_attention_block_matches_oracle(seed, S, dims):
    d, H = dims
    rng = np.random.default_rng(seed)
    model = lm.FrozenLM(d, 1, H, 8, seed=seed % 1000)
    _randomize_norms(model, rng)
    x = rng.standard_normal((S, d))
    blk = model.blocks[0]
    att = lm.attention(Tensor(x[None]), blk).data[0]
    assert np.max(np.abs(att - np.array(oracles.attention(x.tolist(), blk)))) <= 1e-10
    out = lm.run_blocks(Tensor(x[None]), model).data[0]
    assert np.max(np.abs(out - np.array(oracles.transformer_block(x.tolist(), blk)))) <= 1e-10


@pytest.mark.parametrize("order", lm.LAYOUTS)
def test_layout_spans(order):
    lay = lm.SequenceLayout.build(order, 5, 3)
    assert lay.length == 8
    if order == lm.FEATURES_FIRST:
        assert lay.feature_span == (0, 5) and lay.prompt_span == (5, 3)
    else:
        assert lay.feature_span == (3, 5) and lay.prompt_span == (0, 3)
    with pytest.raises(ConfigError):
        lm.SequenceLayout.build("sideways", 1, 1)


@pytest.mark.parametrize("order", lm.LAYOUTS)
def test_node_permutation_equivariance(order):
    rng = np.random.default_rng(3)
    model = lm.FrozenLM(8, 2, 2, 32)
    h = rng.standard_normal((6, 8))
    p = lm.embed_tokens([256, 10, 11, 12, 257], model)
    perm = rng.permutation(6)
    a, pa = lm.llm_forward(Tensor(h), p, order, model)
    b, pb = lm.llm_forward(Tensor(h[perm]), p, order, model)
    assert np.max(np.abs(a.data[perm] - b.data)) <= 1e-12
    assert np.max(np.abs(pa.data - pb.data)) <= 1e-12


@pytest.mark.parametrize("order", lm.LAYOUTS)
def test_padded_batch_matches_single_runs(order):
    rng = np.random.default_rng(4)
    model = lm.FrozenLM(8, 2, 2, 32)
    counts = [3, 5, 2]
    h = rng.standard_normal((10, 8))
    prompts = [lm.embed_tokens([256, 1, 257], model), None, lm.embed_tokens([256, 5, 6, 7, 8, 9, 257], model)]
    out, p_out = lm.llm_forward_batch(Tensor(h), counts, prompts, order, model)
    start = 0
    for n, p, po in zip(counts, prompts, p_out):
        single, sp = lm.llm_forward(Tensor(h[start : start + n]), p, order, model)
        assert np.max(np.abs(out.data[start : start + n] - single.data)) <= 1e-12
        assert po.shape == sp.shape and np.max(np.abs(po.data - sp.data), initial=0.0) <= 1e-12
        start += n


def test_forward_errors():
    model = lm.FrozenLM(8, 1, 2, 6)
    with pytest.raises(DimensionError):
        lm.llm_forward_batch(Tensor(np.zeros((3, 4))), [3], [None], lm.FEATURES_FIRST, model)
    with pytest.raises(DimensionError):
        lm.llm_forward_batch(Tensor(np.zeros((3, 8))), [2], [None], lm.FEATURES_FIRST, model)
    with pytest.raises(CapacityError):
        lm.llm_forward(Tensor(np.zeros((4, 8))), lm.embed_tokens([1, 2, 3], model), lm.FEATURES_FIRST, model)


# -- fingerprint -----------------------------------------------------------------------------
def test_fingerprint_stable_and_sensitive():
    a, b = lm.FrozenLM(8, 1, 2, 16, seed=3), lm.FrozenLM(8, 1, 2, 16, seed=3)
    assert lm.freeze_fingerprint(a) == lm.freeze_fingerprint(b)
    raw = b.blocks[0].ff1.W.data.copy()
    raw.view(np.uint64)[0, 0] ^= np.uint64(1)
    b.blocks[0].ff1.W.data = raw
    assert lm.freeze_fingerprint(a) != lm.freeze_fingerprint(b)
