"""Shared builders for small models and inputs used across the test modules."""

from __future__ import annotations

import numpy as np

from equillm import geomgraph as gg
from equillm import promptkit
from equillm.config import RunConfig
from equillm.model import EquiLLM, Sample, build_prompt, collate
from equillm.promptkit import PromptSpec

# a short prompt keeps the miniature sequence model cheap to differentiate numerically
SHORT_SPEC = PromptSpec(
    task_text="next {F}",
    requirement_text="E3",
    object_text="{n_nodes} nodes",
    statistics_text="{d_min} {d_max} {d_mean}",
)


def mini_config(**kw) -> RunConfig:
    base = dict(T=3, F=2, hidden=8, encoder_layers=2, d_llm=8, llm_blocks=1, llm_heads=2,
                llm_max_len=96, n_nodes=5, seed=3)
    base.update(kw)
    return RunConfig(**base)


def random_sample(rng: np.random.Generator, n_nodes: int = 5, T: int = 3, F: int = 2, n_types: int = 2) -> Sample:
    pairs = gg.random_connected_graph(n_nodes, 2.5, rng)
    edges = gg.undirected_to_directed(pairs)
    feats = np.eye(n_types)[rng.integers(0, n_types, n_nodes)]
    window = np.cumsum(rng.standard_normal((T, n_nodes, 3)) * 0.3, axis=0) + rng.standard_normal((1, n_nodes, 3))
    targets = window[-1][None] + rng.standard_normal((F, n_nodes, 3)) * 0.1
    return Sample(window, feats, edges, targets=targets)


def short_prompts(samples, config: RunConfig) -> None:
    spec = PromptSpec(SHORT_SPEC.task_text, SHORT_SPEC.requirement_text, SHORT_SPEC.object_text,
                      SHORT_SPEC.statistics_text, config.use_object, config.use_statistics, config.decimals)
    for s in samples:
        s.prompt_ids = promptkit.tokenize(build_prompt(s, spec, config)) if config.uses_prompt else None


def randomize_zero_init(model: EquiLLM, rng: np.random.Generator, scale: float = 0.3) -> None:
    """Replace all-zero weight matrices (identity-start heads) with random values."""
    for _, t in model.named_parameters():
        if t.data.ndim == 2 and not np.any(t.data):
            t.data = rng.standard_normal(t.shape) * scale


def mini_pipeline(seed: int = 0, n_samples: int = 1, **kw):
    """A small full model with non-trivial heads and a batch with short prompts."""
    cfg = mini_config(**kw)
    rng = np.random.default_rng(seed)
    samples = [random_sample(rng, cfg.n_nodes, cfg.T, cfg.F) for _ in range(n_samples)]
    short_prompts(samples, cfg)
    model = EquiLLM(cfg, samples[0].features.shape[1])
    randomize_zero_init(model, rng)
    return cfg, model, collate(samples), samples


# two sections only: the shortest prompt that still carries geometry
TINY_SPEC = PromptSpec("go {F}", "E3", "", "{d_mean}", include_object=False, decimals=2)


def gradcheck_pipeline(seed: int = 0):
    """Miniature full pipeline (5 nodes, T=3, F=2, d_llm=8, one block) and its loss closure.

    Targets sit a small random offset away from the current prediction so the
    loss is smooth and small; zero-initialized heads are randomized so that
    every parameter lies on a path to the loss.
    """
    from equillm.numerics import no_grad
    from equillm.tasks import mse_loss

    cfg = mini_config(hidden=4, encoder_layers=1, llm_max_len=64, activation="tanh")
    rng = np.random.default_rng(seed)
    s = random_sample(rng, 5, cfg.T, cfg.F)
    s.prompt_ids = promptkit.tokenize(build_prompt(s, TINY_SPEC, cfg))
    model = EquiLLM(cfg, s.features.shape[1])
    randomize_zero_init(model, rng)
    batch = collate([s])
    with no_grad():
        pred = model(batch).coords.data
    batch.targets = pred + rng.standard_normal(pred.shape) * 0.01
    return model, (lambda: mse_loss(model(batch).coords, batch.targets))
