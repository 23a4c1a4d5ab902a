"""Assembly of the encoder, prompt, frozen sequence model and adapter into one model.

Samples are turned into :class:`Batch` objects (disjoint unions of graphs)
before reaching the model; prompts are rendered and tokenized at that point
because they depend only on the input geometry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import adapter as ad
from . import promptkit
from .config import RunConfig
from .encoder import Encoder
from .errors import StatisticsError
from .geomgraph import GeometricGraph, N_CATEGORIES
from .lm import FrozenLM, embed_tokens, llm_forward_batch
from .numerics import Linear, Module, ParamGroup, Tensor
from .numerics import tensor as tn
from .promptkit import DESIGN_PROMPT, DYNAMICS_PROMPT, PromptSpec


@dataclass
class Sample:
    """One model input with its targets.

    ``window`` is ``(T, N, 3)``; static graphs use ``T == 1``.  Dynamics
    targets are ``(F, N, 3)``; design samples carry ``categories`` and a
    ``(R, 4, 3)`` backbone instead.
    """

    window: np.ndarray
    features: np.ndarray
    edges: np.ndarray
    targets: np.ndarray | None = None
    categories: np.ndarray | None = None
    backbone: np.ndarray | None = None
    prompt_ids: list[int] | None = None

    @property
    def n_nodes(self) -> int:
        return self.window.shape[1]

    def graph(self, t: int = -1) -> GeometricGraph:
        return GeometricGraph(self.features, self.window[t], self.edges)


@dataclass
class Batch:
    window: np.ndarray  # (T, sum N, 3)
    features: np.ndarray
    edges: np.ndarray  # offset into the union
    node_counts: list[int]
    prompt_ids: list[list[int] | None]
    targets: np.ndarray | None = None  # (F, sum N, 3)
    categories: np.ndarray | None = None  # (sum R,)
    backbone: np.ndarray | None = None  # (sum R, 4, 3)

    @property
    def n_graphs(self) -> int:
        return len(self.node_counts)


def collate(samples: list[Sample]) -> Batch:
    offsets = np.cumsum([0] + [s.n_nodes for s in samples])[:-1]
    edges = np.concatenate(
        [np.asarray(s.edges, dtype=np.int64).reshape(-1, 2) + off for s, off in zip(samples, offsets)]
    )
    cat = lambda name, axis=0: (  # noqa: E731
        None if getattr(samples[0], name) is None
        else np.concatenate([getattr(s, name) for s in samples], axis=axis)
    )
    return Batch(
        window=np.concatenate([s.window for s in samples], axis=1),
        features=np.concatenate([s.features for s in samples], axis=0),
        edges=edges,
        node_counts=[s.n_nodes for s in samples],
        prompt_ids=[s.prompt_ids for s in samples],
        targets=cat("targets", 1),
        categories=cat("categories"),
        backbone=cat("backbone"),
    )


def prompt_spec_for(config: RunConfig) -> PromptSpec:
    base = DYNAMICS_PROMPT if config.task == "dynamics" else DESIGN_PROMPT
    if config.prompt_template:
        base = promptkit.load_prompt_template(config.prompt_template, base)
    return PromptSpec(
        task_text=base.task_text,
        requirement_text=base.requirement_text,
        object_text=base.object_text,
        statistics_text=base.statistics_text,
        include_object=config.use_object,
        include_statistics=config.use_statistics,
        decimals=config.decimals,
    )


def build_prompt(sample: Sample, spec: PromptSpec, config: RunConfig) -> str:
    """Render the prompt of one sample; statistics come from its input geometry only."""
    stats = None
    if spec.include_statistics:
        if config.statistics_frame == "window":
            graphs = [sample.graph(t) for t in range(sample.window.shape[0])]
        else:
            graphs = sample.graph(-1)
        try:
            stats = promptkit.compute_statistics(graphs, spec.decimals)
        except StatisticsError:
            stats = None
    T = config.T if config.task == "dynamics" else None
    return promptkit.render_prompt(spec, sample.graph(-1), stats, T=T, F=config.F)


def attach_prompts(samples: list[Sample], config: RunConfig) -> None:
    if not config.uses_prompt:
        for s in samples:
            s.prompt_ids = None
        return
    spec = prompt_spec_for(config)
    for s in samples:
        s.prompt_ids = promptkit.tokenize(build_prompt(s, spec, config))


@dataclass
class ModelOutput:
    coords: Tensor  # (F, N, 3)
    features: Tensor  # (N, c_h)
    logits: Tensor | None = None  # (R, 20) for design
    extras: dict = field(default_factory=dict)


class EquiLLM(Module):
    """Encoder -> projector -> frozen LM -> re-projection -> EGNN adapter.

    The ``variant`` selects an ablation: ``encoder_only`` drops everything
    after the encoder; the ``llm_*_then_encoder`` variants run the raw node
    features through the sequence model first and drop the adapter.  Without
    an adapter the encoder's last layer carries the per-frame coordinate heads.
    """

    def __init__(self, config: RunConfig, in_features: int):
        rng = np.random.default_rng(config.seed)
        self.variant = config.variant
        self.task = config.task
        self.layout = config.layout
        n_frames = config.F
        T = config.T if config.task == "dynamics" else 1
        adapter_variant = config.variant == "full"
        self.encoder = Encoder(
            in_features,
            config.hidden,
            config.encoder_layers,
            T,
            rng,
            out_heads=1 if adapter_variant else n_frames,
            activation=config.activation,
            speed_scale=config.speed_scale,
        )
        self.adapter = ad.AdapterParams(config.hidden, config.d_llm, n_frames, rng, config.activation) if adapter_variant else None
        if config.variant in ("llm_then_encoder", "llm_no_prompt_then_encoder"):
            self.pre_proj_in = Linear(in_features, config.d_llm, rng)
            self.pre_proj_out = Linear(config.d_llm, in_features, rng, zero=True)
        else:
            self.pre_proj_in = self.pre_proj_out = None
        self.readout = Linear(config.hidden, N_CATEGORIES, rng) if config.task == "design" else None
        self.lm = (
            FrozenLM(config.d_llm, config.llm_blocks, config.llm_heads, config.llm_max_len, seed=config.llm_seed)
            if config.uses_llm
            else None
        )

    def param_groups(self) -> list[ParamGroup]:
        groups = [ParamGroup("encoder", list(self.encoder.named_parameters()))]
        if self.adapter is not None:
            groups.append(ParamGroup("projectors", list(self.adapter.proj_in.named_parameters("proj_in."))
                                     + list(self.adapter.proj_out.named_parameters("proj_out."))))
            groups.append(ParamGroup("adapter", list(self.adapter.egnn.named_parameters("egnn."))))
        if self.pre_proj_in is not None:
            groups.append(ParamGroup("projectors", list(self.pre_proj_in.named_parameters("pre_proj_in."))
                                     + list(self.pre_proj_out.named_parameters("pre_proj_out."))))
        if self.readout is not None:
            groups.append(ParamGroup("readout", list(self.readout.named_parameters("readout."))))
        if self.lm is not None:
            groups.append(ParamGroup("lm", list(self.lm.named_parameters()), frozen=True))
        return groups

    def _prompts(self, batch: Batch) -> list[Tensor | None]:
        return [None if ids is None else embed_tokens(ids, self.lm) for ids in batch.prompt_ids]

    def __call__(self, batch: Batch) -> ModelOutput:
        extras = {}
        feats_in = Tensor(batch.features)
        if self.pre_proj_in is not None:
            h_proj = self.pre_proj_in(feats_in)
            h_llm, _ = llm_forward_batch(h_proj, batch.node_counts, self._prompts(batch), self.layout, self.lm)
            feats_in = feats_in + self.pre_proj_out(h_llm)
            extras["h_llm"] = h_llm
        enc = self.encoder(batch.window, feats_in, batch.edges)
        extras["h_prime"] = enc.features_out
        if self.adapter is None:
            coords = enc.coords_out
            if coords.ndim == 2:
                coords = coords.reshape(1, *coords.shape)
            feats = enc.features_out
        else:
            h_proj = ad.project_in(enc.features_out, self.adapter)
            h_llm, _ = llm_forward_batch(h_proj, batch.node_counts, self._prompts(batch), self.layout, self.lm)
            h_r = ad.reproject_residual(h_llm, enc.features_out, self.adapter)
            out = ad.adapt(enc.coords_out, h_r, batch.edges, self.adapter)
            coords, feats = out.coords_out, out.features_out
            extras.update(h_proj=h_proj, h_llm=h_llm, h_r=h_r)
        logits = None
        if self.readout is not None:
            # residue logits: mean over the residue's four atom nodes
            n_atoms = feats.shape[0]
            per_atom = self.readout(feats)
            logits = tn.segment_sum(per_atom, np.arange(n_atoms) // 4, n_atoms // 4) * 0.25
        return ModelOutput(coords, feats, logits, extras)
