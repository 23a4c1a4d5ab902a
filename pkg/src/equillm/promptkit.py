"""Geometry-aware prompts: sectioned text, E(3)-invariant distance statistics, byte tokens.

Only edge lengths ever reach the text, so the rendered prompt of a graph and
of any rotated/reflected/translated copy are the same string (up to the
rounding of the statistics).
"""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass, replace
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ParseError, StatisticsError
from .geomgraph import GeometricGraph, edge_distances

MARKERS = ("<Task>", "<Object>", "<Statistics>", "<Requirement>")
PLACEHOLDERS = ("F", "T", "n_nodes", "d_min", "d_max", "d_mean")

BOS, EOS, PAD = 256, 257, 258
VOCAB_SIZE = 259

# invocation counters, used to check which stages a pipeline variant touches
CALLS: Counter = Counter()


@dataclass(frozen=True)
class PromptSpec:
    task_text: str
    requirement_text: str
    object_text: str = ""
    statistics_text: str = "min={d_min}, max={d_max}, mean={d_mean}"
    include_object: bool = True
    include_statistics: bool = True
    decimals: int = 3


DYNAMICS_PROMPT = PromptSpec(
    task_text="Predict the 3D coordinates of all {n_nodes} nodes for the next {F} frames.",
    requirement_text="Use the previous {T} frames; outputs must follow any rotation, reflection or shift.",
    object_text="A network of {n_nodes} point masses joined by springs.",
)

DESIGN_PROMPT = PromptSpec(
    task_text="Predict the residue types and backbone coordinates of the designed region.",
    requirement_text="Give one of 20 types per residue and 4 backbone atoms (N, CA, C, O) each.",
    object_text="A chain of {n_nodes} backbone atoms, four per residue.",
)


@dataclass(frozen=True)
class DistanceStats:
    d_min: float
    d_max: float
    d_mean: float


@dataclass
class PromptBundle:
    text: str
    token_ids: list[int]
    embedded: object = None  # Tensor (L, d_llm) once embedded by the sequence model


def round_half_away(x: float, decimals: int) -> Decimal:
    """Decimal rounding of ``repr(x)`` with ties away from zero."""
    return Decimal(repr(float(x))).quantize(Decimal(1).scaleb(-decimals), rounding=ROUND_HALF_UP)


def distance_statistics(graphs: GeometricGraph | Sequence[GeometricGraph]) -> DistanceStats:
    """Unrounded min/max/mean of edge lengths, pooled over ``graphs``."""
    if isinstance(graphs, GeometricGraph):
        graphs = [graphs]
    d = np.concatenate([edge_distances(g) for g in graphs]) if graphs else np.zeros(0)
    if d.size == 0:
        raise StatisticsError("distance statistics need at least one edge")
    return DistanceStats(float(d.min()), float(d.max()), float(d.mean()))


def compute_statistics(graphs, decimals: int = 3) -> DistanceStats:
    """Edge-length statistics rounded half away from zero to ``decimals`` places."""
    CALLS["compute_statistics"] += 1
    raw = distance_statistics(graphs)
    return DistanceStats(
        *(float(round_half_away(v, decimals)) for v in (raw.d_min, raw.d_max, raw.d_mean))
    )


def _fill(text: str, values: dict) -> str:
    try:
        return text.format_map(values)
    except (KeyError, IndexError, ValueError) as exc:
        raise ConfigError(f"bad placeholder in prompt text {text!r}: {exc}") from exc


def render_prompt(
    spec: PromptSpec,
    g: GeometricGraph,
    stats: DistanceStats | None,
    T: int | None = None,
    F: int | None = None,
) -> str:
    """Render the sectioned prompt.

    ``stats=None`` drops the statistics section; empty object or requirement
    bodies drop theirs.
    """
    CALLS["render_prompt"] += 1
    fmt = f"{{:.{spec.decimals}f}}"
    values: dict = {"n_nodes": g.n_nodes, "T": "" if T is None else T, "F": "" if F is None else F}
    if stats is not None:
        for key in ("d_min", "d_max", "d_mean"):
            values[key] = fmt.format(round_half_away(getattr(stats, key), spec.decimals))
    lines = ["<Task> " + _fill(spec.task_text, values)]
    if spec.include_object and spec.object_text:
        lines.append("<Object> " + _fill(spec.object_text, values))
    if spec.include_statistics and stats is not None:
        lines.append("<Statistics> " + _fill(spec.statistics_text, values))
    if spec.requirement_text:
        lines.append("<Requirement> " + _fill(spec.requirement_text, values))
    return "\n".join(lines)


def load_prompt_template(path: str | Path, base: PromptSpec = DYNAMICS_PROMPT) -> PromptSpec:
    """Read section bodies from a template file.

    Each section starts on a line beginning with its marker; following lines
    without a marker continue the current section.  Sections absent from the
    file keep the bodies of ``base``.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read prompt template {path}: {exc}") from exc
    bodies: dict[str, list[str]] = {}
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        marker = next((m for m in MARKERS if line.startswith(m)), None)
        if marker is not None:
            current = marker
            bodies[current] = [line[len(marker):].strip()]
        elif current is not None:
            bodies[current].append(line)
        elif line.strip():
            raise ParseError(f"{path}: line {lineno}: text before the first section marker")
    fields = {
        "<Task>": "task_text",
        "<Object>": "object_text",
        "<Statistics>": "statistics_text",
        "<Requirement>": "requirement_text",
    }
    updates = {fields[m]: "\n".join(lines).rstrip() for m, lines in bodies.items()}
    for body in updates.values():
        for name in _placeholder_names(body):
            if name not in PLACEHOLDERS:
                raise ParseError(f"{path}: unknown placeholder {{{name}}}")
    return replace(base, **updates)


def _placeholder_names(text: str) -> list[str]:
    return [name for _, name, _, _ in string.Formatter().parse(text) if name]


def tokenize(text: str) -> list[int]:
    """Byte-level ids: ``[BOS] + utf8 bytes + [EOS]``."""
    CALLS["tokenize"] += 1
    return [BOS, *text.encode("utf-8"), EOS]


def detokenize(ids: Sequence[int]) -> str:
    return bytes(i for i in ids if i < 256).decode("utf-8")
