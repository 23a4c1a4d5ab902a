"""Run configuration: a flat JSON object whose keys are exactly the fields below."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .lm import LAYOUTS

TASKS = ("dynamics", "design")
VARIANTS = ("full", "encoder_only", "llm_then_encoder", "llm_no_prompt_then_encoder")

# ablation rows: (slug, label, overrides on the base config)
ABLATION_ROWS: tuple[tuple[str, str, dict], ...] = (
    ("ee", "EE", {"variant": "encoder_only"}),
    ("llm_no_prompt_ee", "LLM (w/o Prompt) + EE", {"variant": "llm_no_prompt_then_encoder", "use_prompt": False}),
    ("llm_ee", "LLM + EE", {"variant": "llm_then_encoder"}),
    ("no_prompt", "w/o Prompt", {"variant": "full", "use_prompt": False}),
    ("no_object", "w/o Object Feature", {"variant": "full", "use_object": False}),
    ("no_statistics", "w/o Statistics", {"variant": "full", "use_statistics": False}),
    ("full", "EquiLLM", {"variant": "full"}),
)


@dataclass(frozen=True)
class RunConfig:
    task: str = "dynamics"
    variant: str = "full"
    # frames in / frames out
    T: int = 10
    F: int = 10
    # trainable model
    hidden: int = 64
    encoder_layers: int = 4
    activation: str = "silu"
    speed_scale: float = 10.0
    # frozen sequence model
    d_llm: int = 64
    llm_blocks: int = 2
    llm_heads: int = 4
    llm_max_len: int = 512
    llm_seed: int = 0
    layout: str = "features_first"
    # prompt
    use_prompt: bool = True
    use_object: bool = True
    use_statistics: bool = True
    statistics_frame: str = "last"
    prompt_template: str | None = None
    decimals: int = 3
    # objective and optimizer
    lam: float = 1.0
    delta: float = 1.0
    lr: float = 3e-3
    epochs: int = 30
    max_steps: int = 0
    batch_size: int = 8
    seed: int = 0
    # data
    dataset: str | None = None
    out_dir: str | None = None
    n_trajectories: int = 10
    n_nodes: int = 5
    n_steps: int = 60
    dt: float = 0.05
    stiffness: float = 2.0
    mean_degree: float = 4.0
    windows_per_trajectory: int = 2
    n_structures: int = 10
    n_residues: int = 6
    input_noise: float = 0.1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.layout not in LAYOUTS:
            raise ConfigError(f"layout must be one of {LAYOUTS}, got {self.layout!r}")
        if self.statistics_frame not in ("last", "window"):
            raise ConfigError(f"statistics_frame must be 'last' or 'window', got {self.statistics_frame!r}")
        if self.task == "dynamics" and (self.T < 2 or self.F < 1):
            raise ConfigError(f"dynamics needs T >= 2 and F >= 1, got T={self.T}, F={self.F}")
        if self.task == "design" and self.F != 1:
            raise ConfigError(f"design needs F = 1, got F={self.F}")
        if self.variant == "llm_no_prompt_then_encoder" and self.use_prompt:
            raise ConfigError("variant llm_no_prompt_then_encoder requires use_prompt = false")
        if self.d_llm % self.llm_heads:
            raise ConfigError(f"d_llm={self.d_llm} must be divisible by llm_heads={self.llm_heads}")
        for name in ("hidden", "encoder_layers", "d_llm", "llm_heads", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("epochs", "max_steps", "llm_blocks"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not self.delta > 0:
            raise ConfigError(f"delta must be positive, got {self.delta}")

    @property
    def uses_llm(self) -> bool:
        return self.variant != "encoder_only"

    @property
    def uses_prompt(self) -> bool:
        return self.uses_llm and self.use_prompt

    @property
    def table_row(self) -> str | None:
        """Ablation-table label matching this variant and prompt flags, if any."""
        if self.variant == "encoder_only":
            return "EE"
        if self.variant == "llm_no_prompt_then_encoder" or (
            self.variant == "llm_then_encoder" and not self.use_prompt
        ):
            return "LLM (w/o Prompt) + EE"
        if self.variant == "llm_then_encoder":
            return "LLM + EE" if self.use_object and self.use_statistics else None
        if not self.use_prompt:
            return "w/o Prompt"
        return {
            (True, True): "EquiLLM",
            (False, True): "w/o Object Feature",
            (True, False): "w/o Statistics",
        }.get((self.use_object, self.use_statistics))

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return cls.from_dict(data)


def ablation_configs(base: RunConfig) -> list[tuple[str, str, RunConfig]]:
    """The seven ablation configurations derived from ``base`` (shared seed and data)."""
    out = []
    for slug, label, overrides in ABLATION_ROWS:
        flags = {"use_prompt": True, "use_object": True, "use_statistics": True}
        out.append((slug, label, base.with_(**{**flags, **overrides})))
    return out


def variant_config(base: RunConfig, slug: str) -> RunConfig:
    for s, _, cfg in ablation_configs(base):
        if s == slug:
            return cfg
    if slug in VARIANTS:
        return base.with_(variant=slug, use_prompt=base.use_prompt and slug != "llm_no_prompt_then_encoder")
    raise ConfigError(f"unknown variant {slug!r}")
