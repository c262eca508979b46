"""Run configuration: one JSON document drives every CLI stage."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .autoencoder import AEConfig
from .contrastive import ClipConfig
from .diffusion import LDMConfig
from .errors import ConfigError

ENCODERS = ("multihot", "contrastive")

EVAL_PROMPTS = (
    "latin triplet",
    "4-4 electronic",
    "funky 16th",
    "rock fill 8th",
    "blues shuffle",
    "pop ride",
    "funky blues",
    "latin rock",
)


@dataclass
class Paths:
    corpus_dir: str = "corpus"
    manifest: str = "data/corpus.json"
    checkpoints: str = "checkpoints"
    generated: str = "generated"
    reports: str = "reports"


@dataclass
class TextConfig:
    coverage: float = 0.95
    allow: list[str] | None = None
    deny: list[str] = field(default_factory=list)
    # optional externally computed base embeddings (JSON manifest + f32 blob)
    precomputed_manifest: str | None = None
    precomputed_blob: str | None = None


@dataclass
class SamplerConfig:
    steps: int | None = None  # None: all T steps


@dataclass
class EvalConfig:
    prompts: list[str] = field(default_factory=lambda: list(EVAL_PROMPTS))
    n_per_prompt: int = 10
    percentile: float = 0.01
    random_pairs: int = 360
    plots: bool = True


@dataclass
class RunConfig:
    seed: int
    paths: Paths = field(default_factory=Paths)
    encoder: str = "multihot"
    text: TextConfig = field(default_factory=TextConfig)
    ae: AEConfig = field(default_factory=AEConfig)
    clip: ClipConfig = field(default_factory=ClipConfig)
    ldm: LDMConfig = field(default_factory=LDMConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    evaluate: EvalConfig = field(default_factory=EvalConfig)
    synth_n: int = 64
    checkpoint_every: int = 100
    root: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        self.apply_seed(self.seed)

    def apply_seed(self, seed: int) -> None:
        """The run seed is authoritative for every stage."""
        self.seed = int(seed)
        self.ae.seed = self.clip.seed = self.ldm.seed = self.seed

    def path(self, name: str) -> Path:
        p = Path(getattr(self.paths, name))
        return p if p.is_absolute() else self.root / p

    def checkpoint(self, stage: str) -> Path:
        return self.path("checkpoints") / f"{stage}.ckpt"

    def validate(self) -> None:
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.encoder not in ENCODERS:
            raise ConfigError(f"encoder must be one of {ENCODERS}")
        if not 0.0 < self.text.coverage <= 1.0:
            raise ConfigError("text.coverage must lie in (0, 1]")
        if self.sampler.steps is not None and not 1 <= self.sampler.steps:
            raise ConfigError("sampler.steps must be >= 1")
        ev = self.evaluate
        if not ev.prompts or ev.n_per_prompt < 2 or not 0.0 < ev.percentile <= 1.0 or ev.random_pairs < 1:
            raise ConfigError("evaluate: prompts nonempty, n_per_prompt >= 2, percentile in (0, 1], random_pairs >= 1")
        if self.synth_n < 1 or self.checkpoint_every < 1:
            raise ConfigError("synth_n and checkpoint_every must be >= 1")
        if (self.text.precomputed_manifest is None) != (self.text.precomputed_blob is None):
            raise ConfigError("precomputed embeddings need both manifest and blob")
        self.ae.validate()
        self.clip.validate()
        self.ldm.validate()

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("root")
        return out


_SECTIONS = {
    "paths": Paths,
    "text": TextConfig,
    "ae": AEConfig,
    "clip": ClipConfig,
    "ldm": LDMConfig,
    "sampler": SamplerConfig,
    "evaluate": EvalConfig,
}


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(data: dict, root: Path = Path(".")) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if "seed" not in data:
        raise ConfigError("config needs a seed")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, key)
        elif key in ("seed", "encoder", "synth_n", "checkpoint_every"):
            kwargs[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    cfg = RunConfig(root=Path(root), **kwargs)
    return cfg


def load_config(path: Path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: {exc}") from None
    return config_from_dict(data, root=path.parent)


def with_overrides(cfg: RunConfig, seed: int | None = None, encoder: str | None = None) -> RunConfig:
    cfg = replace(cfg)
    if seed is not None:
        cfg.apply_seed(seed)
    if encoder is not None:
        cfg.encoder = encoder
    return cfg
