"""Stage implementations behind the CLI: corpus, three trainers, generation, evaluation.

Each stage validates its inputs before writing anything. Training stages
write ``<stage>.ckpt`` (parameters, optimizer moments, RNG states) every
``checkpoint_every`` epochs and resume from it when rerun.
"""

from __future__ import annotations

import json
import logging
import re
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autoencoder import Autoencoder, AEConfig
from .autoencoder import new_train_state as ae_state
from .autoencoder import train_autoencoder
from .config import RunConfig
from .contrastive import ClipConfig, ClipModel, ProjectionHead, train_clip
from .contrastive import new_train_state as clip_state
from .corpus import Corpus, PreprocessSummary, load_corpus, preprocess_directory, save_corpus
from .diffusion import LatentDiffusion, sample_batch, train_ldm
from .diffusion import new_train_state as ldm_state
from .errors import CheckpointError, ConfigError, DependencyError
from .evaluation import GeneratedSet, ReportInputs, build_report, write_report
from .midi_codec import binarize, pianoroll_to_midi
from .nn.checkpoint import atomic_write, load_checkpoint, save_checkpoint
from .nn.state import TrainState
from .synth import write_synth_corpus
from .text_encoding import (
    ContrastiveEncoder,
    HashingEmbedder,
    KeywordVocab,
    MultihotEncoder,
    PrecomputedEmbedder,
    PromptText,
    build_vocab,
    clean_path,
    empty_embedding,
    encode_multihot,
    extract_bpm,
)

log = logging.getLogger(__name__)

DEFAULT_BPM = 120
STAGES = {"ae": "autoencoder", "clip": "contrastive", "ldm": "diffusion"}


# --------------------------------------------------------------------------
# corpus


def synth_stage(cfg: RunConfig, n: int | None = None, out: Path | None = None) -> list[Path]:
    n = cfg.synth_n if n is None else n
    if n < 1:
        raise ConfigError("n must be >= 1")
    return write_synth_corpus(n, cfg.seed, out or cfg.path("corpus_dir"))


def preprocess_stage(cfg: RunConfig, in_dir: Path | None = None, manifest: Path | None = None) -> tuple[Corpus, PreprocessSummary]:
    in_dir = Path(in_dir or cfg.path("corpus_dir"))
    if not in_dir.is_dir():
        raise ConfigError(f"corpus directory {in_dir} does not exist")
    corpus, summary = preprocess_directory(in_dir)
    save_corpus(Path(manifest or cfg.path("manifest")), corpus)
    return corpus, summary


def _corpus(cfg: RunConfig) -> Corpus:
    path = cfg.path("manifest")
    if not path.exists():
        raise DependencyError("preprocess", f"corpus manifest {path} missing")
    return load_corpus(path)


# --------------------------------------------------------------------------
# checkpoint plumbing


def _save_stage(cfg: RunConfig, stage: str, params: dict, state: TrainState, meta: dict) -> None:
    tensors = {f"param.{k}": v for k, v in params.items()}
    tensors.update({f"opt.{k}": v for k, v in state.tensors().items()})
    save_checkpoint(cfg.checkpoint(stage), STAGES[stage], tensors, {**meta, "train": state.meta()})


def _split(tensors: dict, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}


def _load_stage(cfg: RunConfig, stage: str, required_by: str | None = None):
    path = cfg.checkpoint(stage)
    if not path.exists():
        if required_by is None:
            return None
        raise DependencyError(STAGES[stage], f"{required_by} needs {path}")
    _, tensors, meta = load_checkpoint(path, expect_kind=STAGES[stage])
    return tensors, meta


def _write_log(cfg: RunConfig, stage: str, history: list[float], wall: list[float]) -> Path:
    path = cfg.path("checkpoints") / f"{stage}_log.json"
    entries = [{"epoch": i + 1, "loss": loss, "wall_time": w} for i, (loss, w) in enumerate(zip(history, wall))]
    atomic_write(path, (json.dumps({"stage": STAGES[stage], "epochs": entries}, indent=1) + "\n").encode())
    return path


def _previous_wall(cfg: RunConfig, stage: str) -> list[float]:
    path = cfg.path("checkpoints") / f"{stage}_log.json"
    if not path.exists():
        return []
    return [e["wall_time"] for e in json.loads(path.read_text())["epochs"]]


class _Progress:
    """Per-epoch callback: wall-clock log plus periodic checkpoints."""

    def __init__(self, cfg: RunConfig, stage: str, total: int, save):
        self.cfg, self.stage, self.total, self.save = cfg, stage, total, save
        self.t0 = time.perf_counter()
        self.wall = _previous_wall(cfg, stage)

    def __call__(self, model, state: TrainState) -> None:
        self.wall = self.wall[: state.epoch - 1] + [time.perf_counter() - self.t0]
        if state.epoch % self.cfg.checkpoint_every == 0 or state.epoch == self.total:
            self.save(model, state)
            _write_log(self.cfg, self.stage, state.history, self.wall)
            log.info("%s epoch %d/%d loss %.6f", self.stage, state.epoch, self.total, state.history[-1])


# --------------------------------------------------------------------------
# autoencoder


def load_autoencoder(cfg: RunConfig, required_by: str = "this command") -> Autoencoder:
    tensors, meta = _load_stage(cfg, "ae", required_by)
    model = Autoencoder(AEConfig(**meta["config"]))
    model.load_params(_split(tensors, "param."))
    return model


def train_ae_stage(cfg: RunConfig) -> tuple[Autoencoder, TrainState]:
    corpus = _corpus(cfg)
    model = Autoencoder(cfg.ae)
    state = None
    found = _load_stage(cfg, "ae")
    if found is not None:
        tensors, meta = found
        if meta["config"] != asdict(cfg.ae) | {"epochs": meta["config"]["epochs"]}:
            raise CheckpointError("existing autoencoder checkpoint was trained with a different config")
        model.load_params(_split(tensors, "param."))
        state = TrainState.restore(model.params, _split(tensors, "opt."), meta["train"])
    state = state or ae_state(model)

    def save(m, s):
        _save_stage(cfg, "ae", m.params, s, {"config": asdict(cfg.ae)})

    progress = _Progress(cfg, "ae", cfg.ae.epochs, save)
    model, state = train_autoencoder(corpus.rolls, cfg.ae, model=model, state=state, on_epoch=progress)
    if found is None and cfg.ae.epochs == 0:
        save(model, state)
    return model, state


# --------------------------------------------------------------------------
# text encoders


def base_embedder(cfg: RunConfig):
    t = cfg.text
    if t.precomputed_manifest:
        return PrecomputedEmbedder.load(cfg.root / t.precomputed_manifest, cfg.root / t.precomputed_blob)
    return HashingEmbedder()


def corpus_vocab(cfg: RunConfig, corpus: Corpus) -> KeywordVocab:
    prompts = [PromptText(tuple(text.split())) for text in corpus.texts]
    return build_vocab(prompts, coverage=cfg.text.coverage, allow=cfg.text.allow, deny=cfg.text.deny)


def train_clip_stage(cfg: RunConfig) -> tuple[ClipModel, TrainState]:
    corpus = _corpus(cfg)
    embed = base_embedder(cfg)
    base = np.stack([embed(PromptText(tuple(t.split()))) for t in corpus.texts])
    model = ClipModel(cfg.clip)
    state = None
    found = _load_stage(cfg, "clip")
    if found is not None:
        tensors, meta = found
        model.load_params(_split(tensors, "param."))
        state = TrainState.restore(model.params, _split(tensors, "opt."), meta["train"])
    state = state or clip_state(model)

    def save(m, s):
        _save_stage(cfg, "clip", m.params, s, m.meta())

    progress = _Progress(cfg, "clip", cfg.clip.epochs, save)
    model, state = train_clip(corpus.rolls, base, cfg.clip, model=model, state=state, on_epoch=progress)
    if found is None and cfg.clip.epochs == 0:
        save(model, state)
    return model, state


def load_text_head(cfg: RunConfig, required_by: str) -> ProjectionHead:
    tensors, meta = _load_stage(cfg, "clip", required_by)
    model = ClipModel(ClipConfig(**meta["config"]))
    model.load_params(_split(tensors, "param."))
    return model.head


def text_encoder(cfg: RunConfig, encoder_meta: dict, required_by: str):
    if encoder_meta["kind"] == "multihot":
        return MultihotEncoder(KeywordVocab.from_json(encoder_meta["vocab"]))
    return ContrastiveEncoder(base_embedder(cfg), load_text_head(cfg, required_by))


# --------------------------------------------------------------------------
# diffusion


def train_ldm_stage(cfg: RunConfig) -> tuple[LatentDiffusion, TrainState]:
    ae = load_autoencoder(cfg, "train-ldm")
    corpus = _corpus(cfg)
    if cfg.encoder == "multihot":
        encoder_meta = {"kind": "multihot", "vocab": corpus_vocab(cfg, corpus).to_json()}
    else:
        encoder_meta = {"kind": "contrastive"}
    encoder = text_encoder(cfg, encoder_meta, "train-ldm")
    latents = ae.encode(corpus.rolls)
    texts = np.stack([encoder.embed(PromptText(tuple(t.split()))) for t in corpus.texts])

    found = _load_stage(cfg, "ldm")
    model, state = None, None
    if found is not None:
        tensors, meta = found
        if meta["encoder"] != encoder_meta:
            raise CheckpointError("existing diffusion checkpoint uses a different text encoder")
        model = LatentDiffusion.from_tensors(_split(tensors, "param."), meta)
        state = TrainState.restore(model.params, _split(tensors, "opt."), meta["train"])
    else:
        model = LatentDiffusion(encoder.dim, cfg.ldm)
        model.fit_normalizer(latents)
    state = state or ldm_state(model)

    def save(m, s):
        _save_stage(cfg, "ldm", m.tensors(), s, {**m.meta(), "encoder": encoder_meta})

    progress = _Progress(cfg, "ldm", cfg.ldm.epochs, save)
    model, state = train_ldm(latents, texts, cfg.ldm, model=model, state=state, on_epoch=progress)
    if found is None and cfg.ldm.epochs == 0:
        save(model, state)
    return model, state


@dataclass
class Generator:
    """Loaded checkpoints for the text -> latent -> pianoroll flow."""

    ae: Autoencoder
    ldm: LatentDiffusion
    encoder: object
    steps: int | None

    @classmethod
    def load(cls, cfg: RunConfig, required_by: str = "generate") -> Generator:
        ae = load_autoencoder(cfg, required_by)
        tensors, meta = _load_stage(cfg, "ldm", required_by)
        ldm = LatentDiffusion.from_tensors(_split(tensors, "param."), meta)
        encoder = text_encoder(cfg, meta["encoder"], required_by)
        return cls(ae, ldm, encoder, cfg.sampler.steps)

    def condition(self, prompt: str) -> np.ndarray:
        text = clean_path(prompt, stoplist=())
        if not text.tokens:
            return empty_embedding(self.encoder)
        return self.encoder.embed(text)

    def generate(self, prompt: str, seeds: list[int]) -> tuple[np.ndarray, np.ndarray]:
        """Returns (latents (n, 128), velocity pianorolls (n, 128, 9)).

        Cells under the 0.5 onset threshold are zeroed.
        """
        z = sample_batch(self.ldm, self.condition(prompt), seeds, self.steps)
        rolls = self.ae.decode(z)
        rolls = np.where(binarize(rolls) == 1, rolls, 0.0).astype(np.float32)
        return z, rolls


def prompt_bpm(prompt: str) -> int:
    bpm = extract_bpm(clean_path(prompt, stoplist=()))
    return DEFAULT_BPM if bpm is None else bpm


def write_generation(out_dir: Path, prompt: str, seeds: list[int], latents, rolls) -> list[Path]:
    out_dir = Path(out_dir)
    bpm = prompt_bpm(prompt)
    files = []
    for seed, roll in zip(seeds, rolls):
        path = out_dir / f"sample_{seed}.mid"
        atomic_write(path, pianoroll_to_midi(roll, bpm=bpm))
        files.append(path)
    atomic_write(out_dir / "latents.bin", np.ascontiguousarray(latents, dtype="<f4").tobytes())
    atomic_write(out_dir / "pianorolls.bin", np.ascontiguousarray(rolls, dtype="<f4").tobytes())
    info = {
        "prompt": prompt,
        "bpm": bpm,
        "seeds": list(seeds),
        "files": [p.name for p in files],
        "latents": {"file": "latents.bin", "dtype": "<f4", "shape": [len(seeds), latents.shape[1]]},
        "pianorolls": {"file": "pianorolls.bin", "dtype": "<f4", "shape": [len(seeds), 128, 9]},
    }
    atomic_write(out_dir / "generation.json", (json.dumps(info, indent=2) + "\n").encode())
    return files


def load_generation(out_dir: Path) -> GeneratedSet:
    out_dir = Path(out_dir)
    try:
        info = json.loads((out_dir / "generation.json").read_text())
    except FileNotFoundError:
        raise ConfigError(f"no generation dump in {out_dir}") from None
    lat = np.fromfile(out_dir / info["latents"]["file"], dtype="<f4").reshape(info["latents"]["shape"])
    rolls = np.fromfile(out_dir / info["pianorolls"]["file"], dtype="<f4").reshape(info["pianorolls"]["shape"])
    return GeneratedSet(info["prompt"], rolls, lat)


def generate_stage(cfg: RunConfig, prompt: str, n: int, out_dir: Path | None = None) -> list[Path]:
    if n < 1:
        raise ConfigError("n must be >= 1")
    gen = Generator.load(cfg)
    seeds = [cfg.seed + k for k in range(n)]
    z, rolls = gen.generate(prompt, seeds)
    return write_generation(Path(out_dir or cfg.path("generated")), prompt, seeds, z, rolls)


def prompt_slug(prompt: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "_", prompt.lower()).strip("_")
    return slug or "empty"


# --------------------------------------------------------------------------
# evaluation


def dataset_keys(cfg: RunConfig, corpus: Corpus, encoder) -> list[bytes]:
    """Same-text key: the keyword part of the multihot vector."""
    vocab = encoder.vocab if isinstance(encoder, MultihotEncoder) else corpus_vocab(cfg, corpus)
    return [encode_multihot(PromptText(tuple(t.split())), vocab)[:-1].tobytes() for t in corpus.texts]


def evaluate_stage(cfg: RunConfig, out_dir: Path | None = None) -> list[Path]:
    ev = cfg.evaluate
    corpus = _corpus(cfg)
    if len(corpus) < 2:
        raise ConfigError("evaluation needs at least two dataset items")
    gen = Generator.load(cfg, "evaluate")
    out_dir = Path(out_dir or cfg.path("reports"))
    sets = []
    for k, prompt in enumerate(ev.prompts):
        seeds = [cfg.seed + k * ev.n_per_prompt + i for i in range(ev.n_per_prompt)]
        z, rolls = gen.generate(prompt, seeds)
        write_generation(out_dir / "generated" / f"{k:02d}_{prompt_slug(prompt)}", prompt, seeds, z, rolls)
        sets.append(GeneratedSet(prompt, rolls, z))
    inputs = ReportInputs(
        dataset_rolls=corpus.rolls,
        dataset_latents=gen.ae.encode(corpus.rolls),
        dataset_keys=dataset_keys(cfg, corpus, gen.encoder),
        generated=sets,
    )
    report = build_report(inputs, percentile=ev.percentile, random_pairs=ev.random_pairs, seed=cfg.seed)
    return write_report(report, out_dir, plots=ev.plots)
