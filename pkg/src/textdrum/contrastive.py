"""CLIP-style alignment of a pianoroll encoder and a text projection head.

Only the text side (base embedder + projection head) is kept for
conditioning; the MIDI encoder exists to shape the joint space.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .autoencoder import MRLSTMEncoder
from .errors import BatchTooSmallError, ConfigError, ShapeError
from .nn import (
    Adam,
    clip_grad_norm,
    cosine_similarity_backward,
    cosine_similarity_matrix,
    l2_normalize,
    linear,
    linear_backward,
    make_rng,
    softmax_cross_entropy,
)
from .nn.state import TrainState, minibatches
from .text_encoding import BASE_EMBED_DIM

log = logging.getLogger(__name__)

JOINT_DIM = 128
# Output projections start near zero around a random bias, so every untrained
# embedding points the same way and the first similarity matrix is flat.
_INIT_PROJ_SCALE = 1e-2


class ProjectionHead:
    def __init__(self, d_in: int = BASE_EMBED_DIM, d_out: int = JOINT_DIM, rng=None, dtype=np.float32):
        rng = rng if rng is not None else make_rng(0)
        bound = _INIT_PROJ_SCALE / np.sqrt(d_in)
        self.params = {
            "W": rng.uniform(-bound, bound, size=(d_in, d_out)).astype(dtype),
            "b": rng.standard_normal(d_out).astype(dtype),
        }

    def forward(self, base: np.ndarray):
        if base.ndim != 2 or base.shape[1] != self.params["W"].shape[0]:
            raise ShapeError(f"projection head expects (N, {self.params['W'].shape[0]}), got {base.shape}")
        return linear(base.astype(self.params["W"].dtype, copy=False), self.params["W"], self.params["b"])

    def project(self, base: np.ndarray) -> np.ndarray:
        """Linear map then L2 normalization; single vector or batch."""
        b2 = np.atleast_2d(base)
        if not np.all(np.isfinite(b2)):
            raise ValueError("base embedding has non-finite values")
        raw, _ = self.forward(b2)
        unit, _ = l2_normalize(raw)
        return unit[0] if np.ndim(base) == 1 else unit


def project_text(base: np.ndarray, head: ProjectionHead) -> np.ndarray:
    return head.project(base)


def clip_loss_and_grads(midi_raw: np.ndarray, text_raw: np.ndarray, tau: float):
    """Symmetric cross entropy over the cosine-similarity matrix / tau.

    Row i of either input pairs with row i of the other. Returns
    ``(loss, d_midi_raw, d_text_raw)``.
    """
    n = midi_raw.shape[0]
    if n < 2 or text_raw.shape[0] != n:
        raise BatchTooSmallError("contrastive loss needs N >= 2 aligned pairs")
    S, cache = cosine_similarity_matrix(midi_raw, text_raw)
    logits = S / tau
    targets = np.arange(n)
    l_midi, d_rows = softmax_cross_entropy(logits, targets)
    l_text, d_cols = softmax_cross_entropy(logits.T, targets)
    dS = 0.5 * (d_rows + d_cols.T) / tau
    d_midi, d_text = cosine_similarity_backward(dS, cache)
    return 0.5 * (l_midi + l_text), d_midi, d_text


def clip_loss(midi_emb: np.ndarray, text_emb: np.ndarray, tau: float = 0.07) -> float:
    return clip_loss_and_grads(midi_emb, text_emb, tau)[0]


@dataclass
class ClipConfig:
    epochs: int = 600
    batch_size: int = 8
    lr: float = 3e-3
    tau: float = 0.07
    enc_hidden: int = 64
    joint_dim: int = JOINT_DIM
    base_dim: int = BASE_EMBED_DIM
    clip_norm: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.tau <= 0 or self.batch_size < 2 or self.epochs < 0 or self.lr <= 0:
            raise ConfigError("clip: tau > 0, batch_size >= 2, epochs >= 0, lr > 0 required")


class ClipModel:
    def __init__(self, config: ClipConfig | None = None):
        self.config = config or ClipConfig()
        c = self.config
        self.midi = MRLSTMEncoder(
            c.enc_hidden,
            c.joint_dim,
            rng=make_rng(c.seed, 31),
            proj_scale=_INIT_PROJ_SCALE,
            proj_bias_scale=1.0,
        )
        self.head = ProjectionHead(c.base_dim, c.joint_dim, rng=make_rng(c.seed, 32))

    @property
    def params(self) -> dict[str, np.ndarray]:
        out = {f"midi.{k}": v for k, v in self.midi.params.items()}
        out.update({f"head.{k}": v for k, v in self.head.params.items()})
        return out

    def load_params(self, tensors: dict[str, np.ndarray]) -> None:
        for name, arr in self.params.items():
            arr[...] = tensors[name]

    def encode_midi(self, rolls: np.ndarray) -> np.ndarray:
        raw = self.midi.encode(rolls)
        unit, _ = l2_normalize(np.atleast_2d(raw))
        return unit[0] if np.ndim(rolls) == 2 else unit

    def encode_text(self, base: np.ndarray) -> np.ndarray:
        return self.head.project(base)

    def loss_and_grads(self, rolls, base):
        m_raw, m_cache = self.midi.forward(rolls)
        t_raw, t_cache = self.head.forward(base)
        loss, dm, dt = clip_loss_and_grads(m_raw, t_raw, self.config.tau)
        grads = {f"midi.{k}": v for k, v in self.midi.backward(dm, m_cache).items()}
        _, dW, db = linear_backward(dt, t_cache)
        grads["head.W"] = dW
        grads["head.b"] = db
        return loss, grads

    def meta(self) -> dict:
        return {"config": asdict(self.config)}


def encode_midi_contrastive(roll: np.ndarray, model: ClipModel) -> np.ndarray:
    return model.encode_midi(roll)


def similarity(model: ClipModel, rolls, base) -> np.ndarray:
    """S[i, j] = cos(midi_i, text_j)."""
    m = np.atleast_2d(model.encode_midi(rolls))
    t = np.atleast_2d(model.encode_text(base))
    return m @ t.T


def retrieval_accuracy(model: ClipModel, rolls, base) -> float:
    """Top-1 text -> MIDI retrieval: for text j, is MIDI j the most similar?"""
    S = similarity(model, rolls, base)
    return float(np.mean(np.argmax(S, axis=0) == np.arange(S.shape[1])))


def new_train_state(model: ClipModel) -> TrainState:
    c = model.config
    return TrainState(optimizer=Adam(model.params, lr=c.lr), rngs={"order": make_rng(c.seed, 33)})


def train_clip(
    rolls: np.ndarray,
    base: np.ndarray,
    config: ClipConfig | None = None,
    *,
    model: ClipModel | None = None,
    state: TrainState | None = None,
    on_epoch: Callable[[ClipModel, TrainState], None] | None = None,
) -> tuple[ClipModel, TrainState]:
    rolls = np.asarray(rolls, dtype=np.float32)
    base = np.asarray(base, dtype=np.float32)
    if len(rolls) != len(base):
        raise ShapeError("rolls and text embeddings must be index-aligned")
    if len(rolls) < 2:
        raise BatchTooSmallError("contrastive training needs at least 2 pairs")
    config = config or (model.config if model else ClipConfig())
    config.validate()
    model = model or ClipModel(config)
    state = state or new_train_state(model)
    params = model.params
    while state.epoch < config.epochs:
        total = 0.0
        order = state.rngs["order"].permutation(len(rolls))
        for idx in minibatches(order, config.batch_size):
            loss, grads = model.loss_and_grads(rolls[idx], base[idx])
            clip_grad_norm(grads, config.clip_norm)
            state.optimizer.step(params, grads)
            total += loss * len(idx)
        state.epoch += 1
        state.history.append(total / len(rolls))
        if on_epoch is not None:
            on_epoch(model, state)
    return model, state


def initial_loss(model: ClipModel, rolls, base) -> float:
    m_raw, _ = model.midi.forward(np.asarray(rolls, dtype=np.float32))
    t_raw, _ = model.head.forward(np.asarray(base, dtype=np.float32))
    return clip_loss(m_raw, t_raw, model.config.tau)
