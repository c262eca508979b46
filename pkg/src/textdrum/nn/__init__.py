"""Small numpy network substrate: layers, Adam, seeded RNG, checkpoints."""

from __future__ import annotations

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (
    RunningStats,
    batch_norm,
    batch_norm_backward,
    cosine_similarity_backward,
    cosine_similarity_matrix,
    l2_normalize,
    l2_normalize_backward,
    linear,
    linear_backward,
    lstm_backward,
    lstm_forward,
    lstm_step,
    lstm_step_backward,
    mse,
    relu,
    relu_backward,
    sigmoid,
    sinusoidal_encode,
    softmax_cross_entropy,
)
from .optim import Adam, clip_grad_norm


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """PCG64 generator for (seed, stream); streams are independent."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed & (2**64 - 1), stream])))


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def restore_rng(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)


__all__ = [
    "Adam",
    "RunningStats",
    "batch_norm",
    "batch_norm_backward",
    "clip_grad_norm",
    "cosine_similarity_backward",
    "cosine_similarity_matrix",
    "l2_normalize",
    "l2_normalize_backward",
    "linear",
    "linear_backward",
    "load_checkpoint",
    "lstm_backward",
    "lstm_forward",
    "lstm_step",
    "lstm_step_backward",
    "make_rng",
    "mse",
    "relu",
    "relu_backward",
    "restore_rng",
    "rng_state",
    "save_checkpoint",
    "sigmoid",
    "sinusoidal_encode",
    "softmax_cross_entropy",
]
