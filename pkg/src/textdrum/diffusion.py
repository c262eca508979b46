"""Text-conditioned DDPM over autoencoder latents."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autoencoder import LATENT_DIM
from .errors import ConfigError, EmptyCorpusError, ShapeError, UntrainedEncoderError
from .nn import (
    Adam,
    RunningStats,
    batch_norm,
    batch_norm_backward,
    clip_grad_norm,
    linear,
    linear_backward,
    make_rng,
    mse,
    relu,
    relu_backward,
    sinusoidal_encode,
)
from .nn.state import TrainState, minibatches

log = logging.getLogger(__name__)

TARGETS = ("epsilon", "delta")


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta_start: float
    beta_end: float
    betas: np.ndarray = field(repr=False)
    alphas: np.ndarray = field(repr=False)
    alpha_bars: np.ndarray = field(repr=False)

    def alpha_bar(self, t):
        """alpha-bar at 1-based timestep t, with alpha_bar(0) = 1."""
        t = np.asarray(t)
        padded = np.concatenate([[1.0], self.alpha_bars])
        return padded[t]


def build_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule, tables indexed by t - 1 (float64)."""
    if T < 1 or not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigError(f"invalid schedule T={T} beta=[{beta_start}, {beta_end}]")
    if T == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        betas = beta_start + np.arange(T, dtype=np.float64) * (beta_end - beta_start) / (T - 1)
    alphas = 1.0 - betas
    return NoiseSchedule(T, beta_start, beta_end, betas, alphas, np.cumprod(alphas))


def _check_t(t, sched: NoiseSchedule) -> np.ndarray:
    t = np.asarray(t)
    if t.size == 0 or np.any(t < 1) or np.any(t > sched.T):
        raise ConfigError(f"timestep outside 1..{sched.T}")
    return t


def forward_noise(z0: np.ndarray, t, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Closed-form q(z_t | z_0): sqrt(ab) z0 + sqrt(1 - ab) eps."""
    t = _check_t(t, sched)
    ab = sched.alpha_bars[t - 1]
    if ab.ndim:
        ab = ab[:, None]
    return (np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps).astype(z0.dtype)


class Denoiser:
    """Three linear layers; batch norm + ReLU after the first two.

    Input is concat(z_t, sinusoidal(t), w). The output layer starts at zero so
    an untrained model predicts zero noise.
    """

    def __init__(self, d_text: int, latent_dim=LATENT_DIM, t_dim=128, hidden=512, rng=None, dtype=np.float32):
        rng = rng if rng is not None else make_rng(0)
        self.d_text = d_text
        self.latent_dim = latent_dim
        self.t_dim = t_dim
        d_in = latent_dim + t_dim + d_text

        def uniform(fan_in, shape):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape).astype(dtype)

        self.params = {
            "l1.W": uniform(d_in, (d_in, hidden)),
            "l1.b": np.zeros(hidden, dtype=dtype),
            "bn1.gamma": np.ones(hidden, dtype=dtype),
            "bn1.beta": np.zeros(hidden, dtype=dtype),
            "l2.W": uniform(hidden, (hidden, hidden)),
            "l2.b": np.zeros(hidden, dtype=dtype),
            "bn2.gamma": np.ones(hidden, dtype=dtype),
            "bn2.beta": np.zeros(hidden, dtype=dtype),
            "l3.W": np.zeros((hidden, latent_dim), dtype=dtype),
            "l3.b": np.zeros(latent_dim, dtype=dtype),
        }
        self.bn1 = RunningStats.fresh(hidden, dtype)
        self.bn2 = RunningStats.fresh(hidden, dtype)

    def buffers(self) -> dict[str, np.ndarray]:
        return {
            "bn1.running_mean": self.bn1.mean,
            "bn1.running_var": self.bn1.var,
            "bn2.running_mean": self.bn2.mean,
            "bn2.running_var": self.bn2.var,
        }

    def forward(self, z_t, t, w, train: bool):
        if w.ndim != 2 or w.shape[1] != self.d_text:
            raise ShapeError(f"text embedding width {w.shape[-1]} != configured {self.d_text}")
        if z_t.ndim != 2 or z_t.shape[1] != self.latent_dim:
            raise ShapeError(f"latent shape {z_t.shape}")
        p = self.params
        dtype = p["l1.W"].dtype
        x = np.concatenate([z_t, sinusoidal_encode(t, self.t_dim), w], axis=1).astype(dtype, copy=False)
        a1, c1 = linear(x, p["l1.W"], p["l1.b"])
        n1, cb1 = batch_norm(a1, p["bn1.gamma"], p["bn1.beta"], self.bn1, train)
        r1, m1 = relu(n1)
        a2, c2 = linear(r1, p["l2.W"], p["l2.b"])
        n2, cb2 = batch_norm(a2, p["bn2.gamma"], p["bn2.beta"], self.bn2, train)
        r2, m2 = relu(n2)
        out, c3 = linear(r2, p["l3.W"], p["l3.b"])
        return out, (c1, cb1, m1, c2, cb2, m2, c3)

    def backward(self, dout, cache) -> dict[str, np.ndarray]:
        c1, cb1, m1, c2, cb2, m2, c3 = cache
        g = {}
        dr2, g["l3.W"], g["l3.b"] = linear_backward(dout, c3)
        dn2 = relu_backward(dr2, m2)
        da2, g["bn2.gamma"], g["bn2.beta"] = batch_norm_backward(dn2, cb2)
        dr1, g["l2.W"], g["l2.b"] = linear_backward(da2, c2)
        dn1 = relu_backward(dr1, m1)
        da1, g["bn1.gamma"], g["bn1.beta"] = batch_norm_backward(dn1, cb1)
        _, g["l1.W"], g["l1.b"] = linear_backward(da1, c1)
        return g

    def predict(self, z_t, t, w) -> np.ndarray:
        """Eval-mode prediction; accepts single vectors or batches."""
        z2 = np.atleast_2d(z_t)
        w2 = np.atleast_2d(w)
        if w2.shape[0] == 1 and z2.shape[0] > 1:
            w2 = np.repeat(w2, z2.shape[0], axis=0)
        t_arr = np.broadcast_to(np.asarray(t), (z2.shape[0],))
        out, _ = self.forward(z2, t_arr, w2, train=False)
        return out[0] if np.ndim(z_t) == 1 else out


def denoise_predict(z_t, t, w, denoiser: Denoiser) -> np.ndarray:
    return denoiser.predict(z_t, t, w)


@dataclass
class LDMConfig:
    epochs: int = 10000
    batch_size: int = 32
    lr: float = 1e-3
    hidden: int = 512
    t_dim: int = 128
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    text_dropout: float = 0.05
    target: str = "epsilon"
    clip_norm: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.target not in TARGETS:
            raise ConfigError(f"ldm target must be one of {TARGETS}")
        if self.epochs < 0 or self.batch_size < 2 or self.lr <= 0 or not 0 <= self.text_dropout <= 1:
            raise ConfigError("ldm: epochs >= 0, batch_size >= 2, lr > 0, dropout in [0, 1] required")
        build_schedule(self.T, self.beta_start, self.beta_end)

    def schedule(self) -> NoiseSchedule:
        return build_schedule(self.T, self.beta_start, self.beta_end)


class LatentDiffusion:
    """Denoiser plus schedule and the latent standardization it was trained with.

    Diffusion runs on (z - mean) * scale; sampling maps back to AE latents.
    """

    def __init__(self, d_text: int, config: LDMConfig | None = None, latent_mean=None, latent_scale: float = 1.0):
        self.config = config or LDMConfig()
        self.schedule = self.config.schedule()
        self.denoiser = Denoiser(d_text, t_dim=self.config.t_dim, hidden=self.config.hidden, rng=make_rng(self.config.seed, 11))
        self.latent_mean = np.zeros(LATENT_DIM, np.float32) if latent_mean is None else np.asarray(latent_mean, np.float32)
        self.latent_scale = float(latent_scale)
        self.trained = False

    @property
    def d_text(self) -> int:
        return self.denoiser.d_text

    @property
    def params(self) -> dict[str, np.ndarray]:
        return self.denoiser.params

    def fit_normalizer(self, latents: np.ndarray) -> None:
        self.latent_mean = latents.mean(axis=0).astype(np.float32)
        std = float(np.std(latents - self.latent_mean))
        self.latent_scale = 1.0 / std if std > 0 else 1.0

    def to_diffusion_space(self, z):
        return ((z - self.latent_mean) * self.latent_scale).astype(np.float32)

    def to_latent_space(self, x):
        return (x / self.latent_scale + self.latent_mean).astype(np.float32)

    def tensors(self) -> dict[str, np.ndarray]:
        out = {f"den.{k}": v for k, v in self.denoiser.params.items()}
        out.update({f"den.{k}": v for k, v in self.denoiser.buffers().items()})
        out["latent.mean"] = self.latent_mean
        out["latent.scale"] = np.array(self.latent_scale, dtype=np.float32)
        return out

    def meta(self) -> dict:
        return {"config": asdict(self.config), "d_text": self.d_text, "trained": self.trained}

    @classmethod
    def from_tensors(cls, tensors: dict, meta: dict) -> LatentDiffusion:
        model = cls(int(meta["d_text"]), LDMConfig(**meta["config"]))
        for k, arr in model.denoiser.params.items():
            arr[...] = tensors[f"den.{k}"]
        for k, arr in model.denoiser.buffers().items():
            arr[...] = tensors[f"den.{k}"]
        model.latent_mean = tensors["latent.mean"].astype(np.float32)
        model.latent_scale = float(tensors["latent.scale"])
        model.trained = bool(meta["trained"])
        return model


def _training_target(x0, t, eps, sched: NoiseSchedule, target: str, rng):
    """Returns (z_t, regression target) for one batch."""
    if target == "epsilon":
        return forward_noise(x0, t, eps, sched), eps
    # per-step delta: z_t - z_{t-1}, sampling z_{t-1} from q then one more step
    ab_prev = sched.alpha_bar(t - 1)[:, None]
    beta = sched.betas[t - 1][:, None]
    z_prev = np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps
    step = rng.standard_normal(x0.shape)
    z_t = np.sqrt(1.0 - beta) * z_prev + np.sqrt(beta) * step
    return z_t.astype(np.float32), (z_t - z_prev).astype(np.float32)


def new_train_state(model: LatentDiffusion) -> TrainState:
    c = model.config
    return TrainState(
        optimizer=Adam(model.params, lr=c.lr),
        rngs={"order": make_rng(c.seed, 12), "noise": make_rng(c.seed, 13)},
    )


def train_ldm(
    latents: np.ndarray,
    texts: np.ndarray,
    config: LDMConfig | None = None,
    *,
    model: LatentDiffusion | None = None,
    state: TrainState | None = None,
    on_epoch: Callable[[LatentDiffusion, TrainState], None] | None = None,
    step_losses: list | None = None,
) -> tuple[LatentDiffusion, TrainState]:
    """Noise-prediction training with per-sample empty-text dropout.

    Each step draws t ~ U{1..T} and eps ~ N(0, I) per sample and replaces the
    text vector by zeros with probability ``text_dropout``. When given,
    ``step_losses`` receives every step's loss.
    """
    latents = np.asarray(latents, dtype=np.float32)
    texts = np.asarray(texts, dtype=np.float32)
    if latents.ndim != 2 or texts.ndim != 2 or len(latents) != len(texts):
        raise ShapeError(f"latents {latents.shape} and texts {texts.shape} must align")
    if len(latents) < 2:
        raise EmptyCorpusError("diffusion training needs at least two latents")
    config = config or (model.config if model else LDMConfig())
    config.validate()
    if model is None:
        model = LatentDiffusion(texts.shape[1], config)
        model.fit_normalizer(latents)
    if texts.shape[1] != model.d_text:
        raise ShapeError(f"text width {texts.shape[1]} != model {model.d_text}")
    state = state or new_train_state(model)
    sched = model.schedule
    x_all = model.to_diffusion_space(latents)
    params = model.params
    model.trained = True
    rng = state.rngs["noise"]
    while state.epoch < config.epochs:
        total = 0.0
        order = state.rngs["order"].permutation(len(x_all))
        for idx in minibatches(order, config.batch_size):
            B = len(idx)
            x0 = x_all[idx]
            w = texts[idx].copy()
            w[rng.random(B) < config.text_dropout] = 0.0
            t = rng.integers(1, sched.T + 1, size=B)
            eps = rng.standard_normal((B, x0.shape[1])).astype(np.float32)
            z_t, target = _training_target(x0, t, eps, sched, config.target, rng)
            pred, cache = model.denoiser.forward(z_t, t, w, train=True)
            loss, dpred = mse(pred, target)
            grads = model.denoiser.backward(dpred, cache)
            clip_grad_norm(grads, config.clip_norm)
            state.optimizer.step(params, grads)
            total += loss * B
            if step_losses is not None:
                step_losses.append(loss)
        state.epoch += 1
        state.history.append(total / len(x_all))
        if on_epoch is not None:
            on_epoch(model, state)
    return model, state


def timestep_sequence(T: int, steps: int | None) -> list[int]:
    """Descending timesteps to visit; evenly respaced when steps < T."""
    if steps is None or steps >= T:
        return list(range(T, 0, -1))
    if steps < 1:
        raise ConfigError("sampling steps must be >= 1")
    ts = np.unique(np.round(np.linspace(1, T, steps)).astype(int))
    return [int(t) for t in ts[::-1]]


def sample_batch(
    model: LatentDiffusion,
    w: np.ndarray,
    seeds: Sequence[int],
    steps: int | None = None,
) -> np.ndarray:
    """Ancestral sampling, one independent RNG stream per seed.

    ``w`` is one conditioning vector (shared) or one per seed. Returns AE
    latents of shape (len(seeds), 128).
    """
    if not model.trained:
        raise UntrainedEncoderError("diffusion model has not been trained")
    sched = model.schedule
    gens = [make_rng(int(s), 21) for s in seeds]
    n = len(gens)
    w = np.asarray(w, dtype=np.float32)
    w = np.repeat(w[None], n, axis=0) if w.ndim == 1 else w
    z = np.stack([g.standard_normal(LATENT_DIM) for g in gens]).astype(np.float32)
    seq = timestep_sequence(sched.T, steps)
    for k, t in enumerate(seq):
        prev = seq[k + 1] if k + 1 < len(seq) else 0
        ab_t = float(sched.alpha_bar(t))
        ab_prev = float(sched.alpha_bar(prev))
        alpha = ab_t / ab_prev
        beta = 1.0 - alpha
        pred = model.denoiser.predict(z, t, w)
        if model.config.target == "epsilon":
            mean = (z - (beta / np.sqrt(1.0 - ab_t)) * pred) / np.sqrt(alpha)
        else:
            mean = z - pred
        if prev > 0:
            xi = np.stack([g.standard_normal(LATENT_DIM) for g in gens])
            z = (mean + np.sqrt(beta) * xi).astype(np.float32)
        else:
            z = mean.astype(np.float32)
    return model.to_latent_space(z)


def sample(model: LatentDiffusion, w: np.ndarray, seed: int, steps: int | None = None) -> np.ndarray:
    return sample_batch(model, w, [seed], steps)[0]
