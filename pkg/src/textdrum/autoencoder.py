"""Pianoroll autoencoder.

The encoder reads the roll at three time resolutions (every slice, every
second slice, every fourth slice) with independent LSTM branches and projects
the concatenated final hidden states to a 128-d latent. The decoder maps the
latent to an initial LSTM state and unrolls 128 steps, feeding each step's
sigmoid output back in as the next input. By default the latent also offsets
the gate pre-activations at every step, and each input carries a one-hot code
of the slice position within the bar and of the bar index.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, EmptyCorpusError
from .midi_codec import N_CHANNELS, N_SLICES
from .nn import Adam, clip_grad_norm, linear, linear_backward, lstm_backward, lstm_forward, make_rng, mse
from .nn.layers import init_lstm, lstm_step, lstm_step_backward, sigmoid
from .nn.state import TrainState, minibatches

log = logging.getLogger(__name__)

LATENT_DIM = 128
STRIDES = (1, 2, 4)
NOISE_RANGES = {"none": (0.0, 0.0), "low": (0.001, 0.01), "high": (0.01, 0.1)}


@dataclass(frozen=True)
class NoiseLevel:
    kind: str = "none"

    def __post_init__(self):
        if self.kind not in NOISE_RANGES:
            raise ConfigError(f"unknown noise level {self.kind!r}")

    @property
    def range(self) -> tuple[float, float]:
        return NOISE_RANGES[self.kind]


def inject_latent_noise(z: np.ndarray, noise: NoiseLevel, rng: np.random.Generator) -> np.ndarray:
    """z + a * xi with one amplitude a ~ U[lo, hi] per latent vector."""
    if noise.kind == "none":
        return z
    lo, hi = noise.range
    z2 = np.atleast_2d(z)
    amp = rng.uniform(lo, hi, size=(z2.shape[0], 1))
    xi = rng.standard_normal(z2.shape)
    out = (z2 + amp * xi).astype(z.dtype)
    return out.reshape(z.shape)


def _as_batch(x: np.ndarray, trailing: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    single = x.ndim == trailing
    return (x[None] if single else x), single


class MRLSTMEncoder:
    """Parallel LSTM branches over strided views of the roll."""

    def __init__(
        self,
        hidden: int = 128,
        latent_dim: int = LATENT_DIM,
        strides=STRIDES,
        rng: np.random.Generator | None = None,
        n_in: int = N_CHANNELS,
        dtype=np.float32,
        proj_scale: float = 1.0,
        proj_bias_scale: float = 0.0,
    ):
        rng = rng if rng is not None else make_rng(0)
        self.hidden = hidden
        self.latent_dim = latent_dim
        self.strides = tuple(strides)
        self.params: dict[str, np.ndarray] = {}
        for s in self.strides:
            W, b = init_lstm(rng, n_in, hidden, dtype)
            self.params[f"s{s}.W"] = W
            self.params[f"s{s}.b"] = b
        fan_in = hidden * len(self.strides)
        bound = proj_scale / np.sqrt(fan_in)
        self.params["proj.W"] = rng.uniform(-bound, bound, size=(fan_in, latent_dim)).astype(dtype)
        self.params["proj.b"] = (proj_bias_scale * rng.standard_normal(latent_dim)).astype(dtype)

    def forward(self, rolls: np.ndarray):
        B = rolls.shape[0]
        dtype = self.params["proj.W"].dtype
        zeros = np.zeros((B, self.hidden), dtype=dtype)
        finals, caches = [], []
        for s in self.strides:
            hs, cache = lstm_forward(rolls[:, ::s], zeros, zeros, self.params[f"s{s}.W"], self.params[f"s{s}.b"])
            finals.append(hs[:, -1])
            caches.append(cache)
        z, proj_cache = linear(np.concatenate(finals, axis=1), self.params["proj.W"], self.params["proj.b"])
        return z, (caches, proj_cache)

    def backward(self, dz: np.ndarray, cache) -> dict[str, np.ndarray]:
        caches, proj_cache = cache
        dfeat, dW, db = linear_backward(dz, proj_cache)
        grads = {"proj.W": dW, "proj.b": db}
        H = self.hidden
        for k, s in enumerate(self.strides):
            _, _, _, dWs, dbs = lstm_backward(None, caches[k], dh_last=dfeat[:, k * H : (k + 1) * H])
            grads[f"s{s}.W"] = dWs
            grads[f"s{s}.b"] = dbs
        return grads

    def encode(self, roll: np.ndarray) -> np.ndarray:
        rolls, single = _as_batch(roll, 2)
        z, _ = self.forward(rolls.astype(self.params["proj.W"].dtype))
        return z[0] if single else z


def position_codes(n_steps: int = N_SLICES, dtype=np.float32) -> np.ndarray:
    """One-hot slice-within-bar concatenated with one-hot bar index, one row per step."""
    per_bar = 4 * 8
    n_bars = -(-n_steps // per_bar)
    t = np.arange(n_steps)
    codes = np.zeros((n_steps, per_bar + n_bars), dtype=dtype)
    codes[t, t % per_bar] = 1
    codes[t, per_bar + t // per_bar] = 1
    return codes


class LSTMDecoder:
    def __init__(
        self,
        hidden: int = 256,
        latent_dim: int = LATENT_DIM,
        rng: np.random.Generator | None = None,
        n_out: int = N_CHANNELS,
        n_steps: int = N_SLICES,
        dtype=np.float32,
        feed_latent: bool = True,
        position_code: bool = True,
    ):
        rng = rng if rng is not None else make_rng(0)
        self.hidden = hidden
        self.n_steps = n_steps
        self.n_out = n_out
        self.feed_latent = feed_latent
        self.positions = position_codes(n_steps, dtype) if position_code else None
        n_pos = 0 if self.positions is None else self.positions.shape[1]
        zb = 1.0 / np.sqrt(latent_dim)
        hb = 1.0 / np.sqrt(hidden)
        W, b = init_lstm(rng, n_out + n_pos, hidden, dtype)
        self.params = {
            "init_h.W": rng.uniform(-zb, zb, size=(latent_dim, hidden)).astype(dtype),
            "init_h.b": np.zeros(hidden, dtype=dtype),
            "init_c.W": rng.uniform(-zb, zb, size=(latent_dim, hidden)).astype(dtype),
            "init_c.b": np.zeros(hidden, dtype=dtype),
            "start": np.zeros(n_out, dtype=dtype),
            "lstm.W": W,
            "lstm.b": b,
            "head.W": rng.uniform(-hb, hb, size=(hidden, n_out)).astype(dtype),
            "head.b": np.full(n_out, -2.0, dtype=dtype),
        }
        if feed_latent:
            # z also enters every step as an offset on the gate pre-activations
            self.params["lstm.Wz"] = rng.uniform(-zb, zb, size=(latent_dim, 4 * hidden)).astype(dtype)

    def forward(self, z: np.ndarray, teacher: np.ndarray | None = None):
        """Unroll the decoder. With ``teacher`` (B, T, 9), step t > 0 reads the
        true row t - 1 instead of the previous output."""
        p = self.params
        pre_h, ch = linear(z, p["init_h.W"], p["init_h.b"])
        h = np.tanh(pre_h)
        c, cc = linear(z, p["init_c.W"], p["init_c.b"])
        h0 = h
        bias = p["lstm.b"] + z @ p["lstm.Wz"] if self.feed_latent else p["lstm.b"]
        B = z.shape[0]
        x = np.broadcast_to(p["start"], (B, self.n_out))
        steps, hs, ys = [], [], []
        for t in range(self.n_steps):
            if self.positions is not None:
                x = np.concatenate([x, np.broadcast_to(self.positions[t], (B, self.positions.shape[1]))], axis=1)
            h, c, cache = lstm_step(x, h, c, p["lstm.W"], bias)
            y = sigmoid(h @ p["head.W"] + p["head.b"])
            steps.append(cache)
            hs.append(h)
            ys.append(y)
            x = y if teacher is None else teacher[:, t]
        out = np.stack(ys, axis=1)
        return out, (steps, hs, out, h0, ch, cc, teacher is not None, z)

    def backward(self, dout: np.ndarray, cache):
        p = self.params
        steps, hs, out, h0, ch, cc, forced, z = cache
        B = dout.shape[0]
        dh = np.zeros((B, self.hidden), dtype=dout.dtype)
        dc = np.zeros_like(dh)
        dx_next = np.zeros((B, out.shape[2]), dtype=dout.dtype)
        xhs, das, dlogits = [], [], []
        for t in reversed(range(self.n_steps)):
            y = out[:, t]
            dlog = (dout[:, t] + dx_next) * y * (1.0 - y)
            dlogits.append(dlog)
            dh = dh + dlog @ p["head.W"].T
            dx, dh, dc, (xh, da) = lstm_step_backward(dh, dc, steps[t], p["lstm.W"])
            dx = dx[:, : self.n_out]
            dx_next = dx if (t == 0 or not forced) else 0.0
            xhs.append(xh)
            das.append(da)
        XH = np.concatenate(xhs, axis=0)
        DA = np.concatenate(das, axis=0)
        HS = np.concatenate(hs[::-1], axis=0)
        DL = np.concatenate(dlogits, axis=0)
        dpre_h = dh * (1.0 - h0 * h0)
        dz_h, dWh, dbh = linear_backward(dpre_h, ch)
        dz_c, dWc, dbc = linear_backward(dc, cc)
        grads = {
            "init_h.W": dWh,
            "init_h.b": dbh,
            "init_c.W": dWc,
            "init_c.b": dbc,
            "start": dx_next.sum(axis=0),
            "lstm.W": XH.T @ DA,
            "lstm.b": DA.sum(axis=0),
            "head.W": HS.T @ DL,
            "head.b": DL.sum(axis=0),
        }
        dz = dz_h + dz_c
        if self.feed_latent:
            da_sum = sum(das)
            grads["lstm.Wz"] = z.T @ da_sum
            dz = dz + da_sum @ p["lstm.Wz"].T
        return grads, dz

    def decode(self, z: np.ndarray) -> np.ndarray:
        zs, single = _as_batch(z, 1)
        out, _ = self.forward(zs.astype(self.params["lstm.W"].dtype))
        return out[0] if single else out


@dataclass
class AEConfig:
    epochs: int = 1000
    batch_size: int = 16
    lr: float = 2e-3
    lr_halflife: float = 500.0  # epochs per halving of lr; 0 keeps it constant
    adam_eps: float = 1e-6  # late gradients are ~1e-6 per weight; a smaller eps lets steps blow up
    enc_hidden: int = 128
    dec_hidden: int = 256
    latent_dim: int = LATENT_DIM
    noise: str = "none"
    clip_norm: float = 1.0
    teacher_forcing: bool = False
    feed_latent: bool = True
    position_code: bool = True
    seed: int = 0

    def validate(self) -> None:
        NoiseLevel(self.noise)
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0 or self.lr_halflife < 0 or self.adam_eps <= 0:
            raise ConfigError("autoencoder: epochs >= 0, batch_size >= 1, lr > 0, lr_halflife >= 0 and adam_eps > 0 required")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 0-based epoch; depends on the epoch alone so resumed runs match."""
        return self.lr * 0.5 ** (epoch / self.lr_halflife) if self.lr_halflife > 0 else self.lr


class Autoencoder:
    def __init__(self, config: AEConfig | None = None):
        self.config = config or AEConfig()
        c = self.config
        self.encoder = MRLSTMEncoder(c.enc_hidden, c.latent_dim, rng=make_rng(c.seed, 1))
        self.decoder = LSTMDecoder(
            c.dec_hidden,
            c.latent_dim,
            rng=make_rng(c.seed, 2),
            feed_latent=c.feed_latent,
            position_code=c.position_code,
        )

    @property
    def params(self) -> dict[str, np.ndarray]:
        out = {f"enc.{k}": v for k, v in self.encoder.params.items()}
        out.update({f"dec.{k}": v for k, v in self.decoder.params.items()})
        return out

    def load_params(self, tensors: dict[str, np.ndarray]) -> None:
        for name, arr in self.params.items():
            arr[...] = tensors[name]

    def encode(self, roll):
        return self.encoder.encode(roll)

    def decode(self, z):
        return self.decoder.decode(z)

    def reconstruct(self, rolls):
        return self.decode(self.encode(rolls))

    def loss_and_grads(self, rolls, noise: NoiseLevel, rng):
        z, enc_cache = self.encoder.forward(rolls)
        teacher = rolls if self.config.teacher_forcing else None
        out, dec_cache = self.decoder.forward(inject_latent_noise(z, noise, rng), teacher)
        loss, dout = mse(out, rolls)
        dgrads, dz = self.decoder.backward(dout, dec_cache)
        egrads = self.encoder.backward(dz, enc_cache)
        grads = {f"enc.{k}": v for k, v in egrads.items()}
        grads.update({f"dec.{k}": v for k, v in dgrads.items()})
        return loss, grads


def mrlstm_encode(roll: np.ndarray, encoder: MRLSTMEncoder) -> np.ndarray:
    return encoder.encode(roll)


def decode(z: np.ndarray, decoder: LSTMDecoder) -> np.ndarray:
    return decoder.decode(z)


def reconstruction_mse(model: Autoencoder, rolls: np.ndarray) -> float:
    return float(np.mean((model.reconstruct(rolls) - rolls) ** 2, dtype=np.float64))


def new_train_state(model: Autoencoder) -> TrainState:
    c = model.config
    return TrainState(
        optimizer=Adam(model.params, lr=c.lr, eps=c.adam_eps),
        rngs={"order": make_rng(c.seed, 3), "noise": make_rng(c.seed, 4)},
    )


def train_autoencoder(
    corpus: np.ndarray,
    config: AEConfig | None = None,
    *,
    model: Autoencoder | None = None,
    state: TrainState | None = None,
    on_epoch: Callable[[Autoencoder, TrainState], None] | None = None,
) -> tuple[Autoencoder, TrainState]:
    """Minimize reconstruction MSE of (optionally latent-noised) rolls.

    Pass ``model`` and ``state`` from a checkpoint to resume; training stops
    once ``state.epoch`` reaches ``config.epochs``.
    """
    corpus = np.asarray(corpus, dtype=np.float32)
    if corpus.ndim != 3 or len(corpus) == 0:
        raise EmptyCorpusError("autoencoder training needs at least one pianoroll")
    config = config or (model.config if model else AEConfig())
    config.validate()
    model = model or Autoencoder(config)
    state = state or new_train_state(model)
    noise = NoiseLevel(config.noise)
    params = model.params
    while state.epoch < config.epochs:
        t0 = time.perf_counter()
        total = 0.0
        state.optimizer.lr = config.lr_at(state.epoch)
        order = state.rngs["order"].permutation(len(corpus))
        for idx in minibatches(order, config.batch_size):
            loss, grads = model.loss_and_grads(corpus[idx], noise, state.rngs["noise"])
            clip_grad_norm(grads, config.clip_norm)
            state.optimizer.step(params, grads)
            total += loss * len(idx)
        state.epoch += 1
        state.history.append(total / len(corpus))
        log.debug("ae epoch %d loss %.6f (%.2fs)", state.epoch, state.history[-1], time.perf_counter() - t0)
        if on_epoch is not None:
            on_epoch(model, state)
    return model, state


def config_dict(config: AEConfig) -> dict:
    return asdict(config)
