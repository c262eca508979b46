from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import TOL, check
from textdrum.autoencoder import (
    AEConfig,
    Autoencoder,
    MRLSTMEncoder,
    NoiseLevel,
    decode,
    inject_latent_noise,
    mrlstm_encode,
    position_codes,
    reconstruction_mse,
    train_autoencoder,
)
from textdrum.errors import ConfigError, EmptyCorpusError
from textdrum.nn import make_rng

SMALL = dict(enc_hidden=8, dec_hidden=12, latent_dim=128)


def rolls(n, seed=0):
    rng = np.random.default_rng(seed)
    return np.where(rng.random((n, 128, 9)) < 0.1, rng.random((n, 128, 9)), 0.0).astype(np.float32)


def to_float64(model: Autoencoder) -> None:
    for part in (model.encoder.params, model.decoder.params):
        for k in part:
            part[k] = part[k].astype(np.float64)


def test_encoder_output_and_zero_propagation():
    enc = MRLSTMEncoder(hidden=8)
    assert mrlstm_encode(rolls(1)[0], enc).shape == (128,)
    for k in enc.params:
        enc.params[k][...] = 0
    assert not mrlstm_encode(np.zeros((128, 9), np.float32), enc).any()


def test_branch_lengths():
    enc = MRLSTMEncoder(hidden=4)
    _, (caches, _) = enc.forward(rolls(2))
    assert [len(steps) for steps, _ in caches] == [128, 64, 32]


def test_stride_four_branch_is_wired():
    enc = MRLSTMEncoder(hidden=8, rng=make_rng(1))
    x = rolls(3, seed=4)
    before = enc.encode(x)
    enc.params["s4.W"][...] = 0
    enc.params["s4.b"][...] = 0
    assert not np.allclose(before, enc.encode(x))


def test_decoder_range_and_determinism():
    model = Autoencoder(AEConfig(**SMALL))
    z = np.random.default_rng(0).standard_normal(128).astype(np.float32)
    out = decode(z, model.decoder)
    assert out.shape == (128, 9)
    assert out.min() > 0 and out.max() < 1
    assert np.array_equal(out, model.decode(z))


@pytest.mark.parametrize("teacher", [False, True])
def test_full_autoencoder_gradcheck(teacher):
    model = Autoencoder(AEConfig(enc_hidden=3, dec_hidden=4, latent_dim=5, teacher_forcing=teacher))
    to_float64(model)
    x = rolls(2).astype(np.float64)
    none = NoiseLevel("none")
    _, grads = model.loss_and_grads(x, none, None)
    rng = np.random.default_rng(0)
    errs = check(lambda: model.loss_and_grads(x, none, None)[0], model.params, grads, rng=rng, max_entries=12)
    assert max(errs.values()) < TOL


def test_noise_levels():
    assert NoiseLevel("none").range == (0.0, 0.0)
    assert NoiseLevel("low").range == (0.001, 0.01)
    assert NoiseLevel("high").range == (0.01, 0.1)
    with pytest.raises(ConfigError):
        NoiseLevel("loud")
    z = np.random.default_rng(1).standard_normal((4, 128)).astype(np.float32)
    assert np.array_equal(inject_latent_noise(z, NoiseLevel("none"), make_rng(0)), z)


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(["low", "high"]), st.integers(0, 2**32 - 1))
def test_noise_amplitude_within_range(kind, seed):
    lo, hi = NoiseLevel(kind).range
    z = np.zeros((3, 20000), np.float32)
    noisy = inject_latent_noise(z, NoiseLevel(kind), make_rng(seed))
    # per-row std estimates the drawn amplitude to within ~1.5% at this width
    amps = noisy.std(axis=1)
    assert np.all(amps > lo * 0.96) and np.all(amps < hi * 1.04)


def test_one_epoch_changes_parameters():
    cfg = AEConfig(epochs=1, batch_size=1, **SMALL)
    model = Autoencoder(cfg)
    before = {k: v.copy() for k, v in model.params.items()}
    train_autoencoder(rolls(1), cfg, model=model)
    assert any(not np.array_equal(before[k], v) for k, v in model.params.items())


def test_empty_corpus():
    with pytest.raises(EmptyCorpusError):
        train_autoencoder(np.zeros((0, 128, 9), np.float32), AEConfig(epochs=1, **SMALL))


def test_noise_kind_does_not_change_data_order():
    data = rolls(6)
    states = []
    for kind in ("none", "low"):
        cfg = AEConfig(epochs=2, batch_size=2, noise=kind, **SMALL)
        _, state = train_autoencoder(data, cfg)
        states.append(state.rngs["order"].bit_generator.state)
    assert states[0] == states[1]


def test_training_is_deterministic_and_resumable():
    data = rolls(4)
    cfg = AEConfig(epochs=3, batch_size=2, **SMALL)
    m1, s1 = train_autoencoder(data, cfg)
    m2, s2 = train_autoencoder(data, cfg)
    assert s1.history == s2.history
    # stop after one epoch, then continue with the same objects
    cfg1 = AEConfig(epochs=1, batch_size=2, **SMALL)
    m3, s3 = train_autoencoder(data, cfg1)
    m3, s3 = train_autoencoder(data, cfg, model=m3, state=s3)
    assert s3.history == s1.history
    for k in m1.params:
        assert np.array_equal(m1.params[k], m3.params[k])


def test_short_training_reduces_loss():
    data = rolls(8, seed=2)
    cfg = AEConfig(epochs=15, batch_size=8, lr=3e-3, **SMALL)
    model = Autoencoder(cfg)
    before = reconstruction_mse(model, data)
    train_autoencoder(data, cfg, model=model)
    assert reconstruction_mse(model, data) < before


def test_position_codes():
    codes = position_codes()
    assert codes.shape == (128, 36)
    assert np.all(codes.sum(axis=1) == 2)
    assert np.array_equal(np.argmax(codes[:, :32], axis=1), np.arange(128) % 32)
    assert np.array_equal(np.argmax(codes[:, 32:], axis=1), np.arange(128) // 32)


def test_lr_halves_every_halflife():
    cfg = AEConfig(lr=2e-3, lr_halflife=100.0)
    assert cfg.lr_at(0) == 2e-3
    assert cfg.lr_at(100) == pytest.approx(1e-3)
    assert cfg.lr_at(250) == pytest.approx(2e-3 * 0.5**2.5)
    assert AEConfig(lr=2e-3, lr_halflife=0.0).lr_at(999) == 2e-3


@pytest.mark.parametrize("bad", [dict(lr_halflife=-1.0), dict(adam_eps=0.0), dict(batch_size=0), dict(lr=0.0)])
def test_invalid_config(bad):
    with pytest.raises(ConfigError):
        train_autoencoder(rolls(2), AEConfig(epochs=1, **bad, **SMALL))


@pytest.mark.parametrize("feed_latent,position_code", [(False, False), (True, False), (False, True)])
def test_decoder_variants(feed_latent, position_code):
    model = Autoencoder(AEConfig(feed_latent=feed_latent, position_code=position_code, **SMALL))
    assert ("lstm.Wz" in model.decoder.params) == feed_latent
    n_in = model.decoder.params["lstm.W"].shape[0] - 12
    assert n_in == 9 + (36 if position_code else 0)
    out = model.reconstruct(rolls(2))
    assert out.shape == (2, 128, 9) and np.all((out > 0) & (out < 1))
