from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np
import pytest

from textdrum.cli import main
from textdrum.config import config_from_dict, load_config
from textdrum.errors import ConfigError
from textdrum.midi_codec import write_smf
from textdrum.nn.checkpoint import load_checkpoint
from textdrum.pipeline import load_generation
from textdrum.synth import synth_corpus
from textdrum.text_encoding import PromptText, build_vocab, clean_path, encode_multihot

PROMPTS = ["rock 8th", "funky 16th", "latin", "blues shuffle"]


def small_config(root: Path, seed: int = 7, **extra) -> Path:
    cfg = {
        "seed": seed,
        "synth_n": 16,
        "checkpoint_every": 2,
        "ae": {"epochs": 3, "enc_hidden": 8, "dec_hidden": 16, "batch_size": 8},
        "clip": {"epochs": 2, "enc_hidden": 4, "batch_size": 8},
        "ldm": {"epochs": 4, "hidden": 32, "batch_size": 8},
        "sampler": {"steps": 10},
        "evaluate": {"prompts": PROMPTS, "n_per_prompt": 3, "random_pairs": 20},
    }
    for key, value in extra.items():
        cfg[key] = {**cfg.get(key, {}), **value} if isinstance(value, dict) else value
    root.mkdir(parents=True, exist_ok=True)
    path = root / "run.json"
    path.write_text(json.dumps(cfg))
    return path


def run(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = small_config(root)
    for cmd in ("synth-corpus", "preprocess", "train-ae", "train-clip", "train-ldm"):
        assert run(cmd, "--config", cfg) == 0, cmd
    return root, cfg


def test_synth_corpus_is_deterministic(tmp_path):
    files = synth_corpus(64, 3)
    assert len(files) == 64
    assert files == synth_corpus(64, 3)
    assert len({p for p, _ in files}) == 64
    assert run("synth-corpus", "--seed", 3, "--n", 5, "--out", tmp_path / "a") == 0
    written = sorted((tmp_path / "a").rglob("*.mid"))
    assert len(written) == 5
    assert written[0].read_bytes() == dict(synth_corpus(5, 3))[written[0].relative_to(tmp_path / "a").as_posix()]


def test_synth_corpus_covers_enough_prompts(tmp_path):
    texts = [clean_path(p) for p, _ in synth_corpus(64, 0)]
    vocab = build_vocab(texts)
    vectors = {encode_multihot(t, vocab)[:-1].tobytes() for t in texts}
    assert len(vectors) >= 8


def test_preprocess_skips_unsupported_meter(tmp_path, capsys):
    src = tmp_path / "midi"
    for i, (_, data) in enumerate(synth_corpus(3, 0)):
        (src / "ok").mkdir(parents=True, exist_ok=True)
        (src / "ok" / f"loop{i}.mid").write_bytes(data)
    (src / "odd.mid").write_bytes(write_smf([(0, 36, 100)], bpm=100, time_signature=(6, 8)))
    out = tmp_path / "corpus.json"
    assert run("preprocess", src, "--out", out, "--seed", 0) == 0
    text = capsys.readouterr().out
    assert "odd.mid: unsupported meter" in text
    assert "parsed 3 skipped 1 unsupported-meter 1" in text
    manifest = json.loads(out.read_text())
    assert len(manifest["records"]) == 3


def test_preprocess_synth_corpus_has_no_skips(tmp_path, capsys):
    assert run("synth-corpus", "--seed", 1, "--n", 32, "--out", tmp_path / "c") == 0
    assert run("preprocess", tmp_path / "c", "--out", tmp_path / "m.json", "--seed", 1) == 0
    assert "parsed 32 skipped 0" in capsys.readouterr().out


def test_exit_codes(tmp_path, capsys):
    assert run("generate") == 1  # no seed
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--seed", "-1"])
    assert exc.value.code == 1
    (tmp_path / "junk").mkdir()
    (tmp_path / "junk" / "bad.mid").write_bytes(b"not a midi file")
    assert run("preprocess", tmp_path / "junk", "--out", tmp_path / "x.json", "--seed", 0) == 2
    capsys.readouterr()
    cfg = small_config(tmp_path / "empty")
    assert run("train-ldm", "--config", cfg) == 3
    err = capsys.readouterr().err
    assert "DependencyError" in err and "autoencoder" in err
    assert not (tmp_path / "empty" / "checkpoints").exists()


def test_failed_validation_writes_nothing(tmp_path):
    cfg = small_config(tmp_path, ae={"lr": -1.0})
    assert run("synth-corpus", "--config", cfg) == 1
    assert not (tmp_path / "corpus").exists()


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        config_from_dict({"paths": {}})
    with pytest.raises(ConfigError):
        config_from_dict({"seed": 1, "ae": {"epochz": 3}})
    with pytest.raises(ConfigError):
        config_from_dict({"seed": 1, "colour": "red"})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    cfg = config_from_dict({"seed": 5})
    assert cfg.ae.seed == cfg.ldm.seed == cfg.clip.seed == 5


def test_training_logs_and_checkpoints(trained):
    root, _ = trained
    for stage, epochs in (("ae", 3), ("clip", 2), ("ldm", 4)):
        log = json.loads((root / "checkpoints" / f"{stage}_log.json").read_text())
        assert len(log["epochs"]) == epochs
        assert all(np.isfinite(e["loss"]) and e["wall_time"] >= 0 for e in log["epochs"])
        kind, _, meta = load_checkpoint(root / "checkpoints" / f"{stage}.ckpt")
        assert meta["train"]["epoch"] == epochs


def test_training_is_deterministic_and_resumable(trained, tmp_path):
    root, _ = trained
    straight = json.loads((root / "checkpoints" / "ae_log.json").read_text())["epochs"]
    other = tmp_path / "resume"
    cfg = small_config(other, ae={"epochs": 2})
    assert run("synth-corpus", "--config", cfg) == 0
    assert run("preprocess", "--config", cfg) == 0
    assert run("train-ae", "--config", cfg) == 0
    cfg = small_config(other, ae={"epochs": 3})
    assert run("train-ae", "--config", cfg) == 0
    resumed = json.loads((other / "checkpoints" / "ae_log.json").read_text())["epochs"]
    assert [e["loss"] for e in resumed] == [e["loss"] for e in straight]
    assert (other / "checkpoints" / "ae.ckpt").read_bytes() == (root / "checkpoints" / "ae.ckpt").read_bytes()


def test_generate_outputs(trained, capsys):
    root, cfg = trained
    out = root / "gen"
    assert run("generate", "--config", cfg, "--prompt", "latin rock", "--n", 4, "--out", out) == 0
    files = sorted(out.glob("*.mid"))
    assert {f.name for f in files} == {f"sample_{s}.mid" for s in range(7, 11)}
    first = {f.name: f.read_bytes() for f in files}
    g = load_generation(out)
    assert g.rolls.shape == (4, 128, 9) and g.latents.shape == (4, 128)
    assert len({r.tobytes() for r in g.latents}) == 4
    assert run("generate", "--config", cfg, "--prompt", "latin rock", "--n", 4, "--out", out) == 0
    assert {f.name: f.read_bytes() for f in sorted(out.glob("*.mid"))} == first
    assert json.loads((out / "generation.json").read_text())["bpm"] == 120


def test_generate_empty_prompt_and_bpm(trained):
    root, cfg = trained
    assert run("generate", "--config", cfg, "--n", 2, "--out", root / "uncond") == 0
    assert len(list((root / "uncond").glob("*.mid"))) == 2
    assert run("generate", "--config", cfg, "--prompt", "funk 96", "--out", root / "bpm") == 0
    assert json.loads((root / "bpm" / "generation.json").read_text())["bpm"] == 96


def test_contrastive_encoder_path(trained, tmp_path):
    root, cfg = trained
    assert run("train-ldm", "--config", cfg, "--encoder", "contrastive") == 2  # existing ldm was multihot
    alt = tmp_path / "alt"
    cfg2 = small_config(alt)
    assert run("synth-corpus", "--config", cfg2) == 0
    assert run("preprocess", "--config", cfg2) == 0
    assert run("train-ae", "--config", cfg2) == 0
    assert run("train-ldm", "--config", cfg2, "--encoder", "contrastive") == 3  # no clip checkpoint yet
    assert run("train-clip", "--config", cfg2) == 0
    assert run("train-ldm", "--config", cfg2, "--encoder", "contrastive") == 0
    assert run("generate", "--config", cfg2, "--encoder", "contrastive", "--prompt", "funky", "--n", 2) == 0


def test_evaluate_report(trained, capsys):
    root, cfg = trained
    assert run("evaluate", "--config", cfg) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["metric", "comparison", "min", "mean", "std", "n"]
    assert len(rows) == 9
    report = (root / "reports" / "report.csv").read_bytes()
    gv = [r for r in rows if r[1] == "generated_vs_generated"]
    assert all(int(r[5]) == len(PROMPTS) * 3 for r in gv)
    assert len(list((root / "reports" / "generated").iterdir())) == len(PROMPTS)
    assert run("evaluate", "--config", cfg) == 0
    assert (root / "reports" / "report.csv").read_bytes() == report
