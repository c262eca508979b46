"""Command-line entry point: ``textdrum <command> [options]``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 missing
prerequisite stage.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ENCODERS, RunConfig, load_config, with_overrides
from .errors import ConfigError, TextDrumError

log = logging.getLogger("textdrum")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run config JSON")
    common.add_argument("--seed", type=_u64, help="override the config seed")
    common.add_argument("--encoder", choices=ENCODERS, help="text encoder for conditioning")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="textdrum", description="Text-conditioned drumbeat generation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-corpus", parents=[common], help="write a synthetic MIDI loop corpus")
    p.add_argument("--n", type=_positive, help="number of loops")
    p.add_argument("--out", type=Path, help="output directory")

    p = sub.add_parser("preprocess", parents=[common], help="MIDI directory -> pianoroll corpus")
    p.add_argument("in_dir", nargs="?", type=Path, help="MIDI directory (default: paths.corpus_dir)")
    p.add_argument("--out", type=Path, help="manifest path (default: paths.manifest)")

    for name, helptext in (("train-ae", "train the autoencoder"), ("train-clip", "contrastive text pretraining"), ("train-ldm", "train the latent diffusion model")):
        sub.add_parser(name, parents=[common], help=helptext)

    p = sub.add_parser("generate", parents=[common], help="sample drumbeats for a prompt")
    p.add_argument("--prompt", default="", help="text prompt (empty for unconditional)")
    p.add_argument("--n", type=_positive, default=1)
    p.add_argument("--out", type=Path, help="output directory (default: paths.generated)")

    p = sub.add_parser("evaluate", parents=[common], help="distance report over the eval prompts")
    p.add_argument("--out", type=Path, help="report directory (default: paths.reports)")
    return parser


def resolve_config(args) -> RunConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    elif args.seed is not None:
        cfg = RunConfig(seed=args.seed)
    else:
        raise ConfigError("a seed is required: pass --config or --seed")
    cfg = with_overrides(cfg, seed=args.seed, encoder=args.encoder)
    cfg.validate()
    return cfg


def run(args) -> None:
    cfg = resolve_config(args)
    cmd = args.command
    if cmd == "synth-corpus":
        files = pipeline.synth_stage(cfg, args.n, args.out)
        print(f"wrote {len(files)} MIDI files")
    elif cmd == "preprocess":
        corpus, summary = pipeline.preprocess_stage(cfg, args.in_dir, args.out)
        for source, reason in summary.reasons.items():
            print(f"skipped {source}: {reason}")
        print(f"parsed {summary.parsed} skipped {summary.skipped} unsupported-meter {summary.unsupported_meter}")
    elif cmd == "train-ae":
        _, state = pipeline.train_ae_stage(cfg)
        _report_training("autoencoder", state)
    elif cmd == "train-clip":
        _, state = pipeline.train_clip_stage(cfg)
        _report_training("contrastive", state)
    elif cmd == "train-ldm":
        _, state = pipeline.train_ldm_stage(cfg)
        _report_training("diffusion", state)
    elif cmd == "generate":
        files = pipeline.generate_stage(cfg, args.prompt, args.n, args.out)
        for f in files:
            print(f)
    elif cmd == "evaluate":
        written = pipeline.evaluate_stage(cfg, args.out)
        print(next(p for p in written if p.name == "report.csv").read_text(), end="")
    else:  # pragma: no cover - argparse guards this
        raise ConfigError(f"unknown command {cmd}")


def _report_training(stage: str, state) -> None:
    final = state.history[-1] if state.history else float("nan")
    print(json.dumps({"stage": stage, "epochs": state.epoch, "final_loss": final}))


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except TextDrumError as exc:
        print(f"textdrum {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"textdrum {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
