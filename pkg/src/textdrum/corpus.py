"""Pianoroll corpus storage and MIDI-directory preprocessing.

A corpus is a JSON manifest plus a binary blob. The blob holds 1152
little-endian float32 values per record (128 x 9, time-major); each record's
``offset`` is its byte offset into the blob.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, EmptyCorpusError, ParseError, UnsupportedMeterError
from .midi_codec import N_CHANNELS, N_SLICES, parse_midi, quantize
from .nn.checkpoint import atomic_write
from .text_encoding import clean_path

log = logging.getLogger(__name__)

RECORD_FLOATS = N_SLICES * N_CHANNELS
RECORD_BYTES = RECORD_FLOATS * 4


@dataclass
class CorpusRecord:
    id: str
    source: str
    text: str
    offset: int


@dataclass
class Corpus:
    records: list[CorpusRecord]
    rolls: np.ndarray  # (N, 128, 9) float32

    @property
    def texts(self) -> list[str]:
        return [r.text for r in self.records]

    def __len__(self) -> int:
        return len(self.records)


def save_corpus(manifest_path: Path, corpus: Corpus, blob_name: str | None = None) -> None:
    manifest_path = Path(manifest_path)
    blob_name = blob_name or manifest_path.with_suffix(".bin").name
    ids = [r.id for r in corpus.records]
    if len(set(ids)) != len(ids):
        raise DataError("corpus ids must be unique")
    blob = np.ascontiguousarray(corpus.rolls, dtype="<f4").tobytes()
    manifest = {
        "blob": blob_name,
        "record_floats": RECORD_FLOATS,
        "records": [
            {"id": r.id, "source": r.source, "text": r.text, "offset": r.offset} for r in corpus.records
        ],
    }
    atomic_write(manifest_path.parent / blob_name, blob)
    atomic_write(manifest_path, (json.dumps(manifest, indent=2) + "\n").encode("utf-8"))


def load_corpus(manifest_path: Path) -> Corpus:
    manifest_path = Path(manifest_path)
    data = json.loads(manifest_path.read_text(encoding="utf-8"))
    entries = data["records"] if isinstance(data, dict) else data
    blob_name = data.get("blob") if isinstance(data, dict) else None
    blob_path = manifest_path.parent / (blob_name or manifest_path.with_suffix(".bin").name)
    raw = blob_path.read_bytes()
    records, rolls = [], []
    seen = set()
    for e in entries:
        off = int(e["offset"])
        if off < 0 or off % 4 or off + RECORD_BYTES > len(raw):
            raise DataError(f"record {e['id']!r}: offset {off} outside blob")
        if e["id"] in seen:
            raise DataError(f"duplicate record id {e['id']!r}")
        seen.add(e["id"])
        records.append(CorpusRecord(str(e["id"]), e.get("source", ""), e["text"], off))
        rolls.append(np.frombuffer(raw, dtype="<f4", count=RECORD_FLOATS, offset=off).reshape(N_SLICES, N_CHANNELS))
    if not records:
        raise EmptyCorpusError(f"{manifest_path} has no records")
    return Corpus(records, np.stack(rolls).astype(np.float32))


@dataclass
class PreprocessSummary:
    parsed: int = 0
    skipped: int = 0
    unsupported_meter: int = 0
    reasons: dict[str, str] = field(default_factory=dict)


def preprocess_directory(in_dir: Path) -> tuple[Corpus, PreprocessSummary]:
    """Parse and quantize every .mid/.midi file below in_dir (sorted walk)."""
    in_dir = Path(in_dir)
    files = sorted(
        p for p in in_dir.rglob("*") if p.is_file() and p.suffix.lower() in (".mid", ".midi")
    )
    summary = PreprocessSummary()
    records, rolls = [], []
    for path in files:
        rel = path.relative_to(in_dir).as_posix()
        try:
            roll = quantize(parse_midi(path.read_bytes()))
        except UnsupportedMeterError as exc:
            summary.unsupported_meter += 1
            summary.skipped += 1
            summary.reasons[rel] = "unsupported meter"
            log.info("skip %s: unsupported meter (%s)", rel, exc)
            continue
        except (ParseError, DataError, OSError) as exc:
            summary.skipped += 1
            summary.reasons[rel] = str(exc)
            log.info("skip %s: %s", rel, exc)
            continue
        records.append(CorpusRecord(f"{len(records):06d}", rel, clean_path(rel).text, len(records) * RECORD_BYTES))
        rolls.append(roll)
        summary.parsed += 1
    if not records:
        raise EmptyCorpusError(f"no usable MIDI files under {in_dir}")
    return Corpus(records, np.stack(rolls)), summary
