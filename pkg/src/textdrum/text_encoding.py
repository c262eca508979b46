"""Prompt text from file paths, keyword vocabularies and text embedders."""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import EmptyCorpusError, ShapeError, UntrainedEncoderError

PATH_STOPLIST = ("groove monkee", "gm", "bonus", "mid", "midi")
# Non-musical filler dropped when building a keyword vocabulary.
DEFAULT_VOCAB_STOPLIST = ("a", "an", "and", "the", "of", "in", "on", "with", "to", "for")

BPM_RANGE = (40, 300)
BPM_SCALE = 300.0
BASE_EMBED_DIM = 512

_SEPARATORS = re.compile(r"[\s/\\_]+")
_METER = re.compile(r"\d+-\d+")
_EXTENSION = re.compile(r"\.midi?$", re.IGNORECASE)


@dataclass(frozen=True)
class PromptText:
    tokens: tuple[str, ...] = ()

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    def __str__(self) -> str:
        return self.text


def tokenize(text: str) -> list[str]:
    tokens = []
    for raw in _SEPARATORS.split(text.lower()):
        if not raw:
            continue
        if _METER.fullmatch(raw):
            tokens.append(raw)
        else:
            tokens.extend(t for t in raw.split("-") if t)
    return tokens


def _strip_phrases(tokens: list[str], phrases: Sequence[tuple[str, ...]]) -> list[str]:
    # Removal can splice a new match together, so run to a fixpoint.
    changed = True
    while changed:
        changed = False
        out: list[str] = []
        for tok in tokens:
            out.append(tok)
            for phrase in phrases:
                n = len(phrase)
                if len(out) >= n and tuple(out[-n:]) == phrase:
                    del out[-n:]
                    changed = True
                    break
        tokens = out
    return tokens


def clean_path(filepath: str, stoplist: Sequence[str] = PATH_STOPLIST) -> PromptText:
    """Turn a MIDI file path (or a free-text prompt) into a PromptText.

    Separators and the .mid/.midi extension go, text is lowercased, and
    stoplisted identifiers are removed. Duplicates are kept in order.
    """
    phrases = [tuple(tokenize(s)) for s in stoplist]
    phrases = sorted({p for p in phrases if p}, key=len, reverse=True)
    tokens = tokenize(_EXTENSION.sub("", filepath.strip()))
    while True:
        before = tokens
        while tokens and _EXTENSION.search(tokens[-1]):
            stem = _EXTENSION.sub("", tokens[-1])
            tokens = tokens[:-1] + ([stem] if stem else [])
        tokens = _strip_phrases(tokens, phrases)
        if tokens == before:
            return PromptText(tuple(tokens))


def extract_bpm(text: PromptText) -> int | None:
    lo, hi = BPM_RANGE
    for tok in text.tokens:
        if tok.isascii() and tok.isdigit() and lo <= int(tok) <= hi:
            return int(tok)
    return None


@dataclass(frozen=True)
class KeywordVocab:
    keywords: tuple[str, ...]
    stoplist: tuple[str, ...] = DEFAULT_VOCAB_STOPLIST
    coverage: float = 0.95
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.keywords)) != len(self.keywords):
            raise ValueError("duplicate keywords in vocabulary")
        object.__setattr__(self, "index", {k: i for i, k in enumerate(self.keywords)})

    def __len__(self) -> int:
        return len(self.keywords)

    def to_json(self) -> str:
        payload = {
            "keywords": list(self.keywords),
            "stoplist": list(self.stoplist),
            "coverage": self.coverage,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> KeywordVocab:
        data = json.loads(text)
        return cls(
            keywords=tuple(data["keywords"]),
            stoplist=tuple(data.get("stoplist", DEFAULT_VOCAB_STOPLIST)),
            coverage=float(data.get("coverage", 0.95)),
        )


def build_vocab(
    corpus: Sequence[PromptText],
    coverage: float = 0.95,
    stoplist: Sequence[str] = DEFAULT_VOCAB_STOPLIST,
    allow: Sequence[str] | None = None,
    deny: Sequence[str] = (),
) -> KeywordVocab:
    """Keep the most document-frequent tokens covering `coverage` of the mass.

    Pure numbers, `stoplist` and `deny` tokens are dropped first; when `allow`
    is given only those tokens are eligible. Order is by descending document
    frequency, ties broken lexicographically.
    """
    if not corpus:
        raise EmptyCorpusError("cannot build a vocabulary from an empty corpus")
    if not 0.0 < coverage <= 1.0:
        raise ValueError("coverage must lie in (0, 1]")
    blocked = set(stoplist) | set(deny)
    allowed = set(allow) if allow is not None else None
    df: Counter[str] = Counter()
    for prompt in corpus:
        for tok in set(prompt.tokens):
            if tok.isdigit() or tok in blocked:
                continue
            if allowed is not None and tok not in allowed:
                continue
            df[tok] += 1
    if not df:
        raise EmptyCorpusError("no keywords survive filtering")
    ranked = sorted(df.items(), key=lambda kv: (-kv[1], kv[0]))
    total = sum(df.values())
    keep, mass = [], 0
    for tok, count in ranked:
        keep.append(tok)
        mass += count
        if mass >= coverage * total - 1e-9:
            break
    return KeywordVocab(tuple(keep), tuple(stoplist), coverage)


def encode_multihot(text: PromptText, vocab: KeywordVocab) -> np.ndarray:
    """K keyword indicators followed by bpm / 300 (0 when absent)."""
    if not len(vocab):
        raise ValueError("vocabulary is empty")
    vec = np.zeros(len(vocab) + 1, dtype=np.float32)
    for tok in text.tokens:
        i = vocab.index.get(tok)
        if i is not None:
            vec[i] = 1.0
    bpm = extract_bpm(text)
    if bpm is not None:
        vec[-1] = bpm / BPM_SCALE
    return vec


# --------------------------------------------------------------------------
# base embedders for the contrastive path


class BaseEmbedder(Protocol):
    dim: int

    def __call__(self, text: PromptText) -> np.ndarray: ...


class HashingEmbedder:
    """Signed feature-hashed bag of tokens, L2-normalized."""

    def __init__(self, dim: int = BASE_EMBED_DIM):
        self.dim = dim

    def _slot(self, token: str) -> tuple[int, float]:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        h = int.from_bytes(digest, "little")
        return h % self.dim, (1.0 if (h >> 63) & 1 else -1.0)

    def __call__(self, text: PromptText) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for tok in text.tokens:
            i, sign = self._slot(tok)
            vec[i] += sign
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec.astype(np.float32)


class PrecomputedEmbedder:
    """Looks up base embeddings produced by an external model.

    File layout: a JSON manifest `[{"text": ..., "offset": ...}, ...]` where
    offset is a byte offset into a little-endian float32 blob holding `dim`
    values per text.
    """

    def __init__(self, table: dict[str, np.ndarray], dim: int = BASE_EMBED_DIM):
        self.dim = dim
        self.table = table

    @classmethod
    def load(cls, manifest: Path, blob: Path, dim: int = BASE_EMBED_DIM) -> PrecomputedEmbedder:
        entries = json.loads(Path(manifest).read_text(encoding="utf-8"))
        data = Path(blob).read_bytes()
        table = {}
        for entry in entries:
            off = int(entry["offset"])
            if off < 0 or off + 4 * dim > len(data):
                raise ShapeError(f"embedding offset {off} outside blob")
            vec = np.frombuffer(data, dtype="<f4", count=dim, offset=off)
            table[clean_path(entry["text"]).text] = vec.astype(np.float32)
        return cls(table, dim)

    def __call__(self, text: PromptText) -> np.ndarray:
        try:
            return self.table[text.text]
        except KeyError:
            raise KeyError(f"no precomputed embedding for {text.text!r}") from None


def save_precomputed(path_manifest: Path, path_blob: Path, texts, vectors) -> None:
    vectors = np.asarray(vectors, dtype="<f4")
    entries = [{"text": t, "offset": i * vectors.shape[1] * 4} for i, t in enumerate(texts)]
    Path(path_manifest).write_text(json.dumps(entries, indent=2), encoding="utf-8")
    Path(path_blob).write_bytes(vectors.tobytes())


# --------------------------------------------------------------------------
# configured text encoders


class MultihotEncoder:
    kind = "multihot"

    def __init__(self, vocab: KeywordVocab):
        self.vocab = vocab
        self.dim = len(vocab) + 1

    def embed(self, text: PromptText) -> np.ndarray:
        return encode_multihot(text, self.vocab)


class ContrastiveEncoder:
    """Base embedder followed by a trained projection head (see contrastive)."""

    kind = "contrastive"

    def __init__(self, base: BaseEmbedder, head=None, dim: int = 128):
        self.base = base
        self.head = head
        self.dim = dim

    def embed(self, text: PromptText) -> np.ndarray:
        if self.head is None:
            raise UntrainedEncoderError("contrastive text head has not been trained")
        return self.head.project(self.base(text))


def embed_text(text: PromptText, encoder) -> np.ndarray:
    return encoder.embed(text)


def empty_embedding(encoder) -> np.ndarray:
    return np.zeros(encoder.dim, dtype=np.float32)
