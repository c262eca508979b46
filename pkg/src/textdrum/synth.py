"""Synthetic drum-loop corpus.

A desk-scale stand-in for a commercial loop library: parameterized genre
templates (rock, funk, latin, blues) crossed with groove/fill and tempo,
randomized per file, written as real SMF files under descriptive nested
paths. Everything is a deterministic function of (n, seed).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .midi_codec import write_smf
from .nn import make_rng
from .nn.checkpoint import atomic_write

GENRES = ("rock", "funk", "latin", "blues")
KINDS = ("groove", "fill")
TEMPOS = {
    "rock": (100, 116, 120, 132),
    "funk": (92, 98, 104, 110),
    "latin": (120, 128, 140, 145),
    "blues": (70, 84, 96, 108),
}
FOLDERS = {"rock": "Rock GM", "funk": "Funk GM", "latin": "World Beats GM", "blues": "Blues GM"}
FEEL = {"rock": "8th", "funk": "Funky 16th", "latin": "Latin", "blues": "Shuffle Triplet"}

# pitch choices per channel (first is the common one)
KICK = (36, 35)
SNARE = (38, 40)
XSTICK = 37
HAT = (42, 44)
OPEN_HAT = 46
RIDE = (51, 59)
CRASH = (49, 57)
TOMS = (43, 47, 50)


# Accented and normal hits use velocities >= 72 and ghost notes <= 45, so no
# onset sits within about 0.07 of the 0.5 binarization threshold.


def _vel(rng, lo: int, hi: int) -> int:
    return int(rng.integers(lo, hi + 1))


def _bar_pattern(genre: str, rng: np.random.Generator, cymbal: str) -> list[tuple[int, int, int]]:
    """One 4/4 bar as (slice 0..31, pitch, velocity)."""
    hits = []
    kick = KICK[int(rng.integers(2))]
    snare = SNARE[int(rng.integers(2))]
    cym = RIDE[0] if cymbal == "ride" else HAT[int(rng.integers(2))]
    if genre == "rock":
        for s in range(0, 32, 4):
            hits.append((s, cym, _vel(rng, 90, 115) if s % 8 == 0 else _vel(rng, 72, 90)))
        kicks = [0, 16] + [s for s in (12, 20, 22, 28) if rng.random() < 0.35]
        hits += [(s, kick, _vel(rng, 100, 127)) for s in kicks]
        hits += [(s, snare, _vel(rng, 105, 127)) for s in (8, 24)]
    elif genre == "funk":
        for s in range(0, 32, 2):
            hits.append((s, cym, _vel(rng, 85, 110) if s % 4 == 0 else _vel(rng, 72, 88)))
        kicks = [0] + [s for s in (6, 10, 14, 18, 20, 26, 30) if rng.random() < 0.4]
        hits += [(s, kick, _vel(rng, 100, 127)) for s in kicks]
        hits += [(s, snare, _vel(rng, 105, 127)) for s in (8, 24)]
        hits += [(s, snare, _vel(rng, 25, 45)) for s in (2, 12, 14, 18, 28, 30) if rng.random() < 0.5]
        if rng.random() < 0.4:
            hits.append((int(rng.choice((14, 30))), OPEN_HAT, _vel(rng, 80, 100)))
    elif genre == "latin":
        for s in (0, 6, 8, 14, 16, 22, 24, 30):
            hits.append((s, RIDE[0] if cymbal == "ride" else cym, _vel(rng, 75, 105)))
        hits += [(s, kick, _vel(rng, 95, 120)) for s in (0, 12, 16, 28)]
        clave = (0, 6, 12, 20, 24) if rng.random() < 0.5 else (4, 8, 16, 22, 28)
        hits += [(s, XSTICK, _vel(rng, 80, 110)) for s in clave]
        hits += [(s, TOMS[0], _vel(rng, 85, 110)) for s in (14, 30) if rng.random() < 0.6]
        hits += [(s, TOMS[1], _vel(rng, 80, 105)) for s in (10, 26) if rng.random() < 0.4]
    elif genre == "blues":
        for beat in range(4):
            base = beat * 8
            hits.append((base, cym, _vel(rng, 90, 115)))
            hits.append((base + 5, cym, _vel(rng, 72, 88)))
        kicks = [0, 16] + [s for s in (13, 21, 29) if rng.random() < 0.4]
        hits += [(s, kick, _vel(rng, 100, 125)) for s in kicks]
        hits += [(s, snare, _vel(rng, 105, 127)) for s in (8, 24)]
        hits += [(s, snare, _vel(rng, 25, 45)) for s in (5, 21, 29) if rng.random() < 0.4]
    else:
        raise ValueError(genre)
    return hits


def _fill_bar(rng: np.random.Generator) -> list[tuple[int, int, int]]:
    """Snare/tom run over the last bar."""
    hits = [(0, KICK[0], _vel(rng, 100, 120)), (0, HAT[0], _vel(rng, 80, 100))]
    start = int(rng.choice((8, 16)))
    run = [SNARE[0]] * int(rng.integers(2, 5)) + list(TOMS[::-1]) * 2
    for k, s in enumerate(range(start, 32, 2)):
        pitch = run[min(k, len(run) - 1)] if rng.random() < 0.85 else KICK[0]
        hits.append((s, pitch, _vel(rng, 90, 127)))
    return hits


def synth_loop(genre: str, kind: str, rng: np.random.Generator):
    """Build one loop; returns (onsets as (tick-in-slices, pitch, vel), n_bars, cymbal)."""
    cymbal = "ride" if rng.random() < 0.3 else "hats"
    n_bars = int(rng.choice((1, 2))) if kind == "groove" else int(rng.choice((2, 4)))
    onsets = []
    for bar in range(n_bars):
        if kind == "fill" and bar == n_bars - 1:
            hits = _fill_bar(rng)
        else:
            hits = _bar_pattern(genre, rng, cymbal)
            if bar == 0 and kind == "fill":
                hits.append((0, CRASH[int(rng.integers(2))], _vel(rng, 100, 127)))
        onsets += [(bar * 32 + s, p, v) for s, p, v in hits]
    # one onset per (slice, pitch): keep the loudest
    best: dict[tuple[int, int], int] = {}
    for s, p, v in onsets:
        best[(s, p)] = max(v, best.get((s, p), 0))
    return sorted((s, p, v) for (s, p), v in best.items()), n_bars, cymbal


def synth_corpus(n: int, seed: int) -> list[tuple[str, bytes]]:
    """n (relative path, SMF bytes) pairs, cycling genre x kind."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(seed, 100)
    combos = [(g, k) for g in GENRES for k in KINDS]
    counters: dict[tuple[str, str], int] = {}
    files = []
    for i in range(n):
        genre, kind = combos[i % len(combos)]
        idx = counters.get((genre, kind), 0) + 1
        counters[(genre, kind)] = idx
        bpm = int(rng.choice(TEMPOS[genre]))
        resolution = int(rng.choice((96, 480)))
        onsets, n_bars, cymbal = synth_loop(genre, kind, rng)
        ticks_per_slice = resolution // 8
        notes = [(s * ticks_per_slice, p, v) for s, p, v in onsets]
        data = write_smf(
            notes,
            bpm=bpm,
            resolution=resolution,
            length_ticks=n_bars * 4 * resolution,
        )
        feel = FEEL[genre] + (" Ride" if cymbal == "ride" else "")
        folder = "Fills" if kind == "fill" else "Grooves"
        name = f"{bpm} {feel} {kind.title()} {idx:02d}.mid"
        path = f"{FOLDERS[genre]}/{bpm} {genre.title()} {FEEL[genre]}/{folder}/{name}"
        files.append((path, data))
    return files


def write_synth_corpus(n: int, seed: int, out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    written = []
    for rel, data in synth_corpus(n, seed):
        path = out_dir / rel
        atomic_write(path, data)
        written.append(path)
    return written
