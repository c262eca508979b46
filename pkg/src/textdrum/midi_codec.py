"""Standard MIDI File drum loops <-> fixed 128x9 pianorolls.

A pianoroll is a float32 array of shape (128, 9): 128 time slices covering
four 4/4 bars (8 slices per quarter note) by nine drum channels, holding
note-on velocity / 127. Zero means no onset.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyTrackError, ParseError, ShapeError, UnsupportedMeterError

N_SLICES = 128
N_CHANNELS = 9
SLICES_PER_QUARTER = 8
CHANNEL_NAMES = (
    "kick",
    "snare",
    "closed_hihat",
    "open_hihat",
    "ride",
    "crash",
    "low_tom",
    "mid_tom",
    "high_tom",
)
# One representative GM pitch per channel, used when writing MIDI.
CANONICAL_PITCHES = (36, 38, 42, 46, 51, 49, 43, 47, 50)

_GM_GROUPS = (
    (35, 36),
    (37, 38, 39, 40),
    (42, 44),
    (46,),
    (51, 53, 59),
    (49, 52, 55, 57),
    (41, 43, 45),
    (47, 48),
    (50, 60, 61, 62, 63, 64),
)


def _build_gm_map() -> tuple[int | None, ...]:
    table: list[int | None] = [None] * 128
    for channel, pitches in enumerate(_GM_GROUPS):
        for p in pitches:
            table[p] = channel
    return tuple(table)


GM_DRUM_MAP: tuple[int | None, ...] = _build_gm_map()

# Pitch range treated as percussion when a file has no channel-10 notes.
_PERCUSSION_RANGE = range(35, 82)
_DRUM_CHANNEL = 9

EXPORT_RESOLUTION = 480


@dataclass(frozen=True)
class MidiDrumTrack:
    resolution: int
    bpm: float
    time_signature: tuple[int, int]
    length_ticks: int
    events: tuple[tuple[int, int, int], ...] = field(default=())


# --------------------------------------------------------------------------
# SMF decoding


class _Reader:
    def __init__(self, data: bytes, pos: int, end: int):
        self.data = data
        self.pos = pos
        self.end = end

    def byte(self) -> int:
        if self.pos >= self.end:
            raise ParseError("unexpected end of track data", self.pos)
        b = self.data[self.pos]
        self.pos += 1
        return b

    def data_byte(self) -> int:
        at = self.pos
        b = self.byte()
        if b & 0x80:
            raise ParseError("expected data byte", at)
        return b

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise ParseError("chunk truncated", self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def varlen(self) -> int:
        value = 0
        for _ in range(4):
            b = self.byte()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise ParseError("variable-length quantity longer than 4 bytes", self.pos)


def _read_track(data: bytes, start: int, end: int, track_index: int):
    """Decode one MTrk body into (notes, tempos, time_sigs, end_tick)."""
    r = _Reader(data, start, end)
    tick = 0
    status = None
    notes: list[tuple[int, int, int, int]] = []  # tick, channel, pitch, velocity
    tempos: list[tuple[int, int, int]] = []  # tick, track, microseconds/quarter
    meters: list[tuple[int, int, int, int]] = []  # tick, track, num, den
    while r.pos < r.end:
        tick += r.varlen()
        at = r.pos
        b = r.byte()
        if b & 0x80:
            if b < 0xF0:
                status = b
            first = None
        else:
            if status is None:
                raise ParseError("running status without a prior status byte", at)
            first = b
            b = status

        if b == 0xFF:
            kind = r.byte()
            payload = r.take(r.varlen())
            if kind == 0x51:
                if len(payload) != 3:
                    raise ParseError("bad set-tempo length", at)
                uspq = int.from_bytes(payload, "big")
                if uspq == 0:
                    raise ParseError("zero tempo", at)
                tempos.append((tick, track_index, uspq))
            elif kind == 0x58:
                if len(payload) < 2:
                    raise ParseError("bad time-signature length", at)
                if payload[1] > 16:
                    raise ParseError("time-signature denominator exponent out of range", at)
                meters.append((tick, track_index, payload[0], 1 << payload[1]))
            elif kind == 0x2F:
                return notes, tempos, meters, tick
            status = None
        elif b in (0xF0, 0xF7):
            r.take(r.varlen())
            status = None
        elif 0xF1 <= b <= 0xFE:
            raise ParseError(f"system message 0x{b:02X} not allowed in a file", at)
        else:
            hi = b & 0xF0
            d1 = first if first is not None else r.data_byte()
            if hi in (0xC0, 0xD0):
                continue
            d2 = r.data_byte()
            if hi == 0x90 and d2 > 0:
                notes.append((tick, b & 0x0F, d1, d2))
    return notes, tempos, meters, tick


def parse_midi(data: bytes) -> MidiDrumTrack:
    """Decode a format 0/1 SMF and collect its drum events."""
    if len(data) < 14 or data[:4] != b"MThd":
        raise ParseError("missing MThd header", 0)
    (hlen,) = struct.unpack(">I", data[4:8])
    if hlen < 6:
        raise ParseError("header chunk too short", 4)
    if 8 + hlen > len(data):
        raise ParseError("header chunk truncated", 8)
    fmt, ntracks, division = struct.unpack(">HHH", data[8:14])
    if fmt not in (0, 1):
        raise ParseError(f"unsupported SMF format {fmt}", 8)
    if division & 0x8000 or division == 0:
        raise ParseError("SMPTE or zero division is unsupported", 12)

    pos = 8 + hlen
    per_track = []
    track_index = 0
    while pos < len(data) and track_index < ntracks:
        if pos + 8 > len(data):
            raise ParseError("chunk header truncated", pos)
        tag = data[pos : pos + 4]
        (clen,) = struct.unpack(">I", data[pos + 4 : pos + 8])
        body = pos + 8
        if body + clen > len(data):
            raise ParseError("chunk truncated", pos)
        if tag == b"MTrk":
            per_track.append(_read_track(data, body, body + clen, track_index))
            track_index += 1
        pos = body + clen

    if not per_track:
        raise ParseError("no track chunks", 14)

    drum_notes = [n for trk in per_track for n in trk[0] if n[1] == _DRUM_CHANNEL]
    if not drum_notes:
        for trk in per_track:
            if trk[0] and all(n[2] in _PERCUSSION_RANGE for n in trk[0]):
                drum_notes.extend(trk[0])
    if not drum_notes:
        raise EmptyTrackError("file contains no drum note events")

    # stable sort: file order breaks ties at equal ticks
    tempos = sorted((t for trk in per_track for t in trk[1]), key=lambda e: e[:2])
    meters = sorted((m for trk in per_track for m in trk[2]), key=lambda e: e[:2])
    bpm = 60_000_000 / tempos[0][2] if tempos else 120.0
    meter = (meters[0][2], meters[0][3]) if meters else (4, 4)
    events = tuple(sorted((t, p, v) for t, _, p, v in drum_notes))
    length = max(max(trk[3] for trk in per_track), events[-1][0])
    return MidiDrumTrack(
        resolution=division,
        bpm=bpm,
        time_signature=meter,
        length_ticks=length,
        events=events,
    )


# --------------------------------------------------------------------------
# quantization


def check_pianoroll(roll: np.ndarray) -> np.ndarray:
    roll = np.asarray(roll)
    if roll.shape != (N_SLICES, N_CHANNELS):
        raise ShapeError(f"pianoroll must be {N_SLICES}x{N_CHANNELS}, got {roll.shape}")
    if not np.all(np.isfinite(roll)) or roll.min() < 0.0 or roll.max() > 1.0:
        raise ValueError("pianoroll values must lie in [0, 1]")
    return roll


def tile_to_four_bars(partial: np.ndarray) -> np.ndarray:
    """Repeat an L-slice prefix until it fills all 128 slices."""
    partial = np.asarray(partial, dtype=np.float32)
    if partial.ndim != 2 or partial.shape[1] != N_CHANNELS:
        raise ShapeError(f"expected (L, {N_CHANNELS}) prefix, got {partial.shape}")
    n = partial.shape[0]
    if n == 0:
        raise EmptyTrackError("cannot tile an empty loop")
    if n > N_SLICES:
        raise ShapeError(f"prefix longer than {N_SLICES} slices")
    return partial[np.arange(N_SLICES) % n].copy()


def quantize(track: MidiDrumTrack, mapping=GM_DRUM_MAP) -> np.ndarray:
    num, den = track.time_signature
    if den != 4 or num not in (2, 3, 4):
        raise UnsupportedMeterError(f"unsupported time signature {num}/{den}")
    res = track.resolution
    slices_per_bar = SLICES_PER_QUARTER * num
    ticks_per_bar = res * num
    n_bars = max(1, math.ceil(track.length_ticks / ticks_per_bar))
    # whole bars only, at most four
    length = min(n_bars, 4) * slices_per_bar

    grid = np.zeros((length, N_CHANNELS), dtype=np.float32)
    hit = False
    for tick, pitch, vel in track.events:
        ch = mapping[pitch]
        if ch is None:
            continue
        scaled = tick * SLICES_PER_QUARTER
        if scaled >= length * res:
            continue  # beyond the window: truncated
        idx = min((2 * scaled + res) // (2 * res), length - 1)
        grid[idx, ch] = max(grid[idx, ch], np.float32(vel / 127.0))
        hit = True
    if not hit:
        raise EmptyTrackError("no events map to a drum channel inside the window")
    return tile_to_four_bars(grid)


def binarize(roll: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return (np.asarray(roll) >= threshold).astype(np.uint8)


# --------------------------------------------------------------------------
# SMF encoding


def _varlen(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def write_smf(
    notes,
    *,
    bpm: float,
    resolution: int = EXPORT_RESOLUTION,
    time_signature: tuple[int, int] = (4, 4),
    length_ticks: int | None = None,
    channel: int = _DRUM_CHANNEL,
    note_ticks: int | None = None,
) -> bytes:
    """Write a format-0 SMF from (tick, pitch, velocity) onsets.

    Each onset gets a note-off `note_ticks` later (default: one 32nd note).
    """
    if note_ticks is None:
        note_ticks = resolution // SLICES_PER_QUARTER
    num, den = time_signature
    uspq = max(1, min(0xFFFFFF, round(60_000_000 / bpm)))
    messages = []  # (tick, order, bytes)
    for tick, pitch, vel in notes:
        messages.append((tick + note_ticks, 0, pitch, bytes([0x80 | channel, pitch, 0])))
        messages.append((tick, 1, pitch, bytes([0x90 | channel, pitch, vel])))
    messages.sort(key=lambda m: (m[0], m[1], m[2]))
    end = max([length_ticks or 0] + [m[0] for m in messages])

    body = bytearray()
    body += b"\x00\xff\x51\x03" + uspq.to_bytes(3, "big")
    body += b"\x00\xff\x58\x04" + bytes([num, den.bit_length() - 1, 24, 8])
    now = 0
    for tick, _, _, msg in messages:
        body += _varlen(tick - now) + msg
        now = tick
    body += _varlen(end - now) + b"\xff\x2f\x00"

    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, resolution)
    return header + b"MTrk" + struct.pack(">I", len(body)) + bytes(body)


def pianoroll_to_midi(roll: np.ndarray, bpm: float = 120.0) -> bytes:
    roll = check_pianoroll(roll)
    if not bpm > 0:
        raise ValueError("bpm must be positive")
    step = EXPORT_RESOLUTION // SLICES_PER_QUARTER
    notes = []
    for i, j in zip(*np.nonzero(roll)):
        vel = max(1, min(127, round(float(roll[i, j]) * 127)))
        notes.append((int(i) * step, CANONICAL_PITCHES[j], vel))
    return write_smf(notes, bpm=bpm, length_ticks=N_SLICES * step)
