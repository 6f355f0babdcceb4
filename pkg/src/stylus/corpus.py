"""Note-event ingestion, splits, clip segmentation and piano rolls."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .rng import derive_rng

PITCH_MIN = 21
PITCH_MAX = 108
VELOCITY_MIN = 1
VELOCITY_MAX = 127

ROLL_HEIGHT = 88
ROLL_WIDTH = 3000
FRAME_MS = 10  # one roll column per 10 ms (100 fps)
CLIP_SECONDS = 30.0

ROLL_MAGIC = b"PROL"

DATASET_TAGS = ("solo", "trio")
SPLITS = ("train", "validation", "test")


class ValidationError(ValueError):
    """Input violates a domain invariant."""


class ParseError(ValueError):
    """Input file is malformed."""


@dataclass(frozen=True, order=True)
class NoteEvent:
    onset: float
    pitch: int
    offset: float
    velocity: int

    def __post_init__(self):
        if not self.offset > self.onset:
            raise ValidationError(
                f"offset {self.offset} must exceed onset {self.onset}")
        if self.onset < 0:
            raise ValidationError(f"onset {self.onset} is negative")
        if not PITCH_MIN <= self.pitch <= PITCH_MAX:
            raise ValidationError(
                f"pitch {self.pitch} outside [{PITCH_MIN}, {PITCH_MAX}]")
        if not VELOCITY_MIN <= self.velocity <= VELOCITY_MAX:
            raise ValidationError(
                f"velocity {self.velocity} outside "
                f"[{VELOCITY_MIN}, {VELOCITY_MAX}]")


def _sort_notes(notes):
    return tuple(sorted(notes, key=lambda n: (n.onset, n.pitch)))


@dataclass(frozen=True)
class Transcription:
    recording_id: str
    performer: str
    dataset_tag: str
    notes: tuple = ()

    def __post_init__(self):
        if self.dataset_tag not in DATASET_TAGS:
            raise ValidationError(f"unknown dataset_tag {self.dataset_tag!r}")
        if not self.notes:
            raise ValidationError(f"{self.recording_id}: no notes")
        object.__setattr__(self, "notes", _sort_notes(self.notes))

    @property
    def duration(self) -> float:
        return max(n.offset for n in self.notes)


@dataclass(frozen=True)
class Clip:
    parent_id: str
    performer: str
    start: float
    notes: tuple = ()
    duration: float = CLIP_SECONDS

    def __post_init__(self):
        object.__setattr__(self, "notes", _sort_notes(self.notes))
        for n in self.notes:
            if not 0 <= n.onset < CLIP_SECONDS:
                raise ValidationError(
                    f"{self.parent_id}: clip note onset {n.onset} "
                    f"outside [0, {CLIP_SECONDS})")


@dataclass(frozen=True)
class ManifestEntry:
    recording_id: str
    performer: str
    dataset_tag: str
    path: str


def parse_note_events(path, recording_id: str = "", performer: str = "",
                      dataset_tag: str = "solo") -> Transcription:
    """Read a JSONL note-event file into a Transcription.

    Each line holds one object: {"onset", "offset", "pitch", "velocity"}.
    """
    path = Path(path)
    notes = []
    bad = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                onset = float(obj["onset"])
                offset = float(obj["offset"])
                pitch = int(obj["pitch"])
                velocity = int(obj["velocity"])
            except (json.JSONDecodeError, KeyError, TypeError,
                    ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: malformed note: {exc}")
            try:
                notes.append(NoteEvent(onset=onset, offset=offset,
                                       pitch=pitch, velocity=velocity))
            except ValidationError as exc:
                bad.append(f"line {lineno}: {exc}")
    if bad:
        raise ValidationError(f"{path}: invalid notes: " + "; ".join(bad))
    return Transcription(recording_id=recording_id or path.stem,
                         performer=performer, dataset_tag=dataset_tag,
                         notes=tuple(notes))


def write_note_events(path, notes) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for n in notes:
            fh.write(json.dumps({"onset": n.onset, "offset": n.offset,
                                 "pitch": n.pitch, "velocity": n.velocity})
                     + "\n")


def read_manifest(path) -> list[ManifestEntry]:
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"recording_id", "performer", "dataset_tag", "path"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ParseError(f"{path}: manifest header must contain "
                             f"{sorted(required)}")
        for row in reader:
            if row["dataset_tag"] not in DATASET_TAGS:
                raise ValidationError(
                    f"{path}: unknown dataset_tag {row['dataset_tag']!r} "
                    f"for {row['recording_id']}")
            entries.append(ManifestEntry(row["recording_id"],
                                         row["performer"],
                                         row["dataset_tag"], row["path"]))
    if not entries:
        raise ValidationError(f"{path}: empty manifest")
    return entries


def assign_splits(manifest, seed: int) -> dict[str, str]:
    """Assign train/validation/test per recording, stratified by dataset_tag.

    Per stratum of size n: test and validation each get floor(n/10)
    recordings (minimum 1 when n >= 3), the remainder goes to train.
    """
    if not manifest:
        raise ValidationError("empty manifest")
    assignment: dict[str, str] = {}
    for tag in DATASET_TAGS:
        ids = sorted(e.recording_id for e in manifest if e.dataset_tag == tag)
        if not ids:
            continue
        rng = derive_rng(seed, "split", tag)
        order = list(rng.permutation(len(ids)))
        n = len(ids)
        n_held = n // 10
        if n_held == 0 and n >= 3:
            n_held = 1
        for rank, idx in enumerate(order):
            if rank < n_held:
                split = "test"
            elif rank < 2 * n_held:
                split = "validation"
            else:
                split = "train"
            assignment[ids[idx]] = split
    return assignment


def write_splits(path, assignment: dict[str, str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["recording_id", "split"])
        for rid in sorted(assignment):
            writer.writerow([rid, assignment[rid]])


def read_splits(path) -> dict[str, str]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["split"] not in SPLITS:
                raise ValidationError(f"{path}: unknown split {row['split']!r}")
            out[row["recording_id"]] = row["split"]
    return out


def segment_clips(t: Transcription, hop: float = CLIP_SECONDS) -> list[Clip]:
    """Cut a recording into 30 s clips starting every ``hop`` seconds.

    A note belongs to the clip whose window contains its onset; its times
    are re-based to the clip start. Window starts continue until one window
    covers the end of the recording; a final partial window is kept.
    """
    if not 15.0 <= hop <= CLIP_SECONDS:
        raise ValidationError(f"hop {hop} outside [15, 30]")
    duration = t.duration
    starts = [0.0]
    k = 1
    while starts[-1] + CLIP_SECONDS < duration:
        starts.append(k * hop)
        k += 1
    clips = []
    for start in starts:
        end = start + CLIP_SECONDS
        members = [replace(n, onset=n.onset - start, offset=n.offset - start)
                   for n in t.notes if start <= n.onset < end]
        clips.append(Clip(parent_id=t.recording_id, performer=t.performer,
                          start=start, notes=tuple(members)))
    return clips


def time_to_column(seconds: float) -> int:
    # round to integer milliseconds first so values such as 29.9 land on
    # the intended column despite binary float representation
    return int(round(seconds * 1000)) // FRAME_MS


def paint_roll(notes, max_velocity: int | None = None) -> np.ndarray:
    """Paint notes into an 88x3000 roll with velocity / max-velocity values.

    ``max_velocity`` overrides the normalisation ceiling; by default the
    largest velocity among the painted notes is used.
    """
    roll = np.zeros((ROLL_HEIGHT, ROLL_WIDTH), dtype=np.float32)
    notes = [n for n in notes if n.onset < CLIP_SECONDS]
    if not notes:
        return roll
    if max_velocity is None:
        max_velocity = max(n.velocity for n in notes)
    for n in notes:
        row = n.pitch - PITCH_MIN
        c0 = time_to_column(n.onset)
        c1 = time_to_column(min(n.offset, CLIP_SECONDS))
        c1 = max(c1, c0 + 1)  # a valid note always paints >= 1 column
        c0 = min(c0, ROLL_WIDTH - 1)
        c1 = min(c1, ROLL_WIDTH)
        value = n.velocity / max_velocity
        roll[row, c0:c1] = np.maximum(roll[row, c0:c1], value)
    return roll


def to_piano_roll(c: Clip) -> np.ndarray:
    return paint_roll(c.notes)


def write_roll(path, roll: np.ndarray) -> None:
    roll = np.asarray(roll, dtype="<f4")
    if roll.ndim != 2:
        raise ValidationError("roll must be 2-D")
    with open(path, "wb") as fh:
        fh.write(ROLL_MAGIC)
        fh.write(struct.pack("<III", roll.shape[0], roll.shape[1], 0))
        fh.write(roll.tobytes(order="C"))


def read_roll(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != ROLL_MAGIC:
            raise ParseError(f"{path}: bad roll header")
        height, width, _ = struct.unpack("<III", header[4:])
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != height * width:
        raise ParseError(f"{path}: truncated roll payload")
    return data.reshape(height, width)
