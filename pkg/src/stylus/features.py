"""Melodic n-gram and chord-voicing extraction, vocabulary and TF-IDF."""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .corpus import Transcription

log = logging.getLogger("stylus")

GRID_SECONDS = 0.1
NGRAM_SIZES = (3, 4, 5, 6, 7)
VOICING_SIZES = (3, 4, 5, 6, 7)
MAX_NGRAM_SPAN = 12      # semitones
MAX_MELODY_GAP = 2.0     # seconds between successive offset and onset
MAX_VOICING_LEAP = 15    # adjacent-pitch gap in semitones
MIN_DF = 10
MAX_DF = 1000

KIND_MELODY = "melody"
KIND_HARMONY = "harmony"


@dataclass(frozen=True)
class QuantisedFrame:
    time: float
    notes: tuple  # NoteEvents sharing this quantised onset, pitch ascending


@dataclass(frozen=True)
class MelodyNote:
    pitch: int
    raw_onset: float
    raw_offset: float


def _frame_index(onset: float, grid: float) -> int:
    # integer milliseconds avoid float artefacts; ties round away from zero
    ms = int(round(onset * 1000))
    grid_ms = int(round(grid * 1000))
    return (ms + grid_ms // 2) // grid_ms


def quantise(t: Transcription, grid: float = GRID_SECONDS):
    """Group notes into frames by snapping onsets to the nearest grid point."""
    if grid <= 0:
        raise ValueError("grid must be positive")
    frames: dict[int, list] = {}
    for n in t.notes:
        frames.setdefault(_frame_index(n.onset, grid), []).append(n)
    return [QuantisedFrame(time=idx * grid,
                           notes=tuple(sorted(ns, key=lambda n: n.pitch)))
            for idx, ns in sorted(frames.items())]


def skyline(frames) -> list[MelodyNote]:
    """One melody note per frame: the highest pitch, raw times preserved."""
    melody = []
    for frame in frames:
        top = max(frame.notes, key=lambda n: n.pitch)
        melody.append(MelodyNote(pitch=top.pitch, raw_onset=top.onset,
                                 raw_offset=top.offset))
    return melody


def extract_ngrams(melody, n_values=NGRAM_SIZES) -> Counter:
    """Count transposition-invariant n-grams over the melody.

    Windows spanning more than 12 semitones, or containing a silence longer
    than 2 s between successive notes (pre-quantisation times), are skipped.
    """
    counts: Counter = Counter()
    for n in n_values:
        for i in range(len(melody) - n + 1):
            window = melody[i:i + n]
            pitches = [m.pitch for m in window]
            if max(pitches) - min(pitches) > MAX_NGRAM_SPAN:
                continue
            if any(window[j + 1].raw_onset - window[j].raw_offset
                   > MAX_MELODY_GAP for j in range(n - 1)):
                continue
            counts[tuple(p - pitches[0] for p in pitches)] += 1
    return counts


def extract_voicings(frames, n_values=VOICING_SIZES) -> Counter:
    """Count chord voicings as semitone offsets above the lowest note.

    Frame size counts distinct pitches; frames with two or more adjacent
    gaps above 15 semitones are discarded as transcription errors.
    """
    sizes = set(n_values)
    counts: Counter = Counter()
    for frame in frames:
        pitches = sorted({n.pitch for n in frame.notes})
        if len(pitches) not in sizes:
            continue
        gaps = [b - a for a, b in zip(pitches, pitches[1:])]
        if sum(g > MAX_VOICING_LEAP for g in gaps) >= 2:
            continue
        counts[tuple(p - pitches[0] for p in pitches)] += 1
    return counts


def extract_recording(t: Transcription, grid: float = GRID_SECONDS,
                      n_values=NGRAM_SIZES) -> dict:
    """Per-recording feature counts keyed by (kind, feature tuple)."""
    frames = quantise(t, grid)
    melody = skyline(frames)
    out = {}
    for feat, c in extract_ngrams(melody, n_values).items():
        out[(KIND_MELODY, feat)] = c
    for feat, c in extract_voicings(frames, n_values).items():
        out[(KIND_HARMONY, feat)] = c
    return out


@dataclass(frozen=True)
class FeatureVocabulary:
    features: tuple          # (kind, feature tuple), index position = column
    document_frequency: tuple

    def __len__(self):
        return len(self.features)

    @property
    def index(self) -> dict:
        return {f: i for i, f in enumerate(self.features)}

    def columns_of_kind(self, kind: str) -> np.ndarray:
        return np.array([i for i, (k, _) in enumerate(self.features)
                         if k == kind], dtype=int)


def build_vocabulary(per_recording_counts, min_df: int = MIN_DF,
                     max_df: int = MAX_DF) -> FeatureVocabulary:
    """Retain features whose document frequency lies in [min_df, max_df].

    Ordering is melody features first, then harmony, each lexicographic.
    """
    df: Counter = Counter()
    for counts in per_recording_counts:
        df.update(set(counts))
    kept = sorted((f for f, d in df.items() if min_df <= d <= max_df),
                  key=lambda f: (f[0] != KIND_MELODY, f[1]))
    if not kept:
        log.warning("vocabulary is empty after document-frequency pruning")
    return FeatureVocabulary(features=tuple(kept),
                             document_frequency=tuple(df[f] for f in kept))


def count_matrix(per_recording_counts, vocab: FeatureVocabulary) -> np.ndarray:
    index = vocab.index
    X = np.zeros((len(per_recording_counts), len(vocab)))
    for i, counts in enumerate(per_recording_counts):
        for feat, c in counts.items():
            j = index.get(feat)
            if j is not None:
                X[i, j] = c
    return X


def tfidf(counts: np.ndarray, document_frequency=None) -> np.ndarray:
    """tf * (ln((1+N)/(1+df)) + 1), rows L2-normalised (zero rows kept)."""
    counts = np.asarray(counts, dtype=float)
    n_docs = counts.shape[0]
    if document_frequency is None:
        df = (counts > 0).sum(axis=0)
    else:
        df = np.asarray(document_frequency, dtype=float)
    idf = np.log((1.0 + n_docs) / (1.0 + df)) + 1.0
    X = counts * idf
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return X / norms


def feature_string(feat: tuple) -> str:
    return ",".join(str(v) for v in feat)


def parse_feature_string(s: str) -> tuple:
    return tuple(int(v) for v in s.split(","))


def write_feature_counts(path, recording_ids, per_recording_counts) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["recording_id", "feature_kind", "feature_string",
                         "count"])
        for rid, counts in zip(recording_ids, per_recording_counts):
            if not counts:
                # presence row so featureless recordings survive a re-read
                writer.writerow([rid, "", "", 0])
            for (kind, feat), c in sorted(counts.items()):
                writer.writerow([rid, kind, feature_string(feat), c])


def read_feature_counts(path):
    """Return (recording_ids, per-recording count dicts) from a feature dump."""
    order: list[str] = []
    by_rid: dict[str, dict] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rid = row["recording_id"]
            if rid not in by_rid:
                order.append(rid)
                by_rid[rid] = {}
            if not row["feature_kind"]:
                continue
            key = (row["feature_kind"],
                   parse_feature_string(row["feature_string"]))
            by_rid[rid][key] = int(row["count"])
    return order, [by_rid[r] for r in order]


def write_vocabulary(path, vocab: FeatureVocabulary) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "kind", "feature_string",
                         "document_frequency"])
        for i, ((kind, feat), df) in enumerate(
                zip(vocab.features, vocab.document_frequency)):
            writer.writerow([i, kind, feature_string(feat), df])


def read_vocabulary(path) -> FeatureVocabulary:
    feats, dfs = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            feats.append((row["kind"],
                          parse_feature_string(row["feature_string"])))
            dfs.append(int(row["document_frequency"]))
    return FeatureVocabulary(features=tuple(feats),
                             document_frequency=tuple(dfs))
