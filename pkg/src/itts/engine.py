"""Incremental synthesis loop: observe N words, condition, synthesize, emit.

Per step t the engine builds the context for the requested condition,
synthesizes the current segment's mel, vocodes it, and appends the audio.
The vocoder is a fixed cosine bank applied frame-locally (each mel frame maps
to one 64-sample hop), so vocoding distributes exactly over concatenation
and is linearly invertible per frame.

Latency is accounted in source words that had to be observed before the
segment could be synthesized, plus wall-clock compute time. A read guard
records every source-word access so causality is checkable.
"""

from __future__ import annotations

import csv
import struct
import time
import wave
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .acoustic import ContextualAcousticModel
from .base import require
from .corpus import Lexicon
from .lm import GenerationConfig, generate_lookahead

SAMPLE_RATE = 8000
HOP_SAMPLES = 64
WAV_SCALE = 512.0


class ConditionKind(str, Enum):
    INDEPENDENT = "independent"
    UNICONTEXT = "unicontext"
    BICONTEXT = "bicontext"
    BICONTEXT_TRUTH = "bicontext_truth"


@dataclass(frozen=True)
class Condition:
    kind: ConditionKind
    fine_tuned: bool = False

    @classmethod
    def parse(cls, text: str) -> "Condition":
        text = text.strip().lower().replace("-", "_")
        fine_tuned = False
        for suffix in ("_fine_tuned", "_ft"):
            if text.endswith(suffix):
                text = text[:-len(suffix)]
                fine_tuned = True
        return cls(ConditionKind(text), fine_tuned)

    def label(self) -> str:
        return self.kind.value + ("_ft" if self.fine_tuned else "")


@dataclass
class LatencyRecord:
    step: int
    words_required: int
    compute_ms: float


@dataclass
class StreamState:
    observed: list[int] = field(default_factory=list)
    mels: list[np.ndarray] = field(default_factory=list)
    chunks: list[np.ndarray] = field(default_factory=list)
    records: list[LatencyRecord] = field(default_factory=list)
    truncated_steps: list[int] = field(default_factory=list)

    @property
    def step_count(self) -> int:
        return len(self.records)

    @property
    def waveform(self) -> np.ndarray:
        if not self.chunks:
            return np.zeros(0)
        return np.concatenate(self.chunks)


@dataclass
class StreamResult:
    waveform: np.ndarray
    mels: list[np.ndarray]
    records: list[LatencyRecord]
    truncated_steps: list[int]
    max_word_read: list[int]  # per step, highest source index read (1-based count)


@dataclass
class EngineModels:
    acoustic: ContextualAcousticModel
    lm: object
    lexicon: Lexicon


class _GuardedSource:
    """Word source that records the highest index read per step."""

    def __init__(self, words):
        self._words = list(words)
        self.high_water = 0

    def __len__(self) -> int:
        return len(self._words)

    def read(self, start: int, stop: int) -> list[int]:
        stop = min(stop, len(self._words))
        self.high_water = max(self.high_water, stop)
        return self._words[start:stop]


def cosine_bank(channels: int = 16, hop: int = HOP_SAMPLES) -> np.ndarray:
    """(channels, hop) cosine rows; distinct sub-Nyquist frequencies per channel."""
    n = np.arange(hop)
    rows = [np.cos(np.pi * (c + 1) * n / hop) for c in range(channels)]
    return np.asarray(rows)


_BANK_CACHE: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def _bank_and_pinv(channels: int) -> tuple[np.ndarray, np.ndarray]:
    key = (channels, HOP_SAMPLES)
    if key not in _BANK_CACHE:
        bank = cosine_bank(channels)
        _BANK_CACHE[key] = (bank, np.linalg.pinv(bank))
    return _BANK_CACHE[key]


def vocode(mel: np.ndarray) -> np.ndarray:
    """Frame-local synthesis: each mel frame emits one hop of samples."""
    mel = np.asarray(mel, dtype=np.float64)
    require(mel.ndim == 2, "mel must be 2-D")
    require(bool(np.all(np.isfinite(mel))), "mel contains non-finite values")
    bank, _ = _bank_and_pinv(mel.shape[1])
    return (mel @ bank).reshape(-1)


def invert_vocoder(waveform: np.ndarray, channels: int = 16) -> np.ndarray:
    """Exact frame-wise inversion of `vocode` (least-squares per frame)."""
    waveform = np.asarray(waveform, dtype=np.float64)
    require(waveform.size % HOP_SAMPLES == 0,
            f"waveform length must be a multiple of {HOP_SAMPLES}")
    _, pinv = _bank_and_pinv(channels)
    return waveform.reshape(-1, HOP_SAMPLES) @ pinv


def step(state: StreamState, segment: list[int], condition: Condition,
         models: EngineModels, cfg: GenerationConfig,
         rng: np.random.Generator, true_future: list[int] | None = None,
         lookahead_observed: int = 0):
    """Synthesize one segment and append it to the stream state.

    `true_future` must be supplied (by the harness) only for the
    truth-lookahead condition; `lookahead_observed` is the number of extra
    source words that observation required.
    """
    require(len(segment) > 0, "segment must be non-empty")
    lex = models.lexicon
    past_words = list(state.observed)
    observed = past_words + list(segment)

    t_start = time.perf_counter()
    if condition.kind is ConditionKind.INDEPENDENT:
        past, future = [], []
    elif condition.kind is ConditionKind.UNICONTEXT:
        past, future = past_words, []
    elif condition.kind is ConditionKind.BICONTEXT:
        past = past_words
        future = generate_lookahead(models.lm, observed, cfg, rng)
    else:
        require(true_future is not None,
                "truth condition needs the harness to supply the lookahead")
        past, future = past_words, list(true_future)

    acoustic = models.acoustic
    context = acoustic.context_embedding(
        lex.phonemes_of_words(past) if past else [],
        lex.phonemes_of_words(future) if future else [])
    result = acoustic.synthesize_segment(
        lex.phonemes_of_words(segment), context,
        max_frames=acoustic.max_frames_per_word * len(segment))
    chunk = vocode(result.mel)
    compute_ms = (time.perf_counter() - t_start) * 1e3

    state.observed.extend(segment)
    state.mels.append(result.mel)
    state.chunks.append(chunk)
    t = state.step_count + 1
    words_required = len(state.observed) + lookahead_observed
    record = LatencyRecord(t, words_required, compute_ms)
    state.records.append(record)
    if result.truncated:
        state.truncated_steps.append(t)
    return result.mel, chunk, record


def run_stream(sentence_words, condition: Condition, models: EngineModels,
               cfg: GenerationConfig, rng: np.random.Generator) -> StreamResult:
    """Drive `step` over consecutive N-word segments of a sentence."""
    require(len(sentence_words) > 0, "empty sentence")
    source = _GuardedSource(sentence_words)
    state = StreamState()
    n = cfg.segment_words
    max_reads = []
    for start in range(0, len(source), n):
        segment = source.read(start, start + n)
        true_future = None
        lookahead_observed = 0
        if condition.kind is ConditionKind.BICONTEXT_TRUTH:
            end = start + n
            true_future = source.read(end, end + cfg.lookahead_words)
            lookahead_observed = len(true_future)
        step(state, segment, condition, models, cfg, rng,
             true_future=true_future, lookahead_observed=lookahead_observed)
        max_reads.append(source.high_water)
    return StreamResult(state.waveform, state.mels, state.records,
                        state.truncated_steps, max_reads)


# ---------------------------------------------------------------------------
# file output


def write_wav(path, waveform: np.ndarray) -> None:
    """PCM 16-bit mono at the engine sample rate, fixed scale."""
    samples = np.clip(np.round(np.asarray(waveform) * WAV_SCALE),
                      -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(SAMPLE_RATE)
        fh.writeframes(samples.tobytes())


def read_wav(path) -> np.ndarray:
    with wave.open(str(path), "rb") as fh:
        require(fh.getnchannels() == 1 and fh.getsampwidth() == 2,
                "expected PCM 16-bit mono")
        raw = fh.readframes(fh.getnframes())
    count = len(raw) // 2
    values = struct.unpack(f"<{count}h", raw)
    return np.asarray(values, dtype=np.float64) / WAV_SCALE


def write_latency_csv(path, records: list[LatencyRecord]) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "words_required", "compute_ms"])
        for r in records:
            writer.writerow([r.step, r.words_required, f"{r.compute_ms:.3f}"])
