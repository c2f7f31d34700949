"""Deterministic synthetic speech corpus with exact alignments.

Sentences come from a seeded order-2 Markov word process so a language model
has learnable structure. Every phoneme owns a fixed mel template (3-6 frames);
three contextual modulations make correct synthesis of a segment depend on
both past position and future content:

  (a) the pitch-proxy channel (0) declines linearly with absolute word
      position across the sentence,
  (b) the final word's frame block is lengthened by a factor of 1.5
      (rounded up, nearest-neighbor resampling),
  (c) each word's energy channel (1) is shifted by a fixed per-word-identity
      amount determined by the *next* word (zero for the sentence-final word).

Template identity lives on channels 2 and up as sign patterns with pairwise
Hamming distance >= 3, so every ground-truth frame stays strictly nearest to
its own template frame under the modulations above. That makes the oracle
decoder exact on ground-truth audio while model prediction errors remain
visible.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .base import require
from .lm import START_ID, Vocabulary

PITCH_CHANNEL = 0
ENERGY_CHANNEL = 1
IDENTITY_CHANNEL_START = 2

_PITCH_BASE = 1.5
_PITCH_STEP = 0.12
_ENERGY_RANGE = 2.5
_PATTERN_SCALE = 1.8
_MIN_HAMMING = 3
_LENGTHEN = 1.5
_END_PROB = 0.9
_TERMINAL_FRACTION = 0.2

_SYLLABLES = [c + v for c in "ktsnmh" for v in "aiueo"]


class CorpusError(RuntimeError):
    pass


@dataclass(frozen=True)
class Lexicon:
    """word id -> phoneme id sequence, plus printable phoneme names."""

    entries: tuple[tuple[int, ...], ...]  # indexed by word id (reserved ids empty)
    phoneme_names: tuple[str, ...]

    @property
    def n_phonemes(self) -> int:
        return len(self.phoneme_names)

    def phonemes_of_word(self, word_id: int) -> tuple[int, ...]:
        entry = self.entries[word_id]
        if not entry:
            raise CorpusError(f"word id {word_id} has no lexicon entry")
        return entry

    def phonemes_of_words(self, word_ids) -> list[int]:
        out: list[int] = []
        for w in word_ids:
            out.extend(self.phonemes_of_word(int(w)))
        return out


@dataclass(frozen=True)
class Sentence:
    words: tuple[int, ...]
    word_phonemes: tuple[tuple[int, ...], ...]

    @classmethod
    def from_words(cls, words, lexicon: Lexicon) -> "Sentence":
        words = tuple(int(w) for w in words)
        return cls(words, tuple(lexicon.phonemes_of_word(w) for w in words))

    @property
    def phonemes(self) -> list[int]:
        return [p for entry in self.word_phonemes for p in entry]

    def __len__(self) -> int:
        return len(self.words)


@dataclass(frozen=True)
class AlignedUtterance:
    sentence: Sentence
    mel: np.ndarray  # (frames, channels)
    spans: tuple[tuple[int, int], ...]  # per-word (start, end), end exclusive

    @property
    def n_frames(self) -> int:
        return self.mel.shape[0]


@dataclass
class WindowSample:
    """One sliding-window training sample around a current segment."""

    past: tuple[int, ...]
    current: tuple[int, ...]
    future: tuple[int, ...]
    target_mel: np.ndarray
    stop_targets: np.ndarray
    segment_index: int
    pseudo_future: tuple[int, ...] | None = None


@dataclass(frozen=True)
class CorpusParams:
    n_sentences: int = 200
    vocab_size: int = 40
    n_phonemes: int = 12
    mel_channels: int = 16
    min_words: int = 4
    max_words: int = 12
    seed: int = 0


@dataclass
class SyntheticCorpus:
    params: CorpusParams
    vocab: Vocabulary
    lexicon: Lexicon
    templates: list[np.ndarray]  # per phoneme, (frames, channels)
    energy_shift: np.ndarray  # per word id, shift applied by the *next* word
    utterances: list[AlignedUtterance] = field(default_factory=list)

    @property
    def mel_channels(self) -> int:
        return self.params.mel_channels

    def codebook(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All template frames stacked: (frames, channels), phoneme ids, frame idx."""
        frames = np.concatenate(self.templates, axis=0)
        phonemes = np.concatenate(
            [np.full(t.shape[0], p) for p, t in enumerate(self.templates)])
        indices = np.concatenate(
            [np.arange(t.shape[0]) for t in self.templates])
        return frames, phonemes.astype(np.intp), indices.astype(np.intp)


def _build_inventory(params: CorpusParams):
    """Vocabulary, lexicon, templates, and energy table for a seed.

    Factored out so loading a corpus from disk can reconstruct the exact
    template inventory from the parameters alone.
    """
    require(params.vocab_size >= 10, "vocab_size must be >= 10")
    require(params.n_phonemes >= 4, "need at least 4 phonemes")
    require(params.n_phonemes <= len(_SYLLABLES), "too many phonemes for syllable grid")
    require(params.mel_channels >= 8, "need at least 8 mel channels")
    rng = np.random.default_rng(np.random.SeedSequence([params.seed, 0xC0]))

    phoneme_names = tuple(_SYLLABLES[:params.n_phonemes])

    # pronunciations: 1-4 phonemes, no immediate repeats, unique word strings
    pronunciations: list[tuple[int, ...]] = []
    seen_strings: set[str] = set()
    while len(pronunciations) < params.vocab_size:
        length = int(rng.integers(1, 5))
        phones: list[int] = []
        for _ in range(length):
            p = int(rng.integers(0, params.n_phonemes))
            while phones and p == phones[-1]:
                p = int(rng.integers(0, params.n_phonemes))
            phones.append(p)
        word = "".join(phoneme_names[p] for p in phones)
        if word in seen_strings:
            continue
        seen_strings.add(word)
        pronunciations.append(tuple(phones))

    words = ["".join(phoneme_names[p] for p in pron) for pron in pronunciations]
    vocab = Vocabulary(sorted(words))
    # entries indexed by word id; reserved ids keep empty tuples
    by_word = dict(zip(words, pronunciations))
    entries: list[tuple[int, ...]] = [()] * len(vocab)
    for word_id in vocab.word_ids:
        entries[word_id] = by_word[vocab.word_of(word_id)]
    lexicon = Lexicon(tuple(entries), phoneme_names)

    # identity sign patterns with pairwise Hamming distance >= _MIN_HAMMING
    n_identity = params.mel_channels - IDENTITY_CHANNEL_START
    accepted: list[np.ndarray] = []
    templates: list[np.ndarray] = []
    for _ in range(params.n_phonemes):
        n_frames = int(rng.integers(3, 7))
        frames = np.zeros((n_frames, params.mel_channels))
        for f in range(n_frames):
            while True:
                pattern = rng.choice([-1.0, 1.0], size=n_identity)
                if all(int(np.sum(pattern != prev)) >= _MIN_HAMMING
                       for prev in accepted):
                    break
            accepted.append(pattern)
            frames[f, IDENTITY_CHANNEL_START:] = _PATTERN_SCALE * pattern
        templates.append(frames)

    energy_shift = np.zeros(len(vocab))
    energy_shift[list(vocab.word_ids)] = rng.uniform(
        -_ENERGY_RANGE, _ENERGY_RANGE, size=params.vocab_size)
    return vocab, lexicon, templates, energy_shift


def pitch_offset(word_position: int) -> float:
    return _PITCH_BASE - _PITCH_STEP * word_position


def lengthen_frames(block: np.ndarray) -> np.ndarray:
    """Nearest-neighbor lengthening by 1.5x (rounded up frame count)."""
    n = block.shape[0]
    m = math.ceil(_LENGTHEN * n)
    idx = (np.arange(m) * n) // m
    return block[idx]


def _render_utterance(words, lexicon: Lexicon, templates, energy_shift) -> AlignedUtterance:
    sentence = Sentence.from_words(words, lexicon)
    blocks: list[np.ndarray] = []
    spans: list[tuple[int, int]] = []
    cursor = 0
    last = len(sentence.words) - 1
    for pos, word in enumerate(sentence.words):
        block = np.concatenate(
            [templates[p] for p in lexicon.phonemes_of_word(word)], axis=0)
        if pos == last:
            block = lengthen_frames(block)
        else:
            block = block.copy()
        block[:, PITCH_CHANNEL] += pitch_offset(pos)
        if pos != last:
            block[:, ENERGY_CHANNEL] += energy_shift[sentence.words[pos + 1]]
        blocks.append(block)
        spans.append((cursor, cursor + block.shape[0]))
        cursor += block.shape[0]
    return AlignedUtterance(sentence, np.concatenate(blocks, axis=0), tuple(spans))


def _assert_context_sensitivity(utterances) -> None:
    """Some word must appear twice with bitwise-different mel slices."""
    seen: dict[int, np.ndarray] = {}
    for utt in utterances:
        for word, (start, end) in zip(utt.sentence.words, utt.spans):
            piece = utt.mel[start:end]
            if word in seen:
                other = seen[word]
                if other.shape != piece.shape or not np.array_equal(other, piece):
                    return
            else:
                seen[word] = piece
    raise CorpusError("corpus lacks a context-sensitivity witness")


def synth_corpus(n_sentences: int = 200, vocab_size: int = 40,
                 n_phonemes: int = 12, mel_channels: int = 16,
                 seed: int = 0, min_words: int = 4,
                 max_words: int = 12) -> SyntheticCorpus:
    """Generate a corpus of aligned utterances, deterministic given the seed."""
    params = CorpusParams(n_sentences, vocab_size, n_phonemes, mel_channels,
                          min_words, max_words, seed)
    vocab, lexicon, templates, energy_shift = _build_inventory(params)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD1]))

    # order-2 Markov successor tables: 3 preferred continuations per context,
    # and a fraction of "terminal" contexts that may end the sentence, so
    # sentence endings are genuinely predictable from the last two words
    word_ids = np.array(list(vocab.word_ids))
    contexts = [START_ID] + word_ids.tolist()
    successor: dict[tuple[int, int], tuple[np.ndarray, np.ndarray, float]] = {}
    base_probs = np.array([0.6, 0.3, 0.1])
    for a in contexts:
        for b in contexts:
            choices = rng.choice(word_ids, size=3, replace=False)
            end_prob = _END_PROB if rng.random() < _TERMINAL_FRACTION else 0.0
            successor[(a, b)] = (choices, base_probs, end_prob)

    utterances = []
    for _ in range(n_sentences):
        prev2, prev1 = START_ID, START_ID
        words: list[int] = []
        while True:
            choices, p, end_prob = successor[(prev2, prev1)]
            if len(words) >= min_words and end_prob > 0.0 \
                    and rng.random() < end_prob:
                break
            word = int(rng.choice(choices, p=p))
            words.append(word)
            prev2, prev1 = prev1, word
            if len(words) >= max_words:
                break
        utterances.append(_render_utterance(words, lexicon, templates, energy_shift))

    _assert_context_sensitivity(utterances)
    return SyntheticCorpus(params, vocab, lexicon, templates, energy_shift, utterances)


# ---------------------------------------------------------------------------
# sliding windows and splits


def segment_partition(words, segment_words: int) -> list[tuple[int, ...]]:
    require(segment_words >= 1, "segment_words must be >= 1")
    words = tuple(words)
    return [tuple(words[i:i + segment_words])
            for i in range(0, len(words), segment_words)]


def sliding_windows(utt: AlignedUtterance, segment_words: int,
                    window_len: int = 3, hop: int = 1) -> list[WindowSample]:
    """Extract (past, current, future) samples by sliding a segment window.

    The sentence is partitioned into consecutive segments of `segment_words`
    words (last may be shorter); a window of `window_len` segments slides by
    `hop`, with the middle segment as the synthesis target. Windows at the
    sentence edges have empty past or future.
    """
    if window_len % 2 == 0:
        raise ValueError(f"window_len must be odd, got {window_len}")
    require(hop >= 1, "hop must be >= 1")
    segments = segment_partition(utt.sentence.words, segment_words)
    half = window_len // 2
    samples = []
    word_cursor = 0
    starts = [0]
    for seg in segments:
        word_cursor += len(seg)
        starts.append(word_cursor)
    for c in range(0, len(segments), hop):
        past = tuple(w for seg in segments[max(0, c - half):c] for w in seg)
        future = tuple(w for seg in segments[c + 1:c + 1 + half] for w in seg)
        current = segments[c]
        first_word, last_word = starts[c], starts[c + 1] - 1
        frame_start = utt.spans[first_word][0]
        frame_end = utt.spans[last_word][1]
        target = utt.mel[frame_start:frame_end]
        stops = np.zeros(target.shape[0])
        stops[-1] = 1.0
        samples.append(WindowSample(past, current, future, target, stops, c))
    return samples


def corpus_windows(utterances, segment_words: int, window_len: int = 3,
                   hop: int = 1) -> list[WindowSample]:
    out: list[WindowSample] = []
    for utt in utterances:
        out.extend(sliding_windows(utt, segment_words, window_len, hop))
    return out


def training_windows(utterances, segment_words: int,
                     window_lengths=(3, 5, 7), hop: int = 1,
                     future_dropout: float = 0.0,
                     rng: np.random.Generator | None = None) -> list[WindowSample]:
    """Window samples pooled over several window lengths.

    Inference conditions on the full observed past (and a lookahead of up to
    L words), while a single window length exposes the model only to one
    past/future width; pooling a few widths closes that train/inference
    length gap.

    `future_dropout` additionally duplicates that fraction of mid-sentence
    windows with the future cleared. In raw windows an empty future occurs
    exactly at sentence-final segments, so a model trained on them treats
    "no lookahead" as "sentence ends here"; the duplicates decouple the two
    so past-only conditioning degrades gracefully.
    """
    out: list[WindowSample] = []
    for window_len in window_lengths:
        out.extend(corpus_windows(utterances, segment_words, window_len, hop))
    if future_dropout > 0.0:
        require(rng is not None, "future_dropout needs an rng")
        extras = []
        for sample in out:
            if sample.future and rng.random() < future_dropout:
                extras.append(replace(sample, future=()))
        out.extend(extras)
    return out


def train_val_test_split(utterances, seed: int = 0,
                         fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)):
    """Disjoint, deterministic train/validation/test partition."""
    require(len(utterances) >= 20, "need at least 20 utterances to split")
    require(abs(sum(fractions) - 1.0) < 1e-9, "fractions must sum to 1")
    order = np.random.default_rng(np.random.SeedSequence([seed, 0x5B])).permutation(
        len(utterances))
    n = len(utterances)
    n_val = max(1, int(n * fractions[1]))
    n_test = max(1, int(n * fractions[2]))
    val_idx = order[:n_val]
    test_idx = order[n_val:n_val + n_test]
    train_idx = order[n_val + n_test:]
    pick = lambda idx: [utterances[i] for i in idx]  # noqa: E731
    return pick(train_idx), pick(val_idx), pick(test_idx)


# ---------------------------------------------------------------------------
# on-disk format


def write_mel(path, mel: np.ndarray) -> None:
    mel = np.asarray(mel, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", mel.shape[0], mel.shape[1]))
        fh.write(np.ascontiguousarray(mel, dtype="<f8").tobytes())


def read_mel(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    frames, channels = struct.unpack_from("<II", blob, 0)
    return np.frombuffer(blob, dtype="<f8", count=frames * channels,
                         offset=8).reshape(frames, channels).copy()


def save_corpus(corpus: SyntheticCorpus, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    vocab = corpus.vocab
    with open(directory / "sentences.txt", "w") as fh:
        for utt in corpus.utterances:
            fh.write(" ".join(vocab.decode(utt.sentence.words)) + "\n")
    with open(directory / "lexicon.txt", "w") as fh:
        for word_id in vocab.word_ids:
            phones = " ".join(corpus.lexicon.phoneme_names[p]
                              for p in corpus.lexicon.phonemes_of_word(word_id))
            fh.write(f"{vocab.word_of(word_id)}\t{phones}\n")
    with open(directory / "meta.json", "w") as fh:
        json.dump(vars(corpus.params), fh, indent=2, sort_keys=True)
    for i, utt in enumerate(corpus.utterances):
        write_mel(directory / f"utt_{i:05d}.mel", utt.mel)
        with open(directory / f"utt_{i:05d}_align.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["word_index", "start_frame", "end_frame"])
            for j, (start, end) in enumerate(utt.spans):
                writer.writerow([j, start, end])


def load_corpus(directory) -> SyntheticCorpus:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise CorpusError(f"{directory}: not a corpus directory (missing meta.json)")
    params = CorpusParams(**json.loads(meta_path.read_text()))
    vocab, lexicon, templates, energy_shift = _build_inventory(params)
    corpus = SyntheticCorpus(params, vocab, lexicon, templates, energy_shift)
    lines = (directory / "sentences.txt").read_text().splitlines()
    for i, line in enumerate(lines):
        words = vocab.encode(line.split())
        mel = read_mel(directory / f"utt_{i:05d}.mel")
        spans = []
        with open(directory / f"utt_{i:05d}_align.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                spans.append((int(row["start_frame"]), int(row["end_frame"])))
        corpus.utterances.append(AlignedUtterance(
            Sentence.from_words(words, lexicon), mel, tuple(spans)))
    return corpus


def rebuild_inventory(params: CorpusParams):
    """Expose deterministic inventory reconstruction (used by the decoder)."""
    return _build_inventory(params)
