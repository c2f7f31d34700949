"""Analysis harness: oracle decoding, error rates, and cosine-similarity curves.

The oracle decoder replaces an ASR system: synthetic mel frames are assigned
to the nearest template frame (Euclidean), runs are collapsed into phoneme
sequences, and edit distance against the reference phonemes yields a segment
error rate. On ground-truth corpus audio the decode is exact by construction,
so any nonzero rate is attributable to the synthesis pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .base import require, spawn_rng
from .corpus import SyntheticCorpus, segment_partition
from .engine import Condition, ConditionKind, EngineModels, invert_vocoder, run_stream
from .lm import GenerationConfig, generate_lookahead

_BLANK_NORM = 0.5


# ---------------------------------------------------------------------------
# edit distance


def edit_ops(reference, hypothesis) -> tuple[int, int, int]:
    """(substitutions, insertions, deletions) of a minimal edit script."""
    ref = list(reference)
    hyp = list(hypothesis)
    n, m = len(ref), len(hyp)
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            same = ref[i - 1] == hyp[j - 1]
            dist[i, j] = min(dist[i - 1, j - 1] + (0 if same else 1),
                             dist[i - 1, j] + 1,
                             dist[i, j - 1] + 1)
    subs = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + \
                (0 if ref[i - 1] == hyp[j - 1] else 1):
            if ref[i - 1] != hyp[j - 1]:
                subs += 1
            i, j = i - 1, j - 1
        elif j > 0 and dist[i, j] == dist[i, j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return subs, ins, dels


def edit_distance(reference, hypothesis) -> int:
    return sum(edit_ops(reference, hypothesis))


# ---------------------------------------------------------------------------
# oracle decoder


@dataclass
class DecodeResult:
    phonemes: list[int]
    blank_frames: int = 0

    @property
    def flagged(self) -> bool:
        return self.blank_frames > 0


class OracleDecoder:
    """Nearest-template decoder over a corpus's phoneme frame codebook."""

    def __init__(self, corpus: SyntheticCorpus):
        frames, phonemes, indices = corpus.codebook()
        self._frames = frames
        self._phonemes = phonemes
        self._indices = indices
        self._channels = frames.shape[1]
        self._sq_norms = np.sum(frames * frames, axis=1)

    def decode_mel(self, mel: np.ndarray) -> DecodeResult:
        mel = np.asarray(mel, dtype=np.float64)
        require(mel.ndim == 2 and mel.shape[1] == self._channels,
                f"mel channel count {mel.shape[1:]} does not match templates")
        if mel.shape[0] == 0:
            return DecodeResult([], 0)
        norms = np.linalg.norm(mel, axis=1)
        keep = norms >= _BLANK_NORM
        blanks = int(np.sum(~keep))
        mel = mel[keep]
        if mel.shape[0] == 0:
            return DecodeResult([], blanks)
        # nearest codebook frame by Euclidean distance
        dists = self._sq_norms[None, :] - 2.0 * (mel @ self._frames.T)
        nearest = np.argmin(dists, axis=1)
        phones = self._phonemes[nearest]
        frame_idx = self._indices[nearest]
        out = [int(phones[0])]
        for k in range(1, len(phones)):
            # a run continues while the phoneme matches and the template
            # frame index does not move backwards (lengthening repeats frames)
            if phones[k] != phones[k - 1] or frame_idx[k] < frame_idx[k - 1]:
                out.append(int(phones[k]))
        return DecodeResult(out, blanks)

    def decode_waveform(self, waveform: np.ndarray) -> DecodeResult:
        return self.decode_mel(invert_vocoder(waveform, self._channels))


# ---------------------------------------------------------------------------
# condition comparison


@dataclass
class SegmentErrorReport:
    condition: str
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    reference_length: int = 0
    sentences: int = 0
    truncated_steps: int = 0
    words_required_total: int = 0
    steps: int = 0
    compute_ms_total: float = 0.0

    @property
    def error_rate(self) -> float:
        require(self.reference_length > 0, "empty reference")
        return (self.substitutions + self.insertions + self.deletions) \
            / self.reference_length

    @property
    def mean_words_required(self) -> float:
        return self.words_required_total / max(1, self.steps)

    @property
    def mean_compute_ms(self) -> float:
        return self.compute_ms_total / max(1, self.steps)


def evaluate_sentence(utt, condition: Condition, models: EngineModels,
                      cfg: GenerationConfig, rng: np.random.Generator,
                      decoder: OracleDecoder):
    result = run_stream(list(utt.sentence.words), condition, models, cfg, rng)
    full_mel = np.concatenate(result.mels, axis=0)
    decoded = decoder.decode_mel(full_mel)
    reference = utt.sentence.phonemes
    subs, ins, dels = edit_ops(reference, decoded.phonemes)
    return subs, ins, dels, len(reference), result


def condition_report(utterances, conditions, models_by_flag, cfg: GenerationConfig,
                     decoder: OracleDecoder, seed: int = 0,
                     jobs: int = 1) -> list[SegmentErrorReport]:
    """Stream every utterance under every condition; aggregate error and latency.

    `models_by_flag` maps fine_tuned flag (False/True) to EngineModels; the
    truth condition reads ahead through the engine's guard, all others stay
    causal. Per-sentence RNGs are derived from (seed, sentence index) so
    results are independent of evaluation order and of `jobs`.
    """
    reports = []
    for condition in conditions:
        models = models_by_flag[condition.fine_tuned]
        report = SegmentErrorReport(condition=condition.label())
        tasks = [(i, utt, condition, models, cfg, seed, decoder)
                 for i, utt in enumerate(utterances)]
        results = _map_sentences(_evaluate_sentence_task, tasks, jobs)
        for subs, ins, dels, ref_len, stream in results:
            report.substitutions += subs
            report.insertions += ins
            report.deletions += dels
            report.reference_length += ref_len
            report.sentences += 1
            report.truncated_steps += len(stream.truncated_steps)
            for rec in stream.records:
                report.words_required_total += rec.words_required
                report.compute_ms_total += rec.compute_ms
                report.steps += 1
        reports.append(report)
    return reports


def _evaluate_sentence_task(args):
    i, utt, condition, models, cfg, seed, decoder = args
    return evaluate_sentence(utt, condition, models, cfg,
                             spawn_rng(seed, i), decoder)


def _cossim_sentence_task(args):
    i, utt, variants, models_by_flag, cfg, seed = args
    return _sentence_cossims(utt, variants, models_by_flag, cfg,
                             spawn_rng(seed, 7 + i))


def _map_sentences(fn, tasks, jobs: int):
    """Apply a picklable task function, optionally across processes.

    Results come back in task order, so aggregation is identical for any
    `jobs` value.
    """
    if jobs <= 1:
        return [fn(t) for t in tasks]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


# ---------------------------------------------------------------------------
# cosine-similarity analysis


@dataclass
class CosSimCurve:
    label: str
    sums: dict[int, float] = field(default_factory=dict)
    counts: dict[int, int] = field(default_factory=dict)

    def add(self, t: int, value: float) -> None:
        self.sums[t] = self.sums.get(t, 0.0) + value
        self.counts[t] = self.counts.get(t, 0) + 1

    def mean(self, t: int) -> float:
        require(self.counts.get(t, 0) > 0, f"no observations at t={t}")
        return self.sums[t] / self.counts[t]

    @property
    def steps(self) -> list[int]:
        return sorted(self.counts)

    def overall_mean(self) -> float:
        total = sum(self.sums.values())
        count = sum(self.counts.values())
        require(count > 0, "empty curve")
        return total / count


@dataclass(frozen=True)
class CosSimVariant:
    """What produces the compared lookahead: top-k, random words, or truth."""

    label: str
    kind: str  # "topk" | "random" | "truth"
    k: int = 1
    fine_tuned: bool = False

    @classmethod
    def parse(cls, text: str) -> "CosSimVariant":
        text = text.strip().lower()
        if text == "random":
            return cls("random", "random")
        if text == "truth":
            return cls("truth", "truth")
        fine_tuned = text.endswith("+ft")
        if fine_tuned:
            text = text[:-3]
        require(text.startswith("k"), f"unknown variant {text!r}")
        k = int(text[1:])
        label = f"k={k}" + (",fine-tuned" if fine_tuned else "")
        return cls(label, "topk", k, fine_tuned)


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    require(nu > 0 and nv > 0, "zero-norm context embedding")
    return float(u @ v / (nu * nv))


def cossim_analysis(utterances, variants, models_by_flag,
                    cfg: GenerationConfig, seed: int = 0,
                    jobs: int = 1) -> list[CosSimCurve]:
    """Per-step mean cosine between variant and ground-truth embeddings.

    For each sentence and step t with at least one future word remaining, the
    truth embedding uses the actual next words (up to the lookahead length)
    and the variant embedding uses its generated or random lookahead.
    Sentence-final steps with no remaining future are excluded from the
    aggregation; counts record the exclusion.
    """
    curves = [CosSimCurve(v.label) for v in variants]
    tasks = [(i, utt, variants, models_by_flag, cfg, seed)
             for i, utt in enumerate(utterances)]
    results = _map_sentences(_cossim_sentence_task, tasks, jobs)
    for per_sentence in results:
        for curve, values in zip(curves, per_sentence):
            for t, value in values:
                curve.add(t, value)
    return curves


def _sentence_cossims(utt, variants, models_by_flag, cfg: GenerationConfig,
                      rng: np.random.Generator):
    words = list(utt.sentence.words)
    segments = segment_partition(words, cfg.segment_words)
    out = [[] for _ in variants]
    boundary = 0
    for t_index, segment in enumerate(segments, start=1):
        past = words[:boundary]
        boundary += len(segment)
        observed = words[:boundary]
        remaining = words[boundary:]
        if not remaining:
            continue  # sentence-final step: no ground-truth lookahead exists
        truth_future = remaining[:cfg.lookahead_words]
        for vi, variant in enumerate(variants):
            models = models_by_flag[variant.fine_tuned]
            lex = models.lexicon
            acoustic = models.acoustic
            past_ph = lex.phonemes_of_words(past) if past else []
            e_truth = acoustic.context_embedding(
                past_ph, lex.phonemes_of_words(truth_future))
            if variant.kind == "truth":
                future = truth_future
            elif variant.kind == "random":
                ids = list(models.lm.vocab_.word_ids)
                future = [int(w) for w in
                          rng.choice(ids, size=cfg.lookahead_words)]
            else:
                variant_cfg = GenerationConfig(cfg.segment_words,
                                               cfg.lookahead_words,
                                               variant.k, cfg.seed)
                future = generate_lookahead(models.lm, observed, variant_cfg, rng)
            e_var = acoustic.context_embedding(
                past_ph, lex.phonemes_of_words(future) if future else [])
            out[vi].append((t_index, _cosine(e_var, e_truth)))
    return out


# ---------------------------------------------------------------------------
# CSV reports


def write_cossim_csv(path, curves: list[CosSimCurve]) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "t", "mean_cossim", "count"])
        for curve in curves:
            for t in curve.steps:
                writer.writerow([curve.label, t, f"{curve.mean(t):.6f}",
                                 curve.counts[t]])


def write_condition_csv(path, reports: list[SegmentErrorReport]) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["condition", "per", "insertions", "deletions",
                         "substitutions", "mean_words_required",
                         "mean_compute_ms", "truncated_steps", "sentences"])
        for r in reports:
            writer.writerow([r.condition, f"{r.error_rate:.6f}", r.insertions,
                             r.deletions, r.substitutions,
                             f"{r.mean_words_required:.3f}",
                             f"{r.mean_compute_ms:.3f}", r.truncated_steps,
                             r.sentences])
