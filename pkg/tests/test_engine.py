import numpy as np
import pytest

from itts.acoustic import ContextualAcousticModel
from itts.corpus import synth_corpus
from itts.engine import (
    HOP_SAMPLES,
    Condition,
    ConditionKind,
    EngineModels,
    cosine_bank,
    invert_vocoder,
    read_wav,
    run_stream,
    step,
    vocode,
    write_latency_csv,
    write_wav,
    StreamState,
)
from itts.lm import GenerationConfig, NGramLanguageModel


@pytest.fixture(scope="module")
def rig():
    corpus = synth_corpus(n_sentences=25, vocab_size=14, seed=17)
    model = ContextualAcousticModel(
        n_phonemes=12, mel_channels=16, embed_dim=16, encoder_dim=16,
        context_dim=8, token_count=4, attn_dim=8, decoder_dim=32,
        prenet_dim=16, seed=2).build_params()
    lm = NGramLanguageModel(order=3, backoff=0.4).fit(
        [u.sentence.words for u in corpus.utterances], vocab=corpus.vocab)
    return corpus, EngineModels(model, lm, corpus.lexicon)


def make_cfg(**kw):
    base = dict(segment_words=2, lookahead_words=5, top_k=1, seed=0)
    base.update(kw)
    return GenerationConfig(**base)


class TestVocoder:
    def test_zero_mel_zero_wave(self):
        wave = vocode(np.zeros((4, 16)))
        np.testing.assert_array_equal(wave, np.zeros(4 * HOP_SAMPLES))

    def test_one_frame_is_one_hop(self):
        wave = vocode(np.random.default_rng(0).normal(size=(1, 16)))
        assert wave.shape == (HOP_SAMPLES,)

    def test_distributes_over_concat_exactly(self):
        rng = np.random.default_rng(1)
        m1, m2 = rng.normal(size=(3, 16)), rng.normal(size=(5, 16))
        joint = vocode(np.concatenate([m1, m2]))
        parts = np.concatenate([vocode(m1), vocode(m2)])
        np.testing.assert_array_equal(joint, parts)

    def test_inversion_round_trip(self):
        rng = np.random.default_rng(2)
        mel = rng.normal(size=(6, 16))
        np.testing.assert_allclose(invert_vocoder(vocode(mel)), mel, atol=1e-12)

    def test_bank_full_rank(self):
        assert np.linalg.matrix_rank(cosine_bank(16)) == 16


class TestLatencyAccounting:
    def _ten_word_sentence(self, corpus):
        ids = list(corpus.vocab.word_ids)
        return ids[:10]

    def test_bicontext_words_required(self, rig):
        corpus, models = rig
        result = run_stream(self._ten_word_sentence(corpus),
                            Condition(ConditionKind.BICONTEXT), models,
                            make_cfg(), np.random.default_rng(0))
        assert [r.words_required for r in result.records] == [2, 4, 6, 8, 10]
        assert [r.step for r in result.records] == [1, 2, 3, 4, 5]

    def test_truth_words_required(self, rig):
        corpus, models = rig
        result = run_stream(self._ten_word_sentence(corpus),
                            Condition(ConditionKind.BICONTEXT_TRUTH), models,
                            make_cfg(), np.random.default_rng(0))
        assert [r.words_required for r in result.records] == [7, 9, 10, 10, 10]

    def test_latency_dominance(self, rig):
        corpus, models = rig
        for utt in corpus.utterances[:6]:
            words = list(utt.sentence.words)
            causal = run_stream(words, Condition(ConditionKind.BICONTEXT),
                                models, make_cfg(), np.random.default_rng(0))
            truth = run_stream(words, Condition(ConditionKind.BICONTEXT_TRUTH),
                               models, make_cfg(), np.random.default_rng(0))
            for a, b in zip(causal.records, truth.records):
                assert a.words_required <= b.words_required
                if a.step * 2 + 5 <= len(words):
                    assert a.words_required < b.words_required

    def test_guard_reads_match_required(self, rig):
        corpus, models = rig
        words = self._ten_word_sentence(corpus)
        for kind in (ConditionKind.INDEPENDENT, ConditionKind.UNICONTEXT,
                     ConditionKind.BICONTEXT):
            result = run_stream(words, Condition(kind), models, make_cfg(),
                                np.random.default_rng(0))
            assert result.max_word_read == [2, 4, 6, 8, 10]
        truth = run_stream(words, Condition(ConditionKind.BICONTEXT_TRUTH),
                           models, make_cfg(), np.random.default_rng(0))
        assert truth.max_word_read == [7, 9, 10, 10, 10]


class TestStreaming:
    def test_single_partial_segment(self, rig):
        corpus, models = rig
        word = next(iter(corpus.vocab.word_ids))
        result = run_stream([word], Condition(ConditionKind.BICONTEXT), models,
                            make_cfg(), np.random.default_rng(0))
        assert len(result.records) == 1
        assert result.records[0].words_required == 1

    def test_stream_equals_manual_steps(self, rig):
        corpus, models = rig
        words = list(corpus.utterances[0].sentence.words)
        cfg = make_cfg()
        result = run_stream(words, Condition(ConditionKind.BICONTEXT), models,
                            cfg, np.random.default_rng(0))
        state = StreamState()
        chunks = []
        for start in range(0, len(words), cfg.segment_words):
            segment = words[start:start + cfg.segment_words]
            _, chunk, _ = step(state, segment, Condition(ConditionKind.BICONTEXT),
                               models, cfg, np.random.default_rng(0))
            chunks.append(chunk)
        np.testing.assert_array_equal(result.waveform, np.concatenate(chunks))

    def test_bicontext_deterministic_with_k1(self, rig):
        corpus, models = rig
        words = list(corpus.utterances[1].sentence.words)
        a = run_stream(words, Condition(ConditionKind.BICONTEXT), models,
                       make_cfg(), np.random.default_rng(0))
        b = run_stream(words, Condition(ConditionKind.BICONTEXT), models,
                       make_cfg(), np.random.default_rng(99))
        np.testing.assert_array_equal(a.waveform, b.waveform)

    def test_causality_under_truncation(self, rig):
        corpus, models = rig
        cfg = make_cfg()
        for utt in corpus.utterances[:8]:
            words = list(utt.sentence.words)
            if len(words) < 6:
                continue
            full = run_stream(words, Condition(ConditionKind.BICONTEXT), models,
                              cfg, np.random.default_rng(0))
            cut = run_stream(words[:4], Condition(ConditionKind.BICONTEXT),
                             models, cfg, np.random.default_rng(0))
            for t in range(2):
                np.testing.assert_array_equal(full.mels[t], cut.mels[t])

    def test_unicontext_first_step_matches_independent(self, rig):
        corpus, models = rig
        words = list(corpus.utterances[2].sentence.words)
        uni = run_stream(words, Condition(ConditionKind.UNICONTEXT), models,
                         make_cfg(), np.random.default_rng(0))
        ind = run_stream(words, Condition(ConditionKind.INDEPENDENT), models,
                         make_cfg(), np.random.default_rng(0))
        np.testing.assert_array_equal(uni.mels[0], ind.mels[0])

    def test_empty_sentence_rejected(self, rig):
        corpus, models = rig
        with pytest.raises(ValueError):
            run_stream([], Condition(ConditionKind.BICONTEXT), models,
                       make_cfg(), np.random.default_rng(0))


class TestConditionParsing:
    def test_parse_variants(self):
        assert Condition.parse("bicontext") == Condition(ConditionKind.BICONTEXT)
        assert Condition.parse("bicontext_ft") == \
            Condition(ConditionKind.BICONTEXT, fine_tuned=True)
        assert Condition.parse("bicontext-truth") == \
            Condition(ConditionKind.BICONTEXT_TRUTH)
        assert Condition.parse("Independent").kind is ConditionKind.INDEPENDENT

    def test_labels_round_trip(self):
        for text in ("independent", "unicontext", "bicontext",
                     "bicontext_truth", "bicontext_ft"):
            assert Condition.parse(text).label() == text


class TestFileOutput:
    def test_wav_round_trip(self, tmp_path, rig):
        corpus, models = rig
        words = list(corpus.utterances[0].sentence.words)
        result = run_stream(words, Condition(ConditionKind.INDEPENDENT), models,
                            make_cfg(), np.random.default_rng(0))
        path = tmp_path / "out.wav"
        write_wav(path, result.waveform)
        again = read_wav(path)
        assert again.shape == result.waveform.shape
        np.testing.assert_allclose(again, result.waveform, atol=1.0 / 512)

    def test_wav_bytes_deterministic(self, tmp_path, rig):
        corpus, models = rig
        words = list(corpus.utterances[0].sentence.words)
        for name in ("a.wav", "b.wav"):
            result = run_stream(words, Condition(ConditionKind.BICONTEXT),
                                models, make_cfg(), np.random.default_rng(0))
            write_wav(tmp_path / name, result.waveform)
        assert (tmp_path / "a.wav").read_bytes() == (tmp_path / "b.wav").read_bytes()

    def test_latency_csv_format(self, tmp_path, rig):
        corpus, models = rig
        words = list(corpus.utterances[0].sentence.words)
        result = run_stream(words, Condition(ConditionKind.BICONTEXT), models,
                            make_cfg(), np.random.default_rng(0))
        path = tmp_path / "latency.csv"
        write_latency_csv(path, result.records)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "step,words_required,compute_ms"
        assert len(lines) == len(result.records) + 1
