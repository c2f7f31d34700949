import numpy as np
import pytest

from itts.acoustic import ContextualAcousticModel
from itts.corpus import synth_corpus
from itts.engine import Condition, ConditionKind, EngineModels, vocode
from itts.evaluation import (
    CosSimVariant,
    OracleDecoder,
    condition_report,
    cossim_analysis,
    edit_distance,
    edit_ops,
    write_condition_csv,
    write_cossim_csv,
)
from itts.lm import GenerationConfig, NGramLanguageModel


@pytest.fixture(scope="module")
def corpus():
    return synth_corpus(n_sentences=30, vocab_size=15, seed=31)


@pytest.fixture(scope="module")
def rig(corpus):
    model = ContextualAcousticModel(
        n_phonemes=12, mel_channels=16, embed_dim=16, encoder_dim=16,
        context_dim=8, token_count=4, attn_dim=8, decoder_dim=32,
        prenet_dim=16, seed=4).build_params()
    lm = NGramLanguageModel(order=3, backoff=0.4).fit(
        [u.sentence.words for u in corpus.utterances], vocab=corpus.vocab)
    models = EngineModels(model, lm, corpus.lexicon)
    return models, OracleDecoder(corpus)


def _brute_edit_distance(a, b):
    # independent oracle: plain recursive Levenshtein with memoization
    from functools import lru_cache

    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(go(i - 1, j - 1) + (a[i - 1] != b[j - 1]),
                   go(i - 1, j) + 1,
                   go(i, j - 1) + 1)

    return go(len(a), len(b))


class TestEditDistance:
    def test_identity_is_zero(self):
        assert edit_ops([1, 2, 3], [1, 2, 3]) == (0, 0, 0)

    def test_known_single_operations(self):
        assert edit_ops("abc", "abd") == (1, 0, 0)
        assert edit_ops("abc", "abcd") == (0, 1, 0)
        assert edit_ops("abc", "ab") == (0, 0, 1)

    def test_counts_reproduce_distance(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            a = list(rng.integers(0, 5, size=rng.integers(0, 10)))
            b = list(rng.integers(0, 5, size=rng.integers(0, 10)))
            subs, ins, dels = edit_ops(a, b)
            assert subs + ins + dels == _brute_edit_distance(a, b)

    def test_symmetry_swaps_insertions_deletions(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            a = list(rng.integers(0, 4, size=rng.integers(1, 8)))
            b = list(rng.integers(0, 4, size=rng.integers(1, 8)))
            assert edit_distance(a, b) == edit_distance(b, a)


class TestOracleDecoder:
    def test_ground_truth_decodes_exactly(self, corpus):
        decoder = OracleDecoder(corpus)
        for utt in corpus.utterances:
            result = decoder.decode_mel(utt.mel)
            assert result.phonemes == utt.sentence.phonemes
            assert not result.flagged

    def test_all_zero_mel_flagged_empty(self, corpus):
        decoder = OracleDecoder(corpus)
        result = decoder.decode_mel(np.zeros((6, corpus.mel_channels)))
        assert result.phonemes == []
        assert result.flagged and result.blank_frames == 6

    def test_vocoder_round_trip_same_decode(self, corpus):
        decoder = OracleDecoder(corpus)
        for utt in corpus.utterances[:10]:
            direct = decoder.decode_mel(utt.mel)
            via_wave = decoder.decode_waveform(vocode(utt.mel))
            assert direct.phonemes == via_wave.phonemes

    def test_channel_mismatch_rejected(self, corpus):
        decoder = OracleDecoder(corpus)
        with pytest.raises(ValueError):
            decoder.decode_mel(np.zeros((4, corpus.mel_channels + 1)))


class TestCosSimAnalysis:
    def test_truth_variant_is_constant_one(self, corpus, rig):
        models, _ = rig
        cfg = GenerationConfig(segment_words=2, lookahead_words=5, top_k=1)
        curves = cossim_analysis(corpus.utterances[:6],
                                 [CosSimVariant.parse("truth")],
                                 {False: models, True: models}, cfg)
        curve = curves[0]
        assert curve.steps
        for t in curve.steps:
            assert curve.mean(t) == pytest.approx(1.0, abs=1e-12)

    def test_final_steps_excluded(self, corpus, rig):
        models, _ = rig
        cfg = GenerationConfig(segment_words=2, lookahead_words=5, top_k=1)
        utts = corpus.utterances[:6]
        curves = cossim_analysis(utts, [CosSimVariant.parse("k1")],
                                 {False: models, True: models}, cfg)
        curve = curves[0]
        # a sentence with S segments contributes S-1 observations at most
        expected_total = sum(
            int(np.ceil(len(u.sentence.words) / 2)) - 1 for u in utts)
        assert sum(curve.counts.values()) == expected_total

    def test_variant_parsing(self):
        v = CosSimVariant.parse("k50")
        assert v.kind == "topk" and v.k == 50 and not v.fine_tuned
        v = CosSimVariant.parse("k1+ft")
        assert v.fine_tuned and v.k == 1
        assert CosSimVariant.parse("random").kind == "random"
        with pytest.raises(ValueError):
            CosSimVariant.parse("bogus")


class TestConditionReport:
    def test_reference_against_itself_is_zero(self, corpus):
        decoder = OracleDecoder(corpus)
        utt = corpus.utterances[0]
        decoded = decoder.decode_mel(utt.mel).phonemes
        assert edit_ops(utt.sentence.phonemes, decoded) == (0, 0, 0)

    def test_report_structure_and_latency(self, corpus, rig):
        models, decoder = rig
        cfg = GenerationConfig(segment_words=2, lookahead_words=5, top_k=1)
        conditions = [Condition(ConditionKind.BICONTEXT),
                      Condition(ConditionKind.BICONTEXT_TRUTH)]
        reports = condition_report(corpus.utterances[:4], conditions,
                                   {False: models, True: models}, cfg, decoder)
        assert [r.condition for r in reports] == ["bicontext", "bicontext_truth"]
        causal, truth = reports
        assert causal.sentences == truth.sentences == 4
        assert causal.mean_words_required < truth.mean_words_required
        assert causal.error_rate >= 0.0

    def test_jobs_parity(self, corpus, rig):
        models, decoder = rig
        cfg = GenerationConfig(segment_words=2, lookahead_words=3, top_k=1)
        conditions = [Condition(ConditionKind.BICONTEXT)]
        serial = condition_report(corpus.utterances[:3], conditions,
                                  {False: models, True: models}, cfg, decoder,
                                  seed=2, jobs=1)
        parallel = condition_report(corpus.utterances[:3], conditions,
                                    {False: models, True: models}, cfg, decoder,
                                    seed=2, jobs=2)
        a, b = serial[0], parallel[0]
        assert (a.substitutions, a.insertions, a.deletions) == \
            (b.substitutions, b.insertions, b.deletions)
        assert a.words_required_total == b.words_required_total


class TestCsvOutput:
    def test_cossim_csv(self, tmp_path, corpus, rig):
        models, _ = rig
        cfg = GenerationConfig(segment_words=2, lookahead_words=3, top_k=1)
        curves = cossim_analysis(corpus.utterances[:4],
                                 [CosSimVariant.parse("k1"),
                                  CosSimVariant.parse("random")],
                                 {False: models, True: models}, cfg)
        path = tmp_path / "cossim.csv"
        write_cossim_csv(path, curves)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "variant,t,mean_cossim,count"
        assert len(lines) > 2

    def test_condition_csv(self, tmp_path, corpus, rig):
        models, decoder = rig
        cfg = GenerationConfig(segment_words=2, lookahead_words=3, top_k=1)
        reports = condition_report(corpus.utterances[:2],
                                   [Condition(ConditionKind.INDEPENDENT)],
                                   {False: models, True: models}, cfg, decoder)
        path = tmp_path / "report.csv"
        write_condition_csv(path, reports)
        lines = path.read_text().strip().splitlines()
        assert lines[0].startswith("condition,per,insertions")
        assert len(lines) == 2
