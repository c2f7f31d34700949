import numpy as np
import pytest

from itts import numerics as N
from itts.acoustic import ContextualAcousticModel
from itts.corpus import corpus_windows, synth_corpus
from itts.finetune import (
    FinetuneConfig,
    build_finetune_samples,
    finetune,
    sim_loss,
)
from itts.lm import GenerationConfig, NGramLanguageModel
from itts.numerics import Tensor

from gradcheck import check_gradients


def small_model(**overrides) -> ContextualAcousticModel:
    params = dict(n_phonemes=12, mel_channels=16, embed_dim=16, encoder_dim=16,
                  context_dim=8, token_count=4, attn_dim=8, decoder_dim=32,
                  prenet_dim=16, iterations=0, batch_size=4, seed=3)
    params.update(overrides)
    return ContextualAcousticModel(**params).build_params()


@pytest.fixture(scope="module")
def setup():
    corpus = synth_corpus(n_sentences=25, vocab_size=14, seed=9)
    samples = corpus_windows(corpus.utterances, segment_words=2)
    lm = NGramLanguageModel(order=3, backoff=0.4).fit(
        [u.sentence.words for u in corpus.utterances], vocab=corpus.vocab)
    return corpus, samples, lm


class TestSimLoss:
    def test_collinear_is_zero(self):
        v = np.array([0.3, -1.2, 0.7])
        assert sim_loss(Tensor(v), v).item() == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_is_one(self):
        assert sim_loss(Tensor([1.0, 0.0]), np.array([0.0, 2.0])).item() == \
            pytest.approx(1.0, abs=1e-12)

    def test_antipodal_is_two(self):
        v = np.array([0.5, -0.25, 1.0])
        assert sim_loss(Tensor(v), -v).item() == pytest.approx(2.0, abs=1e-12)

    def test_bounds_random(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            a, b = rng.normal(size=6), rng.normal(size=6)
            value = sim_loss(Tensor(a), b).item()
            assert 0.0 <= value <= 2.0

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError):
            sim_loss(Tensor(np.zeros(4)), np.ones(4))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        e = Tensor(rng.normal(size=8), requires_grad=True)
        target = rng.normal(size=8)
        assert check_gradients(lambda: sim_loss(e, target), [e]) < 1e-6

    def test_gradient_through_context_network(self, setup):
        corpus, samples, lm = setup
        model = small_model()
        target = np.random.default_rng(0).normal(size=model.context_dim)
        names = ["context/tokens", "context/query/w", "context/null_past"]
        leaves = [model.params_[n] for n in names]

        def build():
            return sim_loss(model.context_embed([], [1, 2, 3]), target)

        assert check_gradients(build, leaves, h=1e-6) < 1e-3


class TestBuildSamples:
    def test_zero_lookahead_empty(self, setup):
        corpus, samples, lm = setup
        cfg = GenerationConfig(lookahead_words=0)
        out = build_finetune_samples(samples[:10], lm, cfg,
                                     np.random.default_rng(0))
        assert all(s.pseudo_future == () for s in out)

    def test_k1_rerun_identical(self, setup):
        corpus, samples, lm = setup
        cfg = GenerationConfig(lookahead_words=5, top_k=1)
        a = build_finetune_samples(samples[:20], lm, cfg, np.random.default_rng(0))
        b = build_finetune_samples(samples[:20], lm, cfg, np.random.default_rng(9))
        assert [s.pseudo_future for s in a] == [s.pseudo_future for s in b]

    def test_pseudo_differs_from_truth_somewhere(self, setup):
        corpus, samples, lm = setup
        cfg = GenerationConfig(lookahead_words=5, top_k=1)
        out = build_finetune_samples(samples, lm, cfg, np.random.default_rng(0))
        assert any(s.pseudo_future != s.future for s in out)

    def test_originals_untouched(self, setup):
        corpus, samples, lm = setup
        cfg = GenerationConfig(lookahead_words=3, top_k=1)
        build_finetune_samples(samples[:5], lm, cfg, np.random.default_rng(0))
        assert all(s.pseudo_future is None for s in samples[:5])


class TestFinetune:
    def _prepared(self, setup, **model_overrides):
        corpus, samples, lm = setup
        model = small_model(**model_overrides)
        cfg = GenerationConfig(lookahead_words=5, top_k=1)
        work = build_finetune_samples(samples[:24], lm, cfg,
                                      np.random.default_rng(1))
        return corpus, work, lm, model, cfg

    def test_zero_iterations_unchanged(self, setup):
        corpus, work, lm, model, cfg = self._prepared(setup)
        fcfg = FinetuneConfig(lm=lm, generation=cfg, alpha_sim=0.0, iterations=0)
        tuned = finetune(model, work, fcfg, corpus.lexicon)
        for name in model.params_.names():
            np.testing.assert_array_equal(tuned.params_[name].data,
                                          model.params_[name].data)

    def test_freeze_contract(self, setup):
        corpus, work, lm, model, cfg = self._prepared(setup)
        fcfg = FinetuneConfig(lm=lm, generation=cfg, alpha_sim=1e-3,
                              lr=1e-3, iterations=5)
        tuned = finetune(model, work, fcfg, corpus.lexicon)
        for name in model.params_.names():
            if name.startswith(("encoder/", "decoder/")):
                np.testing.assert_array_equal(tuned.params_[name].data,
                                              model.params_[name].data)
        changed = [n for n in model.params_.names() if n.startswith("context/")
                   and not np.array_equal(tuned.params_[n].data,
                                          model.params_[n].data)]
        assert changed

    def test_input_model_not_mutated(self, setup):
        corpus, work, lm, model, cfg = self._prepared(setup)
        before = {n: model.params_[n].data.copy() for n in model.params_.names()}
        fcfg = FinetuneConfig(lm=lm, generation=cfg, iterations=3, lr=1e-3)
        finetune(model, work, fcfg, corpus.lexicon)
        for name, data in before.items():
            np.testing.assert_array_equal(model.params_[name].data, data)
        assert all(model.params_.is_trainable(n) for n in model.params_.names())

    def test_alpha_zero_loss_equals_reconstruction(self, setup):
        corpus, work, lm, model, cfg = self._prepared(setup, teacher_noise=0.0)
        batch = work[:6]
        fcfg = FinetuneConfig(lm=lm, generation=cfg, alpha_sim=0.0,
                              iterations=1, batch_size=len(batch), lr=0.0)
        tuned = finetune(model, batch, fcfg, corpus.lexicon)
        expected = np.mean([
            model.training_loss(s, corpus.lexicon, future_source="pseudo").item()
            for s in batch])
        assert tuned.finetune_curve_[0] == pytest.approx(expected, rel=1e-12)

    def test_missing_pseudo_futures_rejected(self, setup):
        corpus, samples, lm = setup
        model = small_model()
        cfg = GenerationConfig()
        fcfg = FinetuneConfig(lm=lm, generation=cfg, iterations=1)
        with pytest.raises(ValueError):
            finetune(model, samples[:4], fcfg, corpus.lexicon)
