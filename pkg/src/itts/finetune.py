"""Language-model-guided fine-tuning of the contextual embedding network.

The base model trains with ground-truth futures; at inference the future is
a generated lookahead, a train/test mismatch. Fine-tuning regenerates the
training futures with the language model, freezes the encoder and decoder
groups, and trains only the context group with an added similarity loss that
pulls the pseudo-lookahead embedding toward the embedding the ground-truth
lookahead would have produced.

The similarity target is computed with a frozen snapshot of the pre-finetune
context network: letting both embeddings move admits a trivial collapse, so
the gradient flows only through the pseudo side.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import numerics as N
from .acoustic import ContextualAcousticModel, TrainingDivergedError
from .base import batches, require
from .corpus import Lexicon, WindowSample
from .lm import GenerationConfig, generate_lookahead
from .numerics import Tensor


@dataclass
class FinetuneConfig:
    """Fine-tuning contract: similarity weight, optimizer, and lookahead source."""

    lm: object
    generation: GenerationConfig
    alpha_sim: float = 1e-3
    lr: float = 1e-4
    iterations: int = 150
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        require(self.alpha_sim >= 0.0, "alpha_sim must be non-negative")
        require(self.iterations >= 0, "iterations must be non-negative")


def sim_loss(e_pseudo, e_truth) -> Tensor:
    """1 - cosine(e_pseudo, e_truth); 0 when collinear, 2 when antipodal."""
    return N.sub(1.0, N.cosine(e_pseudo, N.as_tensor(e_truth)))


def build_finetune_samples(samples, lm, cfg: GenerationConfig,
                           rng: np.random.Generator) -> list[WindowSample]:
    """Copies of the samples with a generated pseudo future attached.

    The lookahead is conditioned on everything observed up to the end of the
    current segment (past plus current), exactly as at inference time.
    """
    out = []
    for sample in samples:
        observed = list(sample.past) + list(sample.current)
        pseudo = tuple(generate_lookahead(lm, observed, cfg, rng))
        out.append(replace(sample, pseudo_future=pseudo))
    return out


def finetune(model: ContextualAcousticModel, samples, fcfg: FinetuneConfig,
             lexicon: Lexicon) -> ContextualAcousticModel:
    """Return a fine-tuned copy; encoder and decoder stay bit-identical.

    Per-sample loss: teacher-forced reconstruction conditioned on the pseudo
    future, plus alpha_sim * sim_loss between the live pseudo embedding and
    the frozen-snapshot ground-truth embedding.
    """
    require(len(samples) > 0, "no fine-tuning samples")
    rng = np.random.default_rng(np.random.SeedSequence([fcfg.seed, 0xFE]))
    noise_rng = np.random.default_rng(np.random.SeedSequence([fcfg.seed, 0xA1]))
    tuned = model.clone_with_params()
    snapshot = model.clone_with_params()

    work = [s for s in samples if s.pseudo_future is not None]
    require(len(work) == len(samples), "samples lack pseudo futures; "
            "run build_finetune_samples first")

    # static similarity targets from the pre-finetune context network
    truth_embeddings = []
    for sample in work:
        past_ph = lexicon.phonemes_of_words(sample.past) if sample.past else []
        future_ph = (lexicon.phonemes_of_words(sample.future)
                     if sample.future else [])
        truth_embeddings.append(snapshot.context_embedding(past_ph, future_ph))

    tuned.params_.set_trainable("encoder/", False)
    tuned.params_.set_trainable("decoder/", False)

    indexed = list(zip(work, truth_embeddings))
    batch_iter = batches(indexed, fcfg.batch_size, rng)
    curve = []
    for it in range(fcfg.iterations):
        batch = next(batch_iter)
        tuned.params_.zero_grad()
        total = 0.0
        with N.autograd():
            for sample, e_truth in batch:
                past_ph = (lexicon.phonemes_of_words(sample.past)
                           if sample.past else [])
                pseudo_ph = (lexicon.phonemes_of_words(sample.pseudo_future)
                             if sample.pseudo_future else [])
                e_pseudo = tuned.context_embed(past_ph, pseudo_ph)
                recon, _, _ = tuned.reconstruction_loss(
                    lexicon.phonemes_of_words(sample.current), e_pseudo,
                    sample.target_mel, sample.stop_targets,
                    noise_rng=noise_rng)
                loss = recon
                if fcfg.alpha_sim > 0.0:
                    loss = N.add(loss, N.mul(sim_loss(e_pseudo, e_truth),
                                             fcfg.alpha_sim))
                loss = N.mul(loss, 1.0 / len(batch))
                total += loss.item() * len(batch)
                loss.backward()
        mean_loss = total / len(batch)
        if not np.isfinite(mean_loss):
            raise TrainingDivergedError(
                f"non-finite fine-tuning loss {mean_loss} at iteration {it}")
        tuned.params_.add_l2(tuned.l2_weight)
        tuned.params_.adam_step(lr=fcfg.lr, beta1=tuned.adam_beta1,
                                beta2=tuned.adam_beta2, eps=tuned.adam_eps)
        curve.append(mean_loss)
    tuned.finetune_curve_ = curve
    return tuned


def mean_pseudo_truth_cosine(model: ContextualAcousticModel, samples,
                             lexicon: Lexicon) -> float:
    """Mean cosine between pseudo-future and truth-future embeddings."""
    require(len(samples) > 0, "no samples")
    total = 0.0
    for sample in samples:
        past_ph = lexicon.phonemes_of_words(sample.past) if sample.past else []
        truth_ph = lexicon.phonemes_of_words(sample.future) if sample.future else []
        pseudo_ph = (lexicon.phonemes_of_words(sample.pseudo_future)
                     if sample.pseudo_future else [])
        e_truth = model.context_embedding(past_ph, truth_ph)
        e_pseudo = model.context_embedding(past_ph, pseudo_ph)
        total += float(N.cosine(e_pseudo, e_truth).item())
    return total / len(samples)
