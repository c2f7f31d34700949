"""Context-aware segment synthesis model.

A scaled-down sequence-to-sequence mel synthesizer with three parameter
groups, addressable by name prefix for selective freezing:

  encoder/   phoneme embedding, one 1-D conv layer, bidirectional GRU
  context/   shared contextual encoder (six 2-D conv layers with stride-2
             downsampling every other layer, then a GRU over positions),
             learned null vectors for absent sides, a token bank with
             additive attention, and the output projection
  decoder/   location-aware content attention over (segment encodings ++
             broadcast context embedding), two GRU layers, mel and stop
             projections

The two contextual encoders (past side, future side) are one parameter set
applied twice. Decoding is autoregressive; during training the ground-truth
previous frame feeds each step (teacher forcing).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import numerics as N
from .base import batches, require
from .corpus import Lexicon, WindowSample
from .numerics import ParamStore, Tensor


class TrainingDivergedError(RuntimeError):
    """Raised when training produces a non-finite loss."""


@dataclass
class SynthesisResult:
    mel: np.ndarray
    stop_probs: np.ndarray
    truncated: bool


_CONV_CHANNELS = [(1, 4, 1), (4, 4, 2), (4, 8, 1), (8, 8, 2), (8, 16, 1), (16, 16, 2)]


class ContextualAcousticModel(BaseEstimator):
    """Estimator for mel-spectrogram segments conditioned on text context."""

    def __init__(self, n_phonemes: int = 12, mel_channels: int = 16,
                 embed_dim: int = 32, encoder_dim: int = 32,
                 context_dim: int = 16, token_count: int = 8,
                 attn_heads: int = 4,
                 attn_dim: int = 16, decoder_dim: int = 64,
                 prenet_dim: int = 32, location_filters: int = 4,
                 location_kernel: int = 7,
                 iterations: int = 600, batch_size: int = 8,
                 lr: float = 1e-3, l2_weight: float = 1e-6,
                 adam_beta1: float = 0.9, adam_beta2: float = 0.999,
                 adam_eps: float = 1e-6, stop_threshold: float = 0.5,
                 max_frames_per_word: int = 20, teacher_noise: float = 0.2,
                 prenet_skip_channels: int = 2, seed: int = 0):
        self.n_phonemes = n_phonemes
        self.mel_channels = mel_channels
        self.embed_dim = embed_dim
        self.encoder_dim = encoder_dim
        self.context_dim = context_dim
        self.token_count = token_count
        self.attn_heads = attn_heads
        self.attn_dim = attn_dim
        self.decoder_dim = decoder_dim
        self.prenet_dim = prenet_dim
        self.location_filters = location_filters
        self.location_kernel = location_kernel
        self.iterations = iterations
        self.batch_size = batch_size
        self.lr = lr
        self.l2_weight = l2_weight
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self.stop_threshold = stop_threshold
        self.max_frames_per_word = max_frames_per_word
        self.teacher_noise = teacher_noise
        self.prenet_skip_channels = prenet_skip_channels
        self.seed = seed

    # ------------------------------------------------------------------
    # parameters

    def build_params(self) -> "ContextualAcousticModel":
        """Initialize the parameter store (idempotent companion to fit)."""
        require(self.encoder_dim % 2 == 0, "encoder_dim must be even (bi-GRU)")
        rng = np.random.default_rng(self.seed)
        p = ParamStore()
        half = self.encoder_dim // 2
        p.create("encoder/embed", (self.n_phonemes, self.embed_dim), rng)
        p.create("encoder/conv/w", (self.encoder_dim, 5, self.embed_dim), rng,
                 fan_in=5 * self.embed_dim)
        p.create("encoder/conv/b", (self.encoder_dim,), rng, zero=True)
        for side in ("fwd", "bwd"):
            p.create(f"encoder/gru_{side}/w_ih", (3 * half, self.encoder_dim), rng)
            p.create(f"encoder/gru_{side}/w_hh", (3 * half, half), rng)
            p.create(f"encoder/gru_{side}/b_ih", (3 * half,), rng, zero=True)
            p.create(f"encoder/gru_{side}/b_hh", (3 * half,), rng, zero=True)

        width = self.encoder_dim
        for i, (c_in, c_out, stride) in enumerate(_CONV_CHANNELS):
            p.create(f"context/conv{i}/w", (c_out, c_in, 3, 3), rng)
            p.create(f"context/conv{i}/b", (c_out,), rng, zero=True)
            if stride == 2:
                width = (width - 1) // 2 + 1
        ctx_in = _CONV_CHANNELS[-1][1] * width
        p.create("context/gru/w_ih", (3 * self.context_dim, ctx_in), rng)
        p.create("context/gru/w_hh", (3 * self.context_dim, self.context_dim), rng)
        p.create("context/gru/b_ih", (3 * self.context_dim,), rng, zero=True)
        p.create("context/gru/b_hh", (3 * self.context_dim,), rng, zero=True)
        require(self.context_dim % self.attn_heads == 0,
                "context_dim must divide into attention heads")
        p.create("context/null_past", (self.context_dim,), rng)
        p.create("context/null_future", (self.context_dim,), rng)
        p.create("context/tokens", (self.token_count, self.context_dim), rng)
        # sharpens token attention; near-uniform weights otherwise make the
        # embedding insensitive to context content
        p.add("context/attn_gain", np.asarray([3.0]))
        p.create("context/query/w", (self.context_dim, 2 * self.context_dim), rng)
        p.create("context/query/b", (self.context_dim,), rng, zero=True)
        p.create("context/out/w", (self.context_dim, self.context_dim), rng)
        p.create("context/out/b", (self.context_dim,), rng, zero=True)

        mem_dim = self.encoder_dim + self.context_dim
        require(0 <= self.prenet_skip_channels < self.mel_channels,
                "prenet_skip_channels out of range")
        p.create("decoder/prenet/w",
                 (self.prenet_dim, self.mel_channels - self.prenet_skip_channels),
                 rng)
        p.create("decoder/prenet/b", (self.prenet_dim,), rng, zero=True)
        p.create("decoder/attn/mem_w", (self.attn_dim, mem_dim), rng)
        p.create("decoder/attn/query_w", (self.attn_dim, self.decoder_dim), rng)
        p.create("decoder/attn/loc_conv", (self.location_filters,
                                           self.location_kernel, 1), rng,
                 fan_in=self.location_kernel)
        p.create("decoder/attn/loc_w", (self.attn_dim, self.location_filters), rng)
        p.create("decoder/attn/v", (self.attn_dim,), rng)
        gru1_in = self.prenet_dim + mem_dim
        p.create("decoder/gru1/w_ih", (3 * self.decoder_dim, gru1_in), rng)
        p.create("decoder/gru1/w_hh", (3 * self.decoder_dim, self.decoder_dim), rng)
        p.create("decoder/gru1/b_ih", (3 * self.decoder_dim,), rng, zero=True)
        p.create("decoder/gru1/b_hh", (3 * self.decoder_dim,), rng, zero=True)
        p.create("decoder/gru2/w_ih", (3 * self.decoder_dim, self.decoder_dim), rng)
        p.create("decoder/gru2/w_hh", (3 * self.decoder_dim, self.decoder_dim), rng)
        p.create("decoder/gru2/b_ih", (3 * self.decoder_dim,), rng, zero=True)
        p.create("decoder/gru2/b_hh", (3 * self.decoder_dim,), rng, zero=True)
        feat_dim = self.decoder_dim + mem_dim
        p.create("decoder/mel/w", (self.mel_channels, feat_dim), rng)
        p.create("decoder/mel/b", (self.mel_channels,), rng, zero=True)
        p.create("decoder/stop/w", (1, feat_dim), rng)
        p.create("decoder/stop/b", (1,), rng, zero=True)
        self.params_ = p
        return self

    # ------------------------------------------------------------------
    # forward pieces

    def _gru_pass(self, xs: Tensor, prefix: str, hidden: int, reverse: bool = False):
        p = self.params_
        if reverse:
            xs = N.take_rows(xs, np.arange(xs.shape[0] - 1, -1, -1))
        states = N.gru_sequence(xs, Tensor(np.zeros(hidden)),
                                p[f"{prefix}/w_ih"], p[f"{prefix}/w_hh"],
                                p[f"{prefix}/b_ih"], p[f"{prefix}/b_hh"])
        if reverse:
            states = N.take_rows(states, np.arange(states.shape[0] - 1, -1, -1))
        return states

    def encode_segment(self, phonemes) -> Tensor:
        """Per-position encoding matrix (len, encoder_dim) for a phoneme run."""
        phonemes = list(phonemes)
        require(len(phonemes) > 0, "cannot encode an empty phoneme sequence")
        for ph in phonemes:
            if not 0 <= int(ph) < self.n_phonemes:
                raise ValueError(f"unknown phoneme id {ph}")
        p = self.params_
        embedded = N.take_rows(p["encoder/embed"], phonemes)
        conved = N.tanh(N.conv1d_seq(embedded, p["encoder/conv/w"],
                                     bias=p["encoder/conv/b"], padding=2))
        half = self.encoder_dim // 2
        fwd = self._gru_pass(conved, "encoder/gru_fwd", half)
        bwd = self._gru_pass(conved, "encoder/gru_bwd", half, reverse=True)
        return N.concat([fwd, bwd], axis=1)

    def contextual_encoding(self, phonemes) -> Tensor:
        """Shared contextual-encoder summary (used for both past and future)."""
        p = self.params_
        enc = self.encode_segment(phonemes)
        image = N.reshape(enc, (1, enc.shape[0], enc.shape[1]))
        for i, (_, _, stride) in enumerate(_CONV_CHANNELS):
            image = N.tanh(N.conv2d(image, p[f"context/conv{i}/w"],
                                    bias=p[f"context/conv{i}/b"],
                                    stride=stride, padding=1))
        c, h, w = image.shape
        seq = N.reshape(N.permute(image, (1, 0, 2)), (h, c * w))
        states = N.gru_sequence(seq, Tensor(np.zeros(self.context_dim)),
                                p["context/gru/w_ih"], p["context/gru/w_hh"],
                                p["context/gru/b_ih"], p["context/gru/b_hh"])
        return N.reshape(N.take_rows(states, [h - 1]), (self.context_dim,))

    def context_embed(self, past, future, return_weights: bool = False):
        """Attention-weighted token combination summarizing both context sides.

        Either side may be empty (or None); an absent side contributes its
        learned null vector. Both sides run through the same shared encoder;
        each is fed in boundary-proximity order (the past reversed, the
        future as read), so material adjacent to the current segment carries
        the most recent recurrence state.
        """
        p = self.params_
        side_past = (p["context/null_past"] if not past
                     else self.contextual_encoding(list(reversed(list(past)))))
        side_future = (p["context/null_future"] if not future
                       else self.contextual_encoding(future))
        q = N.concat([side_past, side_future], axis=0)
        query = N.tanh(N.affine(p["context/query/w"], q, p["context/query/b"]))
        head_dim = self.context_dim // self.attn_heads
        mixes, head_weights = [], []
        for h in range(self.attn_heads):
            keys = N.slice_cols(p["context/tokens"], h * head_dim,
                                (h + 1) * head_dim)
            q_h = N.slice_cols(N.reshape(query, (1, self.context_dim)),
                               h * head_dim, (h + 1) * head_dim)
            scores = N.mul(N.matmul(keys, N.reshape(q_h, (head_dim,))),
                           p["context/attn_gain"])
            weights = N.softmax(scores)
            head_weights.append(N.reshape(weights, (1, self.token_count)))
            mixes.append(N.matmul(weights, keys))
        mix = N.concat(mixes, axis=0)
        embedding = N.affine(p["context/out/w"], mix, p["context/out/b"])
        if return_weights:
            return embedding, N.concat(head_weights, axis=0)
        return embedding

    def context_embedding(self, past, future) -> np.ndarray:
        """Inference convenience: context embedding as a plain array."""
        return self.context_embed(past, future).data

    # ------------------------------------------------------------------
    # decoding

    def _decode(self, current, context, n_steps: int | None,
                teacher_mel: np.ndarray | None, max_frames: int | None = None,
                noise_rng: np.random.Generator | None = None):
        """Shared autoregressive decoder loop.

        With `teacher_mel` the ground-truth previous frame feeds each step and
        exactly n_steps frames are produced; otherwise the model's own frames
        feed back and decoding stops on the stop flag or at max_frames.
        `noise_rng` perturbs the fed-back teacher frames (never the loss
        targets) so free-running synthesis tolerates its own frame errors.
        """
        p = self.params_
        enc = self.encode_segment(current)
        length = enc.shape[0]
        context = context if isinstance(context, Tensor) else N.as_tensor(context)
        memory = N.concat([enc, N.tile_rows(context, length)], axis=1)
        mem_proj = N.matmul(memory, N.transpose(p["decoder/attn/mem_w"]))
        h1 = Tensor(np.zeros(self.decoder_dim))
        h2 = Tensor(np.zeros(self.decoder_dim))
        cum_attn = Tensor(np.zeros((length, 1)))
        skip = self.prenet_skip_channels
        prev = Tensor(np.zeros(self.mel_channels - skip))
        frames, stop_logits = [], []
        truncated = False
        step = 0
        limit = n_steps if n_steps is not None else max_frames
        while True:
            pre = N.tanh(N.affine(p["decoder/prenet/w"], prev, p["decoder/prenet/b"]))
            loc = N.conv1d_seq(cum_attn, p["decoder/attn/loc_conv"],
                               padding=(self.location_kernel - 1) // 2)
            loc_proj = N.matmul(loc, N.transpose(p["decoder/attn/loc_w"]))
            query = N.matmul(p["decoder/attn/query_w"], h1)
            combined = N.tanh(N.add(N.add(mem_proj, loc_proj),
                                    N.tile_rows(query, length)))
            attn = N.softmax(N.matmul(combined, p["decoder/attn/v"]))
            cum_attn = N.add(cum_attn, N.reshape(attn, (length, 1)))
            ctx_vec = N.matmul(attn, memory)
            h1 = N.gru_step(N.concat([pre, ctx_vec], axis=0), h1,
                            p["decoder/gru1/w_ih"], p["decoder/gru1/w_hh"],
                            p["decoder/gru1/b_ih"], p["decoder/gru1/b_hh"])
            h2 = N.gru_step(h1, h2, p["decoder/gru2/w_ih"], p["decoder/gru2/w_hh"],
                            p["decoder/gru2/b_ih"], p["decoder/gru2/b_hh"])
            feat = N.concat([h2, ctx_vec], axis=0)
            frame = N.affine(p["decoder/mel/w"], feat, p["decoder/mel/b"])
            stop_logit = N.affine(p["decoder/stop/w"], feat, p["decoder/stop/b"])
            frames.append(N.reshape(frame, (1, self.mel_channels)))
            stop_logits.append(stop_logit)
            step += 1
            if teacher_mel is not None:
                if step >= n_steps:
                    break
                fed = teacher_mel[step - 1, skip:]
                if noise_rng is not None and self.teacher_noise > 0.0:
                    fed = fed + noise_rng.normal(0.0, self.teacher_noise,
                                                 size=fed.shape)
                prev = Tensor(fed)
            else:
                stop_prob = float(1.0 / (1.0 + np.exp(-stop_logit.data[0])))
                if stop_prob > self.stop_threshold:
                    break
                if step >= limit:
                    truncated = True
                    break
                # inference feedback never needs gradients; slicing the raw
                # frame keeps the prosody channels out of the loop here too
                prev = Tensor(frame.data[skip:])
        mel = N.concat(frames, axis=0)
        stops = N.concat(stop_logits, axis=0)
        return mel, stops, truncated

    def synthesize_segment(self, current, context, max_frames: int) -> SynthesisResult:
        """Generate a mel segment; halts on the stop flag or at max_frames.

        A result with `truncated=True` means the cap was hit before the stop
        flag fired.
        """
        require(max_frames >= 1, "max_frames must be >= 1")
        mel, stops, truncated = self._decode(current, context, n_steps=None,
                                             teacher_mel=None, max_frames=max_frames)
        probs = 1.0 / (1.0 + np.exp(-stops.data))
        return SynthesisResult(mel.data, probs, truncated)

    # ------------------------------------------------------------------
    # training

    def reconstruction_loss(self, current, context, target_mel, stop_targets,
                            noise_rng: np.random.Generator | None = None):
        """Teacher-forced mel MSE plus stop BCE; returns (total, mse, bce)."""
        target_mel = np.asarray(target_mel, dtype=np.float64)
        mel, stops, _ = self._decode(current, context,
                                     n_steps=target_mel.shape[0],
                                     teacher_mel=target_mel,
                                     noise_rng=noise_rng)
        mel_term = N.mse(mel, target_mel)
        stop_term = N.bce_with_logits(stops, np.asarray(stop_targets))
        return N.add(mel_term, stop_term), mel_term, stop_term

    def _sample_context(self, sample: WindowSample, lexicon: Lexicon,
                        future_source: str):
        require(future_source in ("truth", "pseudo"),
                f"unknown future source {future_source!r}")
        future_words = (sample.future if future_source == "truth"
                        else sample.pseudo_future)
        if future_source == "pseudo":
            require(future_words is not None, "sample has no pseudo future")
        past_ph = lexicon.phonemes_of_words(sample.past) if sample.past else []
        future_ph = lexicon.phonemes_of_words(future_words) if future_words else []
        return past_ph, future_ph

    def training_loss(self, sample: WindowSample, lexicon: Lexicon,
                      future_source: str = "truth",
                      noise_rng: np.random.Generator | None = None) -> Tensor:
        past_ph, future_ph = self._sample_context(sample, lexicon, future_source)
        context = self.context_embed(past_ph, future_ph)
        total, _, _ = self.reconstruction_loss(
            lexicon.phonemes_of_words(sample.current), context,
            sample.target_mel, sample.stop_targets, noise_rng=noise_rng)
        return total

    def fit(self, samples, lexicon: Lexicon, callback=None) -> "ContextualAcousticModel":
        """Adam training over window samples with ground-truth futures."""
        require(len(samples) > 0, "no training samples")
        if not hasattr(self, "params_"):
            self.build_params()
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0xF17]))
        noise_rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0xA0]))
        curve = []
        batch_iter = batches(samples, self.batch_size, rng)
        for it in range(self.iterations):
            batch = next(batch_iter)
            self.params_.zero_grad()
            total = 0.0
            with N.autograd():
                for sample in batch:
                    loss = N.mul(self.training_loss(sample, lexicon,
                                                    noise_rng=noise_rng),
                                 1.0 / len(batch))
                    total += loss.item() * len(batch)
                    loss.backward()
            mean_loss = total / len(batch)
            if not np.isfinite(mean_loss):
                raise TrainingDivergedError(
                    f"non-finite loss {mean_loss} at iteration {it}")
            self.params_.add_l2(self.l2_weight)
            self.params_.adam_step(lr=self.lr, beta1=self.adam_beta1,
                                   beta2=self.adam_beta2, eps=self.adam_eps)
            curve.append(mean_loss)
            if callback is not None:
                callback(it, mean_loss)
        self.loss_curve_ = curve
        return self

    def validation_mse(self, samples, lexicon: Lexicon,
                       future_source: str = "truth") -> float:
        """Mean teacher-forced mel MSE over samples (no gradient recording)."""
        total = 0.0
        for sample in samples:
            past_ph, future_ph = self._sample_context(sample, lexicon, future_source)
            context = self.context_embed(past_ph, future_ph)
            _, mel_term, _ = self.reconstruction_loss(
                lexicon.phonemes_of_words(sample.current), context,
                sample.target_mel, sample.stop_targets)
            total += mel_term.item()
        return total / len(samples)

    # ------------------------------------------------------------------
    # persistence

    def clone_with_params(self) -> "ContextualAcousticModel":
        """Independent copy sharing nothing with this model."""
        other = ContextualAcousticModel(**self.get_params())
        if hasattr(self, "params_"):
            other.params_ = self.params_.copy()
        return other

    def save(self, path) -> None:
        records = self.params_.state_arrays()
        records["meta/json"] = json.dumps(
            {"kind": "acoustic", **self.get_params()}, sort_keys=True).encode("utf-8")
        N.write_container(path, records)

    @classmethod
    def load(cls, path) -> "ContextualAcousticModel":
        records = N.read_container(path)
        meta = json.loads(records["meta/json"].decode("utf-8"))
        require(meta.pop("kind", None) == "acoustic",
                f"{path} is not an acoustic model checkpoint")
        model = cls(**meta)
        model.params_ = ParamStore.from_state_arrays(records)
        return model
