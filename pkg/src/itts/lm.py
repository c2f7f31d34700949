"""Word-level autoregressive language models and lookahead sampling.

Two interchangeable models expose `next_word_distribution(context)`: a
count-based n-gram with stupid backoff (default: trains in milliseconds,
exactly checkable against corpus statistics) and a small GRU network that
mirrors the autoregressive-neural character of large pretrained models.
Sampling utilities (`top_k_sample`, `generate_lookahead`) work against that
one-method interface.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import numerics as N
from .base import as_id_list, batches, require
from .numerics import ParamStore

START_ID = 0
END_ID = 1
UNK_ID = 2
RESERVED_TOKENS = ("<s>", "</s>", "<unk>")


class Vocabulary:
    """Dense bidirectional word/id map with reserved start, end, unknown ids."""

    def __init__(self, words):
        words = list(words)
        require(len(set(words)) == len(words), "duplicate words in vocabulary")
        require(not (set(words) & set(RESERVED_TOKENS)), "reserved token in word list")
        self._words = list(RESERVED_TOKENS) + words
        self._ids = {w: i for i, w in enumerate(self._words)}

    @classmethod
    def from_sentences(cls, sentences) -> "Vocabulary":
        seen = sorted({w for sent in sentences for w in sent})
        return cls(seen)

    def __len__(self) -> int:
        return len(self._words)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._words == other._words

    @property
    def word_ids(self) -> range:
        """Ids of real words (reserved ids excluded)."""
        return range(len(RESERVED_TOKENS), len(self._words))

    def id_of(self, word: str) -> int:
        return self._ids.get(word, UNK_ID)

    def word_of(self, word_id: int) -> str:
        return self._words[word_id]

    def encode(self, words) -> list[int]:
        return [self.id_of(w) for w in words]

    def decode(self, ids) -> list[str]:
        return [self.word_of(i) for i in ids]

    def to_json(self) -> bytes:
        return json.dumps(self._words[len(RESERVED_TOKENS):]).encode("utf-8")

    @classmethod
    def from_json(cls, blob: bytes) -> "Vocabulary":
        return cls(json.loads(blob.decode("utf-8")))


@dataclass(frozen=True)
class GenerationConfig:
    """Inference-time contract: segment size N, lookahead length L, top-k, seed."""

    segment_words: int = 2
    lookahead_words: int = 5
    top_k: int = 1
    seed: int = 0

    def __post_init__(self):
        require(self.segment_words >= 1, "segment_words must be >= 1")
        require(self.lookahead_words >= 0, "lookahead_words must be >= 0")
        require(self.top_k >= 1, "top_k must be >= 1")


def _as_sentences(X, vocab: Vocabulary | None):
    """Normalize fit input to (list of word-id lists, vocabulary)."""
    rows = [list(getattr(s, "words", s)) for s in X]
    require(len(rows) > 0, "empty corpus")
    if rows and rows[0] and isinstance(rows[0][0], str):
        if vocab is None:
            vocab = Vocabulary.from_sentences(rows)
        rows = [vocab.encode(r) for r in rows]
    else:
        require(vocab is not None, "vocabulary required for id-encoded sentences")
        rows = [as_id_list(r, "sentence", upper=len(vocab)) for r in rows]
    return rows, vocab


class NGramLanguageModel(BaseEstimator):
    """Count-based n-gram model with stupid backoff, normalized per context.

    With backoff=0 the conditional distributions are exact corpus relative
    frequencies; with backoff>0 unseen continuations receive backed-off mass
    from shorter contexts before normalization. Contexts that were never
    observed at a given order fall through to the next shorter order.
    """

    def __init__(self, order: int = 3, backoff: float = 0.4):
        self.order = order
        self.backoff = backoff

    def fit(self, X, vocab: Vocabulary | None = None) -> "NGramLanguageModel":
        require(self.order >= 1, "order must be >= 1")
        require(0.0 <= self.backoff, "backoff must be non-negative")
        sentences, vocab = _as_sentences(X, vocab)
        self.vocab_ = vocab
        counts: list[dict[tuple, Counter]] = [dict() for _ in range(self.order)]
        for words in sentences:
            stream = [START_ID] * (self.order - 1) + list(words) + [END_ID]
            base = self.order - 1
            for pos in range(base, len(stream)):
                token = stream[pos]
                for j in range(self.order):
                    ctx = tuple(stream[pos - j:pos])
                    counts[j].setdefault(ctx, Counter())[token] += 1
        self.counts_ = counts
        size = len(vocab)
        # precompute (ids, relative frequency) arrays per context for queries
        tables: list[dict[tuple, tuple[np.ndarray, np.ndarray]]] = []
        for level in counts:
            table = {}
            for ctx, counter in level.items():
                ids = np.fromiter(sorted(counter), dtype=np.intp)
                freq = np.array([counter[i] for i in ids], dtype=np.float64)
                table[ctx] = (ids, freq / freq.sum())
            tables.append(table)
        self._tables = tables
        unigram = np.zeros(size)
        ids, freq = tables[0][()]
        unigram[ids] = freq
        self._unigram = unigram
        return self

    def _scores(self, ctx: tuple) -> np.ndarray:
        if not ctx:
            return self._unigram.copy()
        entry = self._tables[len(ctx)].get(ctx)
        lower = self._scores(ctx[1:])
        if entry is None:
            return lower
        ids, freq = entry
        vec = np.zeros_like(lower)
        vec[ids] = freq
        if self.backoff > 0.0:
            unseen = vec == 0.0
            vec[unseen] = self.backoff * lower[unseen]
        return vec

    def next_word_distribution(self, context) -> np.ndarray:
        """Conditional distribution over all ids given the observed prefix."""
        ctx = [START_ID] * (self.order - 1) + list(context)
        scores = self._scores(tuple(ctx[len(ctx) - (self.order - 1):]))
        return scores / scores.sum()

    def save(self, path) -> None:
        records: dict[str, np.ndarray | bytes] = {
            "vocab/json": self.vocab_.to_json(),
            "meta/json": json.dumps(
                {"kind": "ngram", "order": self.order, "backoff": self.backoff}
            ).encode("utf-8"),
        }
        for j, level in enumerate(self.counts_):
            rows = []
            for ctx in sorted(level):
                for word in sorted(level[ctx]):
                    rows.append(list(ctx) + [word, level[ctx][word]])
            records[f"ngram/level/{j}"] = np.asarray(rows, dtype=np.int64).reshape(-1, j + 2)
        N.write_container(path, records)

    @classmethod
    def load(cls, path) -> "NGramLanguageModel":
        records = N.read_container(path)
        meta = json.loads(records["meta/json"].decode("utf-8"))
        require(meta.get("kind") == "ngram", f"{path} is not an n-gram checkpoint")
        model = cls(order=meta["order"], backoff=meta["backoff"])
        vocab = Vocabulary.from_json(records["vocab/json"])
        counts: list[dict[tuple, Counter]] = [dict() for _ in range(model.order)]
        for j in range(model.order):
            for row in records[f"ngram/level/{j}"]:
                ctx = tuple(int(v) for v in row[:j])
                counts[j].setdefault(ctx, Counter())[int(row[j])] = int(row[j + 1])
        model.vocab_ = vocab
        model.counts_ = counts
        tables = []
        for level in counts:
            table = {}
            for ctx, counter in level.items():
                ids = np.fromiter(sorted(counter), dtype=np.intp)
                freq = np.array([counter[i] for i in ids], dtype=np.float64)
                table[ctx] = (ids, freq / freq.sum())
            tables.append(table)
        model._tables = tables
        unigram = np.zeros(len(vocab))
        ids, freq = tables[0][()]
        unigram[ids] = freq
        model._unigram = unigram
        return model


class NeuralLanguageModel(BaseEstimator):
    """Tiny GRU language model trained with Adam on corpus sentences."""

    def __init__(self, embed_dim: int = 16, hidden_dim: int = 32,
                 iterations: int = 300, batch_sentences: int = 4,
                 lr: float = 5e-3, l2_weight: float = 1e-6, seed: int = 0):
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.iterations = iterations
        self.batch_sentences = batch_sentences
        self.lr = lr
        self.l2_weight = l2_weight
        self.seed = seed

    def _build_params(self, vocab_size: int) -> ParamStore:
        rng = np.random.default_rng(self.seed)
        store = ParamStore()
        h = self.hidden_dim
        store.create("lm/embed", (vocab_size, self.embed_dim), rng)
        store.create("lm/gru/w_ih", (3 * h, self.embed_dim), rng)
        store.create("lm/gru/w_hh", (3 * h, h), rng)
        store.create("lm/gru/b_ih", (3 * h,), rng, zero=True)
        store.create("lm/gru/b_hh", (3 * h,), rng, zero=True)
        store.create("lm/proj/w", (vocab_size, h), rng)
        store.create("lm/proj/b", (vocab_size,), rng, zero=True)
        return store

    def _sentence_loss(self, words: list[int]):
        p = self.params_
        h = N.Tensor(np.zeros(self.hidden_dim))
        terms = []
        stream = [START_ID] + list(words) + [END_ID]
        for prev, target in zip(stream[:-1], stream[1:]):
            x = N.take_rows(p["lm/embed"], [prev])
            h = N.gru_step(N.reshape(x, (self.embed_dim,)), h,
                           p["lm/gru/w_ih"], p["lm/gru/w_hh"],
                           p["lm/gru/b_ih"], p["lm/gru/b_hh"])
            logits = N.add(N.matmul(p["lm/proj/w"], h), p["lm/proj/b"])
            terms.append(N.cross_entropy_logits(logits, target))
        total = terms[0]
        for t in terms[1:]:
            total = N.add(total, t)
        return total, len(terms)

    def fit(self, X, vocab: Vocabulary | None = None) -> "NeuralLanguageModel":
        sentences, vocab = _as_sentences(X, vocab)
        self.vocab_ = vocab
        self.params_ = self._build_params(len(vocab))
        rng = np.random.default_rng(self.seed)
        curve = []
        batch_iter = batches(sentences, self.batch_sentences, rng)
        for _ in range(self.iterations):
            batch = next(batch_iter)
            self.params_.zero_grad()
            total_tokens = 0
            batch_loss = 0.0
            with N.autograd():
                for words in batch:
                    loss, n_tokens = self._sentence_loss(words)
                    total_tokens += n_tokens
                    batch_loss += loss.item()
                    loss.backward()
            # normalize accumulated gradients to a per-token mean
            for name, tensor in self.params_.items():
                if tensor.grad is not None:
                    tensor.grad /= total_tokens
            self.params_.add_l2(self.l2_weight)
            self.params_.adam_step(lr=self.lr)
            curve.append(batch_loss / total_tokens)
        self.loss_curve_ = curve
        return self

    def next_word_distribution(self, context) -> np.ndarray:
        p = self.params_
        embed = p["lm/embed"].data
        h = np.zeros(self.hidden_dim)
        for word in [START_ID] + list(context):
            h = _gru_forward(embed[word], h, p)
        logits = p["lm/proj/w"].data @ h + p["lm/proj/b"].data
        logits[START_ID] = -np.inf
        z = logits - logits.max()
        e = np.exp(z)
        return e / e.sum()

    def save(self, path) -> None:
        meta = {
            "kind": "neural",
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "iterations": self.iterations,
            "batch_sentences": self.batch_sentences,
            "lr": self.lr,
            "l2_weight": self.l2_weight,
            "seed": self.seed,
        }
        records = self.params_.state_arrays()
        records["vocab/json"] = self.vocab_.to_json()
        records["meta/json"] = json.dumps(meta).encode("utf-8")
        N.write_container(path, records)

    @classmethod
    def load(cls, path) -> "NeuralLanguageModel":
        records = N.read_container(path)
        meta = json.loads(records["meta/json"].decode("utf-8"))
        require(meta.get("kind") == "neural", f"{path} is not a neural LM checkpoint")
        model = cls(**{k: v for k, v in meta.items() if k != "kind"})
        model.vocab_ = Vocabulary.from_json(records["vocab/json"])
        model.params_ = ParamStore.from_state_arrays(records)
        return model


def _gru_forward(x: np.ndarray, h: np.ndarray, p: ParamStore) -> np.ndarray:
    hidden = h.shape[0]
    gi = p["lm/gru/w_ih"].data @ x + p["lm/gru/b_ih"].data
    gh = p["lm/gru/w_hh"].data @ h + p["lm/gru/b_hh"].data
    r = 1.0 / (1.0 + np.exp(-(gi[:hidden] + gh[:hidden])))
    z = 1.0 / (1.0 + np.exp(-(gi[hidden:2 * hidden] + gh[hidden:2 * hidden])))
    n = np.tanh(gi[2 * hidden:] + r * gh[2 * hidden:])
    return (1.0 - z) * n + z * h


def load_language_model(path):
    """Load whichever LM kind the checkpoint holds."""
    records = N.read_container(path)
    meta = json.loads(records["meta/json"].decode("utf-8"))
    if meta.get("kind") == "ngram":
        return NGramLanguageModel.load(path)
    if meta.get("kind") == "neural":
        return NeuralLanguageModel.load(path)
    raise ValueError(f"{path}: unknown language model kind {meta.get('kind')!r}")


def sequence_log_prob(lm, words) -> float:
    """Log probability of a word sequence as a sum of stepwise conditionals."""
    total = 0.0
    context: list[int] = []
    for word in words:
        p = lm.next_word_distribution(context)[int(word)]
        total += math.log(p) if p > 0.0 else -math.inf
        context.append(int(word))
    return total


def top_k_sample(lm, context, k: int, rng: np.random.Generator) -> int:
    """Draw from the renormalized k most probable continuations.

    Ties at the k-th rank break toward the lowest id; k=1 is deterministic
    argmax under the same rule.
    """
    require(k >= 1, "k must be >= 1")
    dist = lm.next_word_distribution(context)
    order = np.lexsort((np.arange(dist.size), -dist))
    top = order[:k]
    if k == 1:
        return int(top[0])
    probs = dist[top]
    probs = probs / probs.sum()
    return int(rng.choice(top, p=probs))


def generate_lookahead(lm, observed, cfg: GenerationConfig,
                       rng: np.random.Generator) -> list[int]:
    """Sample up to `cfg.lookahead_words` continuation words autoregressively.

    Each sampled word feeds back into the context; sampling stops early when
    the end-of-sentence id comes up (the end id itself is not returned).
    """
    context = list(observed)
    out: list[int] = []
    for _ in range(cfg.lookahead_words):
        word = top_k_sample(lm, context, cfg.top_k, rng)
        if word == END_ID:
            break
        out.append(word)
        context.append(word)
    return out
