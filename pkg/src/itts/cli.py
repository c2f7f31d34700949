"""Command-line entry point for the whole pipeline.

Subcommands: corpus-gen, train-lm, train-tts, finetune, synth,
analyze-cossim, evaluate, plot. Configuration comes from defaults, then an
optional line-oriented `key = value` file, then flags (highest precedence).
Every run is deterministic given its configuration and seed; outputs are
only overwritten with --force.

Exit codes: 0 success, 1 runtime failure, 2 missing input artifact,
3 configuration validation failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .acoustic import ContextualAcousticModel
from .corpus import (
    corpus_windows,
    load_corpus,
    save_corpus,
    synth_corpus,
    train_val_test_split,
    training_windows,
    write_mel,
)
from .engine import (
    Condition,
    EngineModels,
    run_stream,
    step,
    write_latency_csv,
    write_wav,
    StreamState,
    _GuardedSource,
    ConditionKind,
)
from .evaluation import (
    CosSimVariant,
    OracleDecoder,
    condition_report,
    cossim_analysis,
    write_condition_csv,
    write_cossim_csv,
)
from .finetune import FinetuneConfig, build_finetune_samples, finetune
from .lm import (
    GenerationConfig,
    NeuralLanguageModel,
    NGramLanguageModel,
    load_language_model,
)
from . import plots

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_MISSING_INPUT = 2
EXIT_CONFIG = 3


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class MissingInputError(FileNotFoundError):
    pass


@dataclass(frozen=True)
class KeySpec:
    name: str
    kind: type
    default: object
    help: str
    minimum: float | None = None
    maximum: float | None = None
    choices: tuple | None = None


_KEY_SPECS = [
    KeySpec("seed", int, 0, "global RNG seed (env ITTS_SEED overrides default)", 0),
    KeySpec("sentences", int, 200, "corpus size in sentences", 20, 100000),
    KeySpec("vocab_size", int, 40, "number of distinct words", 10, 5000),
    KeySpec("phonemes", int, 12, "phoneme inventory size", 4, 30),
    KeySpec("mel_channels", int, 16, "mel channels", 8, 64),
    KeySpec("segment_words", int, 2, "words per incremental segment (N)", 1, 16),
    KeySpec("lookahead_words", int, 5, "lookahead length in words (L)", 0, 64),
    KeySpec("top_k", int, 1, "top-k truncation for sampling", 1, 10000),
    KeySpec("alpha_sim", float, 1e-3, "similarity loss weight", 0.0),
    KeySpec("lm_kind", str, "ngram", "language model kind", choices=("ngram", "neural")),
    KeySpec("lm_order", int, 3, "n-gram order", 1, 8),
    KeySpec("lm_backoff", float, 0.4, "stupid-backoff factor", 0.0, 1.0),
    KeySpec("lm_iterations", int, 300, "neural LM training iterations", 0),
    KeySpec("tts_iterations", int, 1200, "acoustic model training iterations", 0),
    KeySpec("ft_iterations", int, 200, "fine-tuning iterations", 0),
    KeySpec("batch_size", int, 8, "training batch size", 1, 1024),
    KeySpec("lr", float, 1e-3, "acoustic training learning rate", 0.0),
    KeySpec("ft_lr", float, 1e-4, "fine-tuning learning rate", 0.0),
    KeySpec("l2_weight", float, 1e-6, "L2 regularization weight", 0.0),
    KeySpec("adam_beta1", float, 0.9, "Adam beta1", 0.0, 1.0),
    KeySpec("adam_beta2", float, 0.999, "Adam beta2", 0.0, 1.0),
    KeySpec("adam_eps", float, 1e-6, "Adam epsilon", 0.0),
    KeySpec("window_lengths", str, "3,5,7",
            "training window lengths in segments (analysis windows use 3)"),
    KeySpec("conditions", str, "independent,unicontext,bicontext,bicontext_truth",
            "comma-separated condition list"),
    KeySpec("variants", str, "k1,k50,random", "comma-separated cossim variants"),
    KeySpec("jobs", int, 1, "sentence-level parallel workers", 1, 256),
]
_SPEC_BY_NAME = {spec.name: spec for spec in _KEY_SPECS}


def _coerce(spec: KeySpec, raw) -> object:
    try:
        if spec.kind is int:
            value = int(str(raw), 0)
        elif spec.kind is float:
            value = float(raw)
        else:
            value = str(raw)
    except ValueError:
        raise ConfigError(spec.name, f"cannot parse {raw!r} as {spec.kind.__name__}")
    if spec.minimum is not None and value < spec.minimum:
        raise ConfigError(spec.name, f"{value} below minimum {spec.minimum}")
    if spec.maximum is not None and value > spec.maximum:
        raise ConfigError(spec.name, f"{value} above maximum {spec.maximum}")
    if spec.choices is not None and value not in spec.choices:
        raise ConfigError(spec.name, f"{value!r} not one of {spec.choices}")
    return value


def parse_config_text(text: str) -> dict:
    """Parse line-oriented `key = value` text; rejects unknown keys."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}", f"expected key = value, got {line!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in _SPEC_BY_NAME:
            raise ConfigError(key, "unknown configuration key")
        out[key] = _coerce(_SPEC_BY_NAME[key], raw)
    return out


def dump_config_text(values: dict) -> str:
    lines = [f"{spec.name} = {values[spec.name]}" for spec in _KEY_SPECS]
    return "\n".join(lines) + "\n"


def resolve_config(args: argparse.Namespace) -> dict:
    """defaults <- ITTS_SEED <- config file <- explicit flags."""
    values = {spec.name: spec.default for spec in _KEY_SPECS}
    env_seed = os.environ.get("ITTS_SEED")
    if env_seed is not None:
        values["seed"] = _coerce(_SPEC_BY_NAME["seed"], env_seed)
    config_path = getattr(args, "config", None)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise MissingInputError(f"config file not found: {path}")
        values.update(parse_config_text(path.read_text()))
    for spec in _KEY_SPECS:
        flag_value = getattr(args, spec.name, None)
        if flag_value is not None:
            values[spec.name] = _coerce(spec, flag_value)
    return values


def _require_input(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"{what} not found: {path}")
    return path


def _check_output(path, force: bool) -> Path:
    path = Path(path)
    if path.exists() and not force:
        raise RuntimeError(f"output exists (use --force to overwrite): {path}")
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _load_corpus(path):
    _require_input(path, "corpus directory")
    return load_corpus(path)


def _split(corpus, seed: int):
    return train_val_test_split(corpus.utterances, seed=seed)


def _generation_config(values: dict) -> GenerationConfig:
    return GenerationConfig(values["segment_words"], values["lookahead_words"],
                            values["top_k"], values["seed"])


# ---------------------------------------------------------------------------
# subcommand implementations


def cmd_corpus_gen(args) -> int:
    values = resolve_config(args)
    out_dir = Path(args.out)
    if out_dir.exists() and any(out_dir.iterdir()) and not args.force:
        raise RuntimeError(f"output exists (use --force to overwrite): {out_dir}")
    corpus = synth_corpus(n_sentences=values["sentences"],
                          vocab_size=values["vocab_size"],
                          n_phonemes=values["phonemes"],
                          mel_channels=values["mel_channels"],
                          seed=values["seed"])
    save_corpus(corpus, out_dir)
    print(f"corpus-gen: wrote {len(corpus.utterances)} utterances to {out_dir}")
    return EXIT_OK


def cmd_train_lm(args) -> int:
    values = resolve_config(args)
    corpus = _load_corpus(args.corpus)
    out = _check_output(args.out, args.force)
    train, _, _ = _split(corpus, values["seed"])
    sentences = [u.sentence.words for u in train]
    if values["lm_kind"] == "ngram":
        model = NGramLanguageModel(order=values["lm_order"],
                                   backoff=values["lm_backoff"])
    else:
        model = NeuralLanguageModel(iterations=values["lm_iterations"],
                                    seed=values["seed"])
    model.fit(sentences, vocab=corpus.vocab)
    model.save(out)
    print(f"train-lm: {values['lm_kind']} model on {len(sentences)} sentences -> {out}")
    return EXIT_OK


def cmd_train_tts(args) -> int:
    values = resolve_config(args)
    corpus = _load_corpus(args.corpus)
    out = _check_output(args.out, args.force)
    train, val, _ = _split(corpus, values["seed"])
    lengths = tuple(int(v) for v in values["window_lengths"].split(","))
    samples = training_windows(train, segment_words=values["segment_words"],
                               window_lengths=lengths)
    model = ContextualAcousticModel(
        n_phonemes=corpus.lexicon.n_phonemes,
        mel_channels=corpus.mel_channels,
        iterations=values["tts_iterations"],
        batch_size=values["batch_size"],
        lr=values["lr"], l2_weight=values["l2_weight"],
        adam_beta1=values["adam_beta1"], adam_beta2=values["adam_beta2"],
        adam_eps=values["adam_eps"], seed=values["seed"])

    def progress(it, loss):
        if it % 100 == 0:
            print(f"train-tts: iteration {it} loss {loss:.4f}", flush=True)

    model.fit(samples, corpus.lexicon, callback=progress)
    model.save(out)
    print(f"train-tts: {values['tts_iterations']} iterations on "
          f"{len(samples)} windows -> {out}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    values = resolve_config(args)
    corpus = _load_corpus(args.corpus)
    model = ContextualAcousticModel.load(_require_input(args.model, "model"))
    lm = load_language_model(_require_input(args.lm, "language model"))
    out = _check_output(args.out or f"{args.model}.ft", args.force)
    train, _, _ = _split(corpus, values["seed"])
    lengths = tuple(int(v) for v in values["window_lengths"].split(","))
    samples = training_windows(train, segment_words=values["segment_words"],
                               window_lengths=lengths)
    cfg = _generation_config(values)
    rng = np.random.default_rng(values["seed"])
    work = build_finetune_samples(samples, lm, cfg, rng)
    fcfg = FinetuneConfig(lm=lm, generation=cfg, alpha_sim=values["alpha_sim"],
                          lr=values["ft_lr"], iterations=values["ft_iterations"],
                          batch_size=values["batch_size"], seed=values["seed"])
    tuned = finetune(model, work, fcfg, corpus.lexicon)
    tuned.save(out)
    print(f"finetune: {values['ft_iterations']} iterations, "
          f"alpha_sim={values['alpha_sim']} -> {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    values = resolve_config(args)
    corpus = _load_corpus(args.corpus)
    model = ContextualAcousticModel.load(_require_input(args.model, "model"))
    condition = Condition.parse(args.condition)
    lm = None
    if condition.kind is ConditionKind.BICONTEXT:
        if not args.lm:
            raise MissingInputError("bicontext synthesis needs --lm")
        lm = load_language_model(_require_input(args.lm, "language model"))
    out = _check_output(args.out, args.force)

    words = args.text.split()
    unknown = [w for w in words if corpus.vocab.id_of(w) == 2]
    if unknown:
        raise ConfigError("text", f"words not in vocabulary: {unknown}")
    word_ids = corpus.vocab.encode(words)

    cfg = _generation_config(values)
    models = EngineModels(model, lm, corpus.lexicon)
    rng = np.random.default_rng(values["seed"])
    state = StreamState()
    source = _GuardedSource(word_ids)
    n = cfg.segment_words
    for start in range(0, len(word_ids), n):
        segment = source.read(start, start + n)
        true_future = None
        observed_ahead = 0
        if condition.kind is ConditionKind.BICONTEXT_TRUTH:
            true_future = source.read(start + n, start + n + cfg.lookahead_words)
            observed_ahead = len(true_future)
        _, _, record = step(state, segment, condition, models, cfg, rng,
                            true_future=true_future,
                            lookahead_observed=observed_ahead)
        print(f"step={record.step} words_required={record.words_required} "
              f"compute_ms={record.compute_ms:.1f}", flush=True)
    write_wav(out, state.waveform)
    if args.latency_csv:
        write_latency_csv(_check_output(args.latency_csv, args.force), state.records)
    if args.mel_out:
        write_mel(_check_output(args.mel_out, args.force),
                  np.concatenate(state.mels, axis=0))
    print(f"synth: {len(state.records)} segments, "
          f"{state.waveform.size} samples -> {out}")
    return EXIT_OK


def _models_by_flag(args, corpus):
    model = ContextualAcousticModel.load(_require_input(args.model, "model"))
    lm = load_language_model(_require_input(args.lm, "language model"))
    base = EngineModels(model, lm, corpus.lexicon)
    by_flag = {False: base, True: base}
    if getattr(args, "ft_model", None):
        tuned = ContextualAcousticModel.load(
            _require_input(args.ft_model, "fine-tuned model"))
        by_flag[True] = EngineModels(tuned, lm, corpus.lexicon)
    return by_flag


def cmd_analyze_cossim(args) -> int:
    values = resolve_config(args)
    corpus = _load_corpus(args.corpus)
    by_flag = _models_by_flag(args, corpus)
    out = _check_output(args.out, args.force)
    _, _, test = _split(corpus, values["seed"])
    variants = [CosSimVariant.parse(v) for v in values["variants"].split(",")]
    cfg = _generation_config(values)
    curves = cossim_analysis(test, variants, by_flag, cfg,
                             seed=values["seed"], jobs=values["jobs"])
    write_cossim_csv(out, curves)
    for curve in curves:
        print(f"analyze-cossim: {curve.label} overall mean "
              f"{curve.overall_mean():.4f} over {sum(curve.counts.values())} points")
    print(f"analyze-cossim: wrote {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    values = resolve_config(args)
    corpus = _load_corpus(args.corpus)
    by_flag = _models_by_flag(args, corpus)
    out = _check_output(args.out, args.force)
    _, _, test = _split(corpus, values["seed"])
    conditions = [Condition.parse(c) for c in values["conditions"].split(",")]
    cfg = _generation_config(values)
    decoder = OracleDecoder(corpus)
    reports = condition_report(test, conditions, by_flag, cfg, decoder,
                               seed=values["seed"], jobs=values["jobs"])
    write_condition_csv(out, reports)
    for r in reports:
        print(f"evaluate: {r.condition} per={r.error_rate:.4f} "
              f"words_required={r.mean_words_required:.2f}")
    print(f"evaluate: wrote {out}")
    return EXIT_OK


def cmd_plot(args) -> int:
    if not args.cossim and not args.report:
        raise ConfigError("plot", "need --cossim or --report input CSV")
    out = _check_output(args.out, args.force)
    if args.cossim:
        path = _require_input(args.cossim, "cossim CSV")
        series: dict[str, tuple[list[float], list[float]]] = {}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                xs, ys = series.setdefault(row["variant"], ([], []))
                xs.append(float(row["t"]))
                ys.append(float(row["mean_cossim"]))
        plots.line_chart(out, series, "Context embedding similarity by step",
                         "time step t", "mean cosine similarity")
    else:
        path = _require_input(args.report, "condition report CSV")
        labels, values = [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                labels.append(row["condition"])
                values.append(float(row["per"]))
        plots.bar_chart(out, labels, values, "Segment error rate by condition",
                        "phoneme error rate")
    print(f"plot: wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_config_flags(parser: argparse.ArgumentParser, keys) -> None:
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--force", action="store_true",
                        help="overwrite existing outputs")
    for name in keys:
        spec = _SPEC_BY_NAME[name]
        flag = "--" + name.replace("_", "-")
        parser.add_argument(flag, dest=name, default=None, metavar=str(spec.default),
                            help=f"{spec.help} (default {spec.default})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="itts",
        description="Incremental text-to-speech with language-model pseudo lookahead")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("corpus-gen", help="generate a synthetic aligned corpus")
    p.add_argument("--out", required=True, help="output corpus directory")
    _add_config_flags(p, ["seed", "sentences", "vocab_size", "phonemes",
                          "mel_channels"])
    p.set_defaults(fn=cmd_corpus_gen)

    p = sub.add_parser("train-lm", help="train the lookahead language model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p, ["seed", "lm_kind", "lm_order", "lm_backoff",
                          "lm_iterations"])
    p.set_defaults(fn=cmd_train_lm)

    p = sub.add_parser("train-tts", help="train the acoustic model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p, ["seed", "segment_words", "window_lengths",
                          "tts_iterations", "batch_size", "lr", "l2_weight",
                          "adam_beta1", "adam_beta2", "adam_eps"])
    p.set_defaults(fn=cmd_train_tts)

    p = sub.add_parser("finetune", help="language-model-guided fine-tuning")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--lm", required=True)
    p.add_argument("--out", help="output checkpoint (default <model>.ft)")
    _add_config_flags(p, ["seed", "segment_words", "window_lengths",
                          "lookahead_words", "top_k", "alpha_sim", "ft_lr",
                          "ft_iterations", "batch_size"])
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("synth", help="stream synthesis for a sentence")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--lm")
    p.add_argument("--condition", required=True,
                   help="independent | unicontext | bicontext | bicontext_truth")
    p.add_argument("--text", required=True, help="space-separated corpus words")
    p.add_argument("--out", required=True, help="output WAV path")
    p.add_argument("--latency-csv", help="also write per-step latency CSV")
    p.add_argument("--mel-out", help="also write the concatenated mel")
    _add_config_flags(p, ["seed", "segment_words", "lookahead_words", "top_k"])
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("analyze-cossim",
                       help="per-step embedding similarity analysis")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--lm", required=True)
    p.add_argument("--ft-model")
    p.add_argument("--out", required=True)
    _add_config_flags(p, ["seed", "segment_words", "lookahead_words", "top_k",
                          "variants", "jobs"])
    p.set_defaults(fn=cmd_analyze_cossim)

    p = sub.add_parser("evaluate", help="condition comparison with error rates")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--lm", required=True)
    p.add_argument("--ft-model")
    p.add_argument("--out", required=True)
    _add_config_flags(p, ["seed", "segment_words", "lookahead_words", "top_k",
                          "conditions", "jobs"])
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("plot", help="render CSV reports as SVG charts")
    p.add_argument("--cossim", help="cossim CSV input")
    p.add_argument("--report", help="condition report CSV input")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"error: config: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingInputError as err:
        print(f"error: missing input: {err}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except Exception as err:  # noqa: BLE001 - single machine-parsable line
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
