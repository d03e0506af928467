"""Command-line entry point: ``rdsgan {convert,synth,train,eval,generate,gradcheck}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attention import forward_bag, generated_rank
from .checkpoint import VERSION as CKPT_VERSION
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .corpus import (
    CorpusError,
    SynthConfig,
    convert_nyt_to_jsonl,
    file_checksum,
    load_corpus,
    load_vocabs,
    save_vocabs,
    synthesize_mentions,
    vocab_fingerprint,
    write_jsonl,
    write_nyt_tsv,
)
from .evaluation import compute_metrics, emit_report, predict
from .gradcheck import DEFAULT_EPS
from .params import Model, ModelConfig
from .trainer import TrainConfig, Trainer, TrainingError, encode_real, generate_for_bags, write_log

logger = logging.getLogger("rdsgan")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

MODEL_KEYS = ("max_len", "word_dim", "pos_dim", "n_filters", "window", "gen_hidden", "disc_hidden", "dropout", "dtype")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclasses.dataclass(frozen=True)
class RunConfig:
    train_corpus: str
    test_corpus: str | None = None
    corpus_format: str = "jsonl"
    output_dir: str = "run"
    min_count: int = 1
    checkpoint_every: int = 0
    max_len: int = 120
    word_dim: int = 50
    pos_dim: int = 10
    n_filters: int = 230
    window: int = 3
    gen_hidden: int = 64
    disc_hidden: int = 64
    dropout: float = 0.5
    dtype: str = "float32"
    train: TrainConfig = TrainConfig()

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        own = {f.name for f in dataclasses.fields(cls)} - {"train"}
        train_keys = {f.name for f in dataclasses.fields(TrainConfig)}
        unknown = sorted(set(doc) - own - train_keys)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        if "train_corpus" not in doc:
            raise UsageError("config needs train_corpus")
        try:
            train = TrainConfig(**{k: v for k, v in doc.items() if k in train_keys})
            return cls(train=train, **{k: v for k, v in doc.items() if k in own})
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid config: {exc}") from None

    def to_dict(self) -> dict:
        doc = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "train"}
        doc.update(dataclasses.asdict(self.train))
        return dict(sorted(doc.items()))

    def model_config(self, vocab_size: int, n_relations: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, n_relations=n_relations, **{k: getattr(self, k) for k in MODEL_KEYS})


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _read_run_config(path: str, overrides: dict) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(doc)


def _resolve(base: Path, p: str | None) -> Path | None:
    if p is None:
        return None
    p = Path(p)
    return p if p.is_absolute() else base / p


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_convert(args) -> int:
    written, dropped = convert_nyt_to_jsonl(args.input, args.output)
    print(f"wrote {written} mentions to {args.output} ({dropped} dropped: entity not in sentence)")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        n_relations=args.n_relations,
        n_pairs=args.n_pairs,
        min_instances=args.min_instances,
        max_instances=args.max_instances,
        vocab_size=args.vocab_size,
        noise_rate=args.noise_rate,
        na_fraction=args.na_fraction,
        min_sentence=args.min_sentence,
        max_sentence=args.max_sentence,
        split=args.split,
    )
    pairs = synthesize_mentions(cfg, args.seed)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    mentions = [m for m, _ in pairs]
    if args.format == "jsonl":
        write_jsonl(mentions, out, header=f"synthetic seed={args.seed}")
    else:
        write_nyt_tsv(mentions, out)
    sidecar = out.with_name(out.name + ".noise.json")
    sidecar.write_text(json.dumps({"noise_flags": [bool(f) for _, f in pairs]}) + "\n")
    print(f"wrote {len(mentions)} mentions to {out} and noise oracle to {sidecar}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg_path = Path(args.config)
    run = _read_run_config(args.config, {"seed": args.seed, "output_dir": args.out_dir})
    base = cfg_path.parent
    out_dir = _resolve(Path.cwd(), run.output_dir) if args.out_dir else _resolve(base, run.output_dir)
    train_path = _resolve(base, run.train_corpus).resolve()
    test_path = _resolve(base, run.test_corpus)
    test_path = test_path.resolve() if test_path is not None else None
    run = dataclasses.replace(
        run,
        train_corpus=str(train_path),
        test_corpus=str(test_path) if test_path is not None else None,
        output_dir=str(out_dir.resolve()),
    )
    corpus = load_corpus(train_path, run.corpus_format, "train", max_len=run.max_len, min_count=run.min_count)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_cfg = run.model_config(len(corpus.token_vocab), len(corpus.relation_vocab))
    fingerprint = vocab_fingerprint(corpus.token_vocab, corpus.relation_vocab)
    model = Model.init(model_cfg, seed=run.train.seed, vocab_fingerprint=fingerprint)

    (out_dir / "config.json").write_text(canonical_json(run.to_dict()))
    save_vocabs(out_dir / "vocab.json", corpus.token_vocab, corpus.relation_vocab)

    trainer = Trainer(run.train, corpus, model)
    for it in range(run.train.outer_iterations):
        trainer.run_iteration(it)
        if run.checkpoint_every and (it + 1) % run.checkpoint_every == 0:
            (out_dir / "checkpoints").mkdir(exist_ok=True)
            save_checkpoint(model, out_dir / "checkpoints" / f"iter_{it + 1:06d}.ckpt")
    save_checkpoint(model, out_dir / "model.ckpt")
    write_log(trainer.log, out_dir / "train_log.jsonl")

    corpora = {str(run.train_corpus): file_checksum(train_path)}
    if test_path is not None and test_path.exists():
        corpora[str(run.test_corpus)] = file_checksum(test_path)
    manifest = {
        "config_sha256": hashlib.sha256(canonical_json(run.to_dict()).encode()).hexdigest(),
        "corpora": corpora,
        "seed": run.train.seed,
        "threads": args.threads,
        "vocab_fingerprint": fingerprint,
        "dropped_mentions": corpus.dropped,
        "versions": {"rdsgan": __version__, "numpy": np.__version__, "checkpoint_format": CKPT_VERSION},
        "artifacts": sorted(p.relative_to(out_dir).as_posix() for p in out_dir.rglob("*") if p.is_file()),
    }
    (out_dir / "manifest.json").write_text(canonical_json(manifest))
    print(f"trained {run.train.outer_iterations} iterations; outputs in {out_dir}")
    return EXIT_OK


def _load_run(checkpoint: str, run_dir: str | None):
    ckpt = Path(checkpoint)
    if not ckpt.exists():
        raise UsageError(f"checkpoint {ckpt} not found")
    run_dir = Path(run_dir) if run_dir else ckpt.parent
    try:
        doc = json.loads((run_dir / "config.json").read_text())
    except OSError:
        raise UsageError(f"no config.json in {run_dir}; pass --run-dir") from None
    run = RunConfig.from_dict(doc)
    vocabs = load_vocabs(run_dir / "vocab.json")
    model_cfg = run.model_config(len(vocabs[0]), len(vocabs[1]))
    model = load_checkpoint(ckpt, model_cfg)
    model.vocab_fingerprint = vocab_fingerprint(*vocabs)
    return run, run_dir, vocabs, model


def cmd_eval(args) -> int:
    run, run_dir, vocabs, model = _load_run(args.checkpoint, args.run_dir)
    test = args.test or (str(_resolve(run_dir, run.test_corpus)) if run.test_corpus else None)
    if test is None:
        raise UsageError("no test corpus: pass --test or set test_corpus in the config")
    if args.test is None and not Path(test).exists():
        # config paths are relative to the original config location
        raise UsageError(f"test corpus {test} not found; pass --test")
    fmt = args.format or run.corpus_format
    corpus = load_corpus(test, fmt, "test", vocabs=vocabs, max_len=run.max_len)
    preds = predict(model, corpus)
    gold = corpus.gold_facts()
    if not gold:
        raise DataError("test corpus has no non-NA gold facts")
    metrics, points = compute_metrics(preds, gold)
    out_dir = Path(args.out_dir) if args.out_dir else run_dir / "eval"
    emit_report(metrics, points, out_dir)
    print(f"AUC {metrics['auc']:.4f}; report in {out_dir}")
    return EXIT_OK


def cmd_generate(args) -> int:
    run, run_dir, vocabs, model = _load_run(args.checkpoint, args.run_dir)
    train_path = args.corpus or str(_resolve(run_dir, run.train_corpus))
    if not Path(train_path).exists():
        raise UsageError(f"training corpus {train_path} not found; pass --corpus")
    corpus = load_corpus(train_path, run.corpus_format, "train", vocabs=vocabs, max_len=run.max_len)
    out = Path(args.output) if args.output else run_dir / "generated.jsonl"
    from .gan import discriminate

    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for start in range(0, len(corpus.bags), 64):
            bags = corpus.bags[start : start + 64]
            fake = generate_for_bags(bags, model, False, None)
            real, offsets = encode_real(bags, model, False, None)
            d_fake = discriminate(fake, model.discriminator).data
            for i, bag in enumerate(bags):
                from . import tensor as T

                xs = T.concat([fake[i : i + 1], real[offsets[i] : offsets[i + 1]]], axis=0)
                fwd = forward_bag(xs, bag.relation_id, model.classifier, gen_index=0)
                rec = {
                    "head": bag.head_id,
                    "tail": bag.tail_id,
                    "relation": corpus.relation_vocab.name(bag.relation_id),
                    "rank": generated_rank(fwd.scores.data, 0),
                    "bag_size": bag.size + 1,
                    "score": float(fwd.scores.data[0]),
                    "attention": float(fwd.weights.data[0]),
                    "d_prob": float(d_fake[i]),
                    "vector": [float(v) for v in fake.data[i]],
                }
                fh.write(json.dumps(rec) + "\n")
    print(f"wrote generated instances for {len(corpus.bags)} bags to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import SUITES, TOLERANCE, small_problem

    failed = False
    model, corpus = small_problem(seed=args.seed)
    for name, fn in SUITES.items():
        err = float(fn(model, corpus, eps=args.eps))
        ok = err < TOLERANCE
        failed |= not ok
        print(f"{'PASS' if ok else 'FAIL'} {name}: max relative error {err:.3e}")
    return EXIT_NUMERIC if failed else EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    """Show defaults for every option, including those without help text."""

    def _get_help_string(self, action):
        text = action.help or ""
        if action.required or not action.option_strings or action.default is argparse.SUPPRESS or "(default" in text:
            return text
        return f"{text} (default: %(default)s)".strip()


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    fmt = _Formatter
    parser = _Parser(prog="rdsgan", description="Rank-based adversarial relation extraction: data, training, evaluation.", formatter_class=fmt)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for parallel-safe regions")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("convert", help="NYT TSV to canonical JSONL", formatter_class=fmt)
    p.add_argument("input", help="NYT TSV file")
    p.add_argument("output", help="JSONL file to write")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("synth", help="write a synthetic corpus and its noise oracle", formatter_class=fmt)
    p.add_argument("output", help="corpus file to write")
    p.add_argument("--format", choices=("jsonl", "nyt-tsv"), default="jsonl", help="output format")
    p.add_argument("--split", choices=("train", "test"), default="train", help="bag grouping the corpus is meant for")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    defaults = SynthConfig()
    int_flags = {
        "n_relations": "relations including NA",
        "n_pairs": "entity pairs",
        "min_instances": "fewest sentences per pair",
        "max_instances": "most sentences per pair",
        "vocab_size": "filler words",
        "min_sentence": "shortest sentence",
        "max_sentence": "longest sentence",
    }
    for field, text in int_flags.items():
        p.add_argument(f"--{field.replace('_', '-')}", type=int, default=getattr(defaults, field), help=text)
    p.add_argument("--noise-rate", type=float, default=defaults.noise_rate, help="fraction of mislabelled sentences")
    p.add_argument("--na-fraction", type=float, default=defaults.na_fraction, help="fraction of NA pairs")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run the three-phase training loop", formatter_class=fmt)
    p.add_argument("--config", required=True, help="run configuration JSON")
    p.add_argument("--seed", type=int, default=None, help="override the config seed (default: config)")
    p.add_argument("--out-dir", default=None, help="override the config output_dir (default: config)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for parallel-safe regions")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="held-out evaluation of a checkpoint", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--run-dir", default=None, help="directory with config.json and vocab.json (default: checkpoint's)")
    p.add_argument("--test", default=None, help="test corpus (default: config test_corpus)")
    p.add_argument("--format", choices=("jsonl", "nyt-tsv"), default=None, help="test corpus format (default: config)")
    p.add_argument("--out-dir", default=None, help="report directory (default: RUN_DIR/eval)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("generate", help="export generated instances with their bag ranks", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--run-dir", default=None, help="training run directory (default: checkpoint's)")
    p.add_argument("--corpus", default=None, help="training corpus (default: config train_corpus)")
    p.add_argument("--output", default=None, help="JSONL to write (default: RUN_DIR/generated.jsonl)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss path", formatter_class=fmt)
    p.add_argument("--seed", type=int, default=0, help="problem seed")
    p.add_argument("--eps", type=float, default=DEFAULT_EPS, help="central-difference step")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand; see rdsgan --help")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, CheckpointError, DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, TrainingError) as exc:
        if isinstance(exc, TrainingError) and not isinstance(exc.__cause__, FloatingPointError):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
