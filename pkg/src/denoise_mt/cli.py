"""Command-line front end: every pipeline stage as a subcommand.

Conventions: data on stdout, diagnostics on stderr, exit code 0 only on full
success. Every subcommand accepts --seed; when omitted, a random seed is
chosen and printed so any run can be reproduced after the fact.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .corpus import load_parallel, write_corpus_manifest
from .errors import AlignmentError, CheckpointError, ConfigError
from .noising import CodeSwitchLexicon, NoiseConfig, RngStream, noised
from .subword import (
    bpe_apply,
    bpe_decode,
    bpe_learn,
    build_vocab,
    load_merges,
    load_vocab,
    save_merges,
    save_vocab,
)


def _resolve_seed(args) -> int:
    if args.seed is None:
        args.seed = int.from_bytes(os.urandom(4), "little")
        print(
            f"seed: {args.seed} (chosen randomly; pass --seed {args.seed} to reproduce)",
            file=sys.stderr,
        )
    return args.seed


def _read_lines(path: str) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def _read_sentences(path: str) -> list[list[str]]:
    return [line.split() for line in _read_lines(path)]


def _noise_config_from_args(args) -> NoiseConfig:
    lexicon = CodeSwitchLexicon.load(args.lexicon) if args.lexicon else None
    mode = args.mode if args.mode else ("code_switch" if lexicon else "mask")
    return NoiseConfig(
        wd=args.wd, wb=args.wb, sk=args.sk,
        mask_symbol=args.mask, mode=mode, lexicon=lexicon, scheme=args.scheme,
    )


def _add_noise_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-wd", "--word-dropout", dest="wd", type=float, default=0.1,
                        help="word dropout probability (default 0.1)")
    parser.add_argument("-wb", "--word-blank", dest="wb", type=float, default=0.1,
                        help="word blank probability (default 0.1)")
    parser.add_argument("-sk", "--shuffle-span", dest="sk", type=int, default=3,
                        help="nearby-swap span (default 3)")
    parser.add_argument("--mask", default="<mask>", help="mask symbol (default <mask>)")
    parser.add_argument("--mode", choices=["mask", "code_switch"], default=None,
                        help="blank mode (default: code_switch when --lexicon is given)")
    parser.add_argument("--lexicon", default=None, help="code-switch lexicon file")
    parser.add_argument("--scheme", choices=["per_token", "single_word"], default="per_token",
                        help="per-token draws (default) or one edit per noise kind")


def cmd_noise(args) -> int:
    seed = _resolve_seed(args)
    cfg = _noise_config_from_args(args)
    for line_index, line in enumerate(sys.stdin):
        tokens = line.split()
        out = noised(tokens, cfg, RngStream(seed, line_index)) if tokens else []
        print(" ".join(out))
    return 0


def cmd_bpe_learn(args) -> int:
    sentences = []
    for path in args.input:
        sentences.extend(_read_sentences(path))
    table = bpe_learn(sentences, args.merges)
    save_merges(table, args.output)
    print(f"learned {len(table.merges)} merges -> {args.output}", file=sys.stderr)
    return 0


def cmd_bpe_apply(args) -> int:
    table = load_merges(args.merges)
    lines = _read_lines(args.input) if args.input else [l.rstrip("\n") for l in sys.stdin]
    out_lines = []
    for line in lines:
        tokens = line.split()
        result = bpe_decode(tokens) if args.decode else bpe_apply(tokens, table)
        out_lines.append(" ".join(result))
    text = "\n".join(out_lines) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_build(args) -> int:
    from .pipeline import write_dataset_files

    seed = _resolve_seed(args)
    corpus = load_parallel(args.source, args.target)
    table = load_merges(args.merges)
    sentences = [p.source for p in corpus.pairs] + [p.target for p in corpus.pairs]
    vocab = build_vocab(bpe_apply(s, table) for s in sentences)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus_manifest(out / "corpus_manifest.json", corpus, args.source, args.target)
    manifest = write_dataset_files(out, corpus, _noise_config_from_args(args), table, vocab, seed)
    print(
        f"built datasets in {out}: {manifest['n_pairs']} pairs, "
        f"{manifest['denoising_examples']} denoising examples, "
        f"{manifest['dropped_pairs']} dropped",
        file=sys.stderr,
    )
    return 0


def cmd_synth(args) -> int:
    from .synth import cipher_lexicon, make_cipher_task

    seed = _resolve_seed(args)
    train, test = make_cipher_task(
        n_train=args.pairs, n_test=args.test_pairs, vocab_size=args.vocab_size,
        seed=seed, min_len=args.min_len, max_len=args.max_len,
        reorder_span=args.reorder_span,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, corpus in (("train", train), ("test", test)):
        (out / f"{name}.src").write_text(
            "\n".join(" ".join(p.source) for p in corpus.pairs) + "\n", encoding="utf-8")
        (out / f"{name}.tgt").write_text(
            "\n".join(" ".join(p.target) for p in corpus.pairs) + "\n", encoding="utf-8")
    lexicon = cipher_lexicon(args.vocab_size, seed)
    (out / "lexicon.tsv").write_text(
        "\n".join(f"{s}\t{'|'.join(ts)}" for s, ts in lexicon.items()) + "\n", encoding="utf-8")
    manifest = {
        "train_pairs": train.size, "test_pairs": test.size,
        "vocab_size": args.vocab_size, "seed": seed,
        "min_len": args.min_len, "max_len": args.max_len,
        "reorder_span": args.reorder_span,
        "files": ["train.src", "train.tgt", "test.src", "test.tgt", "lexicon.tsv"],
    }
    (out / "synth_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote synthetic task to {out}", file=sys.stderr)
    return 0


def _run_config_from_args(args, require_out: bool = True) -> "RunConfig":
    from .training import RunConfig, parse_config_file

    cfg_map = parse_config_file(args.config) if args.config else {}
    if getattr(args, "total_steps", None) is not None:
        cfg_map["total_steps"] = args.total_steps
    if getattr(args, "mode", None):
        cfg_map["mode"] = args.mode
    if getattr(args, "batch_tokens", None) is not None:
        cfg_map["batch_tokens"] = args.batch_tokens
    if args.seed is not None:
        cfg_map["seed"] = args.seed
    elif "seed" not in cfg_map:
        cfg_map["seed"] = _resolve_seed(args)
    if require_out:
        cfg_map["output_dir"] = args.out
    return RunConfig.from_mapping(cfg_map)


def _load_subwords(args, corpus, out: Path):
    """Merge table and vocabulary from files, or learned from the corpus."""
    if args.merges:
        table = load_merges(args.merges)
    else:
        sentences = [p.source for p in corpus.pairs] + [p.target for p in corpus.pairs]
        table = bpe_learn(sentences, args.bpe_merges)
        save_merges(table, out / "merges.txt")
    if getattr(args, "vocab", None):
        vocab = load_vocab(args.vocab)
    else:
        sentences = [p.source for p in corpus.pairs] + [p.target for p in corpus.pairs]
        vocab = build_vocab(bpe_apply(s, table) for s in sentences)
        save_vocab(vocab, out / "vocab.tsv")
    return table, vocab


def cmd_train(args) -> int:
    from .training import run

    cfg = _run_config_from_args(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = load_parallel(args.source, args.target)
    table, vocab = _load_subwords(args, corpus, out)
    log = run(cfg, corpus, table, vocab)
    steps = log.step_records()
    last = steps[-1] if steps else {}
    print(
        f"run complete: {len(steps)} steps, final loss {last.get('loss', float('nan')):.4f}, "
        f"artifacts in {out}"
    )
    return 0


def cmd_resume(args) -> int:
    from .training import resume

    cfg = _run_config_from_args(args)
    out = Path(cfg.output_dir)
    corpus = load_parallel(args.source, args.target)
    table, vocab = _load_subwords(args, corpus, out)
    log = resume(args.checkpoint, cfg, corpus, table, vocab)
    noop = [r for r in log.records if r.get("kind") == "resume_noop"]
    if noop:
        print(noop[0]["message"])
    else:
        print(f"resumed to step {cfg.total_steps}, artifacts in {out}")
    return 0


def cmd_decode(args) -> int:
    from .evaluation import DecodeConfig, translate_corpus
    from .training import load_model

    vocab = load_vocab(args.vocab)
    table = load_merges(args.merges)
    model, _ = load_model(args.checkpoint, vocab)
    cfg = DecodeConfig(
        beam_size=args.beam, length_penalty=args.length_penalty,
        max_len_factor=args.max_len_factor,
    )
    sentences = _read_sentences(args.input)
    hyps = translate_corpus(model, sentences, table, vocab, cfg)
    text = "\n".join(" ".join(h) for h in hyps) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_bleu(args) -> int:
    from .evaluation import corpus_bleu

    hyps = _read_sentences(args.hyp)
    refs = _read_sentences(args.ref)
    report = corpus_bleu(hyps, refs, smooth=args.smooth)
    p = "/".join(f"{x:.4f}" for x in report.precisions)
    print(f"BLEU = {report.bleu:.2f}")
    print(
        f"precisions {p}  BP {report.brevity_penalty:.4f}  "
        f"hyp/ref length {report.hyp_length}/{report.ref_length}"
    )
    if args.report:
        Path(args.report).write_text(
            json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def cmd_signtest(args) -> int:
    from .evaluation import sentence_bleu, sign_test

    if args.scores_a and args.scores_b:
        a = [float(x) for x in _read_lines(args.scores_a) if x.strip()]
        b = [float(x) for x in _read_lines(args.scores_b) if x.strip()]
    elif args.hyp_a and args.hyp_b and args.ref:
        refs = _read_sentences(args.ref)
        a = [sentence_bleu(h, r) for h, r in zip(_read_sentences(args.hyp_a), refs)]
        b = [sentence_bleu(h, r) for h, r in zip(_read_sentences(args.hyp_b), refs)]
    else:
        raise ConfigError("need either --scores-a/--scores-b or --hyp-a/--hyp-b/--ref")
    result = sign_test(a, b)
    print(
        f"wins={result.wins} losses={result.losses} ties={result.ties} "
        f"p={result.p_value:.6g}" + ("  (all ties)" if result.all_ties else "")
    )
    return 0


def cmd_pipeline(args) -> int:
    from .evaluation import DecodeConfig
    from .pipeline import format_comparison, run_experiment
    from .synth import make_cipher_task

    cfg = _run_config_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.source and args.target:
        train = load_parallel(args.source, args.target)
        if args.test_source and args.test_target:
            test = load_parallel(args.test_source, args.test_target)
        else:
            if train.size < 20:
                raise ConfigError("corpus too small to hold out a test set; provide test files")
            n_test = max(1, train.size // 10)
            test_pairs = train.pairs[-n_test:]
            from .corpus import ParallelCorpus
            test = ParallelCorpus.from_sentences(
                [p.source for p in test_pairs], [p.target for p in test_pairs],
                train.language_pair,
            )
            train = ParallelCorpus.from_sentences(
                [p.source for p in train.pairs[:-n_test]],
                [p.target for p in train.pairs[:-n_test]],
                train.language_pair,
            )
    else:
        train, test = make_cipher_task(
            n_train=args.pairs, n_test=args.test_pairs,
            vocab_size=args.vocab_size, seed=cfg.seed,
        )

    decode_cfg = DecodeConfig(
        beam_size=args.beam, length_penalty=args.length_penalty,
        max_len_factor=args.max_len_factor,
    )
    report = run_experiment(out, train, test, cfg, bpe_merges=args.bpe_merges, decode_cfg=decode_cfg)
    print(format_comparison(report))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="denoise-mt",
        description="Denoising-pretraining pipeline for desk-scale translation experiments",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="global seed; omit for a random one (printed to stderr)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("noise", parents=[common], help="noise stdin lines to stdout")
    _add_noise_flags(p)
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("bpe-learn", parents=[common], help="learn BPE merges from text files")
    p.add_argument("--input", nargs="+", required=True, help="training text file(s)")
    p.add_argument("--merges", type=int, default=200, help="merge operations (default 200)")
    p.add_argument("--output", required=True, help="merge table file to write")
    p.set_defaults(func=cmd_bpe_learn)

    p = sub.add_parser("bpe-apply", parents=[common], help="segment (or --decode) text")
    p.add_argument("--merges", required=True)
    p.add_argument("--input", default=None, help="input file (default stdin)")
    p.add_argument("--output", default=None, help="output file (default stdout)")
    p.add_argument("--decode", action="store_true", help="join subwords back into words")
    p.set_defaults(func=cmd_bpe_apply)

    p = sub.add_parser("build", parents=[common], help="materialize denoising + parallel datasets")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--merges", required=True)
    p.add_argument("--out-dir", required=True)
    _add_noise_flags(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("synth", parents=[common], help="generate the bundled cipher task")
    p.add_argument("--pairs", type=int, default=2000)
    p.add_argument("--test-pairs", type=int, default=200)
    p.add_argument("--vocab-size", type=int, default=50)
    p.add_argument("--min-len", type=int, default=3)
    p.add_argument("--max-len", type=int, default=12)
    p.add_argument("--reorder-span", type=int, default=2)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    train_common = argparse.ArgumentParser(add_help=False)
    train_common.add_argument("--config", default=None, help="key = value config file")
    train_common.add_argument("--source", required=True)
    train_common.add_argument("--target", required=True)
    train_common.add_argument("--merges", default=None, help="merge table (learned if omitted)")
    train_common.add_argument("--vocab", default=None, help="vocabulary file (built if omitted)")
    train_common.add_argument("--bpe-merges", type=int, default=200,
                              help="merge count when learning (default 200)")
    train_common.add_argument("--out", required=True, help="run output directory")
    train_common.add_argument("--mode", choices=["denoise", "baseline"], default=None)
    train_common.add_argument("--total-steps", type=int, default=None)
    train_common.add_argument("--batch-tokens", type=int, default=None)

    p = sub.add_parser("train", parents=[common, train_common], help="run one training config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("resume", parents=[common, train_common], help="continue from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("decode", parents=[common], help="beam-decode a text file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--merges", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", default=None)
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--length-penalty", type=float, default=1.0)
    p.add_argument("--max-len-factor", type=float, default=1.5)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("bleu", parents=[common], help="corpus BLEU of hyp vs ref")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--smooth", action="store_true", help="add-one smoothing for n >= 2")
    p.add_argument("--report", default=None, help="write the full report as JSON")
    p.set_defaults(func=cmd_bleu)

    p = sub.add_parser("signtest", parents=[common], help="paired sign test between systems")
    p.add_argument("--scores-a", default=None)
    p.add_argument("--scores-b", default=None)
    p.add_argument("--hyp-a", default=None)
    p.add_argument("--hyp-b", default=None)
    p.add_argument("--ref", default=None)
    p.set_defaults(func=cmd_signtest)

    p = sub.add_parser("pipeline", parents=[common],
                       help="end-to-end experiment: subwords, datasets, both runs, scoring")
    p.add_argument("--source", default=None)
    p.add_argument("--target", default=None)
    p.add_argument("--test-source", default=None)
    p.add_argument("--test-target", default=None)
    p.add_argument("--pairs", type=int, default=2000, help="synthetic train pairs")
    p.add_argument("--test-pairs", type=int, default=200, help="synthetic test pairs")
    p.add_argument("--vocab-size", type=int, default=50, help="synthetic vocabulary size")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--total-steps", type=int, default=None)
    p.add_argument("--batch-tokens", type=int, default=None)
    p.add_argument("--bpe-merges", type=int, default=200)
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--length-penalty", type=float, default=1.0)
    p.add_argument("--max-len-factor", type=float, default=1.5)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except (ConfigError, AlignmentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
