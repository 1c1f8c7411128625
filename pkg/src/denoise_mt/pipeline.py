"""End-to-end experiment: subwords, datasets, paired runs, scoring.

This is the one-shot path behind the pipeline subcommand: learn joint BPE,
materialize the denoising datasets, train the two-phase run and its baseline
with the same seed, decode a held-out set with both averaged models, and
compare with corpus BLEU plus a paired sign test. All emitted manifests and
reports are free of absolute paths and timestamps so identical invocations
produce identical bytes.
"""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .corpus import ParallelCorpus
from .dataset import build_denoising
from .evaluation import (
    DecodeConfig,
    corpus_bleu,
    sentence_bleu,
    sign_test,
    translate_corpus,
)
from .noising import NoiseConfig
from .subword import (
    MergeTable,
    Vocabulary,
    bpe_apply,
    bpe_learn,
    build_vocab,
    save_merges,
    save_vocab,
)
from .training import RunConfig, load_model, noise_seed_for, run


def learn_subwords(corpus: ParallelCorpus, num_merges: int) -> tuple[MergeTable, Vocabulary]:
    """Joint BPE over both sides of the corpus, plus the shared vocabulary."""
    sentences = [p.source for p in corpus.pairs] + [p.target for p in corpus.pairs]
    table = bpe_learn(sentences, num_merges)
    vocab = build_vocab(bpe_apply(s, table) for s in sentences)
    return table, vocab


def write_dataset_files(
    out_dir: str | Path,
    corpus: ParallelCorpus,
    noise_cfg: NoiseConfig,
    table: MergeTable,
    vocab: Vocabulary,
    seed: int,
) -> dict:
    """Materialize subword token files for the clean and denoising data.

    Emits b.{src,tgt}.tok for the parallel data and m_{src,tgt}.{input,output}.tok
    for the denoising sets (inputs noised at the word level, then segmented),
    plus vocab.tsv and dataset_manifest.json. The noise seed derivation matches
    what a training run with the same seed uses, so these files are exactly the
    phase-1 training data.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data_seed = noise_seed_for(seed)
    m_src, m_tgt = build_denoising(corpus, noise_cfg, data_seed)

    def tok_line(words: list[str]) -> str:
        return " ".join(bpe_apply(words, table))

    files = {
        "b.src.tok": [tok_line(p.source) for p in corpus.pairs],
        "b.tgt.tok": [tok_line(p.target) for p in corpus.pairs],
        "m_src.input.tok": [tok_line(ex.input) for ex in m_src],
        "m_src.output.tok": [tok_line(ex.output) for ex in m_src],
        "m_tgt.input.tok": [tok_line(ex.input) for ex in m_tgt],
        "m_tgt.output.tok": [tok_line(ex.output) for ex in m_tgt],
    }
    for name, lines in files.items():
        (out / name).write_text("\n".join(lines) + "\n", encoding="utf-8")
    save_vocab(vocab, out / "vocab.tsv")

    manifest = {
        "language_pair": list(corpus.language_pair),
        "n_pairs": corpus.size,
        "dropped_pairs": corpus.dropped,
        "denoising_examples": len(m_src) + len(m_tgt),
        "noise": {
            "wd": noise_cfg.wd,
            "wb": noise_cfg.wb,
            "sk": noise_cfg.sk,
            "mode": noise_cfg.mode,
            "scheme": noise_cfg.scheme,
            "mask_symbol": noise_cfg.mask_symbol,
        },
        "seed": seed,
        "data_seed": data_seed,
        "files": sorted(files) + ["vocab.tsv"],
    }
    (out / "dataset_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest


def run_experiment(
    out_dir: str | Path,
    train: ParallelCorpus,
    test: ParallelCorpus,
    base_config: RunConfig,
    bpe_merges: int = 200,
    decode_cfg: DecodeConfig | None = None,
) -> dict:
    """Train the two-phase run and the baseline, decode, score, and report.

    Returns the report dict; also writes merges.txt, vocab.tsv, the dataset
    files, one run directory per system, hypothesis files, and report.json
    under out_dir.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    decode_cfg = decode_cfg or DecodeConfig()

    table, vocab = learn_subwords(train, bpe_merges)
    save_merges(table, out / "merges.txt")
    write_dataset_files(out / "data", train, base_config.noise_config(), table, vocab, base_config.seed)

    results: dict[str, dict] = {}
    hyps_by_system: dict[str, list[list[str]]] = {}
    refs = [p.target for p in test.pairs]
    for mode in ("denoise", "baseline"):
        cfg = dataclasses.replace(base_config, mode=mode, output_dir=str(out / mode))
        run(cfg, train, table, vocab)
        model, _ = load_model(out / mode / "averaged.pt", vocab)
        hyps = translate_corpus(model, [p.source for p in test.pairs], table, vocab, decode_cfg)
        (out / f"hyp.{mode}.txt").write_text(
            "\n".join(" ".join(h) for h in hyps) + "\n", encoding="utf-8"
        )
        report = corpus_bleu(hyps, refs)
        report_smoothed = corpus_bleu(hyps, refs, smooth=True)
        results[mode] = {
            "bleu": report.bleu,
            "bleu_smoothed": report_smoothed.bleu,
            "report": report_smoothed.as_dict(),
        }
        hyps_by_system[mode] = hyps

    seg_scores = {
        mode: [sentence_bleu(h, r) for h, r in zip(hyps_by_system[mode], refs)]
        for mode in hyps_by_system
    }
    significance = sign_test(seg_scores["denoise"], seg_scores["baseline"])

    report = {
        "config": json.loads(base_config.to_json()),
        "bpe_merges": bpe_merges,
        "decode": {
            "beam_size": decode_cfg.beam_size,
            "length_penalty": decode_cfg.length_penalty,
            "max_len_factor": decode_cfg.max_len_factor,
        },
        "test_segments": len(refs),
        "systems": results,
        "sign_test_denoise_vs_baseline": significance.as_dict(),
    }
    (out / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return report


def format_comparison(report: dict) -> str:
    """Human-readable summary table for the pipeline report."""
    lines = [
        f"{'system':<12} {'BLEU':>8} {'smoothed':>9}",
    ]
    for mode in ("baseline", "denoise"):
        sys_report = report["systems"][mode]
        lines.append(
            f"{mode:<12} {sys_report['bleu']:>8.2f} {sys_report['bleu_smoothed']:>9.2f}"
        )
    st = report["sign_test_denoise_vs_baseline"]
    lines.append(
        f"sign test (denoise vs baseline): wins={st['wins']} losses={st['losses']} "
        f"ties={st['ties']} p={st['p_value']:.4g}"
    )
    return "\n".join(lines)
