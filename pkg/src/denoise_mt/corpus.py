"""Parallel corpus ingestion and temperature-based multilingual sampling."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AlignmentError, ConfigError

# A sentence is a list of non-empty, whitespace-free token strings.
Sentence = list[str]


@dataclass
class SentencePair:
    source: Sentence
    target: Sentence
    index: int


@dataclass
class ParallelCorpus:
    pairs: list[SentencePair]
    language_pair: tuple[str, str] = ("src", "tgt")
    dropped: int = 0

    @property
    def size(self) -> int:
        return len(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def tag(self) -> str:
        return "-".join(self.language_pair)

    @classmethod
    def from_sentences(
        cls,
        sources: list[Sentence],
        targets: list[Sentence],
        language_pair: tuple[str, str] = ("src", "tgt"),
    ) -> "ParallelCorpus":
        """Build a corpus from pre-tokenized sentence lists, dropping empty pairs."""
        if len(sources) != len(targets):
            raise AlignmentError(
                f"sentence count mismatch: {len(sources)} source vs {len(targets)} target"
            )
        pairs = []
        dropped = 0
        for src, tgt in zip(sources, targets):
            if not src or not tgt:
                dropped += 1
                continue
            pairs.append(SentencePair(list(src), list(tgt), len(pairs)))
        return cls(pairs, language_pair, dropped)


def load_parallel(
    source_path: str | Path,
    target_path: str | Path,
    language_pair: tuple[str, str] = ("src", "tgt"),
) -> ParallelCorpus:
    """Load aligned one-sentence-per-line files into a corpus.

    Line i of each file becomes pair i, whitespace-tokenized. Pairs where either
    side tokenizes to zero tokens are dropped and counted in ``corpus.dropped``.
    Raises AlignmentError when the files have different line counts.
    """
    src_lines = Path(source_path).read_text(encoding="utf-8").splitlines()
    tgt_lines = Path(target_path).read_text(encoding="utf-8").splitlines()
    if len(src_lines) != len(tgt_lines):
        raise AlignmentError(
            f"line count mismatch: {source_path} has {len(src_lines)} lines, "
            f"{target_path} has {len(tgt_lines)}"
        )
    return ParallelCorpus.from_sentences(
        [line.split() for line in src_lines],
        [line.split() for line in tgt_lines],
        language_pair,
    )


def write_corpus_manifest(
    path: str | Path,
    corpus: ParallelCorpus,
    source_file: str,
    target_file: str,
) -> None:
    """Record where a corpus came from and what survived ingestion filtering."""
    manifest = {
        "source_file": source_file,
        "target_file": target_file,
        "language_pair": list(corpus.language_pair),
        "size": corpus.size,
        "dropped_pairs": corpus.dropped,
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@dataclass
class MultilingualPool:
    corpora: dict[str, ParallelCorpus] = field(default_factory=dict)
    temperature: float = 2.0


def sampling_weights(pool: MultilingualPool) -> dict[str, float]:
    """Per-language sampling probabilities, flattened by the pool temperature.

    weight_l = (N_l / sum N)^(1/T), renormalized to sum to 1. T=1 recovers the
    raw proportions; large T approaches uniform.
    """
    if not pool.corpora:
        raise ConfigError("multilingual pool is empty")
    if pool.temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {pool.temperature}")
    for tag, corpus in pool.corpora.items():
        if len(corpus) == 0:
            raise ConfigError(f"corpus {tag!r} in pool is empty")
    total = sum(len(c) for c in pool.corpora.values())
    raw = {
        tag: (len(c) / total) ** (1.0 / pool.temperature)
        for tag, c in pool.corpora.items()
    }
    norm = sum(raw.values())
    return {tag: w / norm for tag, w in raw.items()}


def sample_language(pool: MultilingualPool, rng: np.random.Generator) -> str:
    """Draw one language tag according to sampling_weights. Deterministic given rng state."""
    weights = sampling_weights(pool)
    tags = list(weights)
    if len(tags) == 1:
        return tags[0]
    u = rng.random()
    acc = 0.0
    for tag in tags:
        acc += weights[tag]
        if u < acc:
            return tag
    return tags[-1]  # guard against accumulated rounding
