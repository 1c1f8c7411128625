"""Bundled synthetic translation task: a word-level cipher with local reordering.

Source sentences draw words from a small Zipf-weighted vocabulary; targets map
each word through a fixed bijective lexicon and then apply a bounded local
reordering, so a model must learn the lexical mapping plus mild word movement.
Everything is a pure function of the seed.
"""
from __future__ import annotations

import numpy as np

from .corpus import ParallelCorpus, Sentence
from .errors import ConfigError

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def _pseudo_words(count: int, rng: np.random.Generator, min_syllables: int, max_syllables: int) -> list[str]:
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < count:
        n = int(rng.integers(min_syllables, max_syllables + 1))
        word = "".join(
            _CONSONANTS[int(rng.integers(len(_CONSONANTS)))]
            + _VOWELS[int(rng.integers(len(_VOWELS)))]
            for _ in range(n)
        )
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def _zipf_weights(n: int) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1)
    return w / w.sum()


def _draw_index(rng: np.random.Generator, cumweights: np.ndarray) -> int:
    return int(np.searchsorted(cumweights, rng.random(), side="right"))


def _local_reorder(tokens: Sentence, span: int, rng: np.random.Generator) -> Sentence:
    if span <= 1 or len(tokens) < 2:
        return list(tokens)
    keys = np.arange(len(tokens)) + rng.random(len(tokens)) * span
    order = np.argsort(keys, kind="stable")
    return [tokens[i] for i in order]


def make_cipher_task(
    n_train: int,
    n_test: int,
    vocab_size: int = 50,
    seed: int = 0,
    min_len: int = 3,
    max_len: int = 12,
    reorder_span: int = 2,
) -> tuple[ParallelCorpus, ParallelCorpus]:
    """Generate disjoint train and test corpora for the cipher task.

    Test sentences whose source already occurs in training data are redrawn so
    test BLEU measures generalization rather than recall.
    """
    if vocab_size < 2 or n_train < 1 or n_test < 0:
        raise ConfigError(
            f"bad task size (vocab={vocab_size}, train={n_train}, test={n_test})"
        )
    if not 1 <= min_len <= max_len:
        raise ConfigError(f"bad length range [{min_len}, {max_len}]")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed & ((1 << 64) - 1))))
    src_words = _pseudo_words(vocab_size, rng, 1, 2)
    tgt_words = _pseudo_words(vocab_size, rng, 2, 3)
    lexicon = dict(zip(src_words, tgt_words))
    cum = np.cumsum(_zipf_weights(vocab_size))

    def draw_pair() -> tuple[Sentence, Sentence]:
        length = int(rng.integers(min_len, max_len + 1))
        src = [src_words[_draw_index(rng, cum)] for _ in range(length)]
        tgt = _local_reorder([lexicon[w] for w in src], reorder_span, rng)
        return src, tgt

    train_src: list[Sentence] = []
    train_tgt: list[Sentence] = []
    train_keys: set[tuple[str, ...]] = set()
    for _ in range(n_train):
        src, tgt = draw_pair()
        train_keys.add(tuple(src))
        train_src.append(src)
        train_tgt.append(tgt)

    test_src: list[Sentence] = []
    test_tgt: list[Sentence] = []
    for _ in range(n_test):
        src, tgt = draw_pair()
        for _ in range(100):
            if tuple(src) not in train_keys:
                break
            src, tgt = draw_pair()
        test_src.append(src)
        test_tgt.append(tgt)

    train = ParallelCorpus.from_sentences(train_src, train_tgt, ("toy-src", "toy-tgt"))
    test = ParallelCorpus.from_sentences(test_src, test_tgt, ("toy-src", "toy-tgt"))
    return train, test


def cipher_lexicon(vocab_size: int = 50, seed: int = 0) -> dict[str, list[str]]:
    """The task's word mapping, usable as a code-switch lexicon."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed & ((1 << 64) - 1))))
    src_words = _pseudo_words(vocab_size, rng, 1, 2)
    tgt_words = _pseudo_words(vocab_size, rng, 2, 3)
    return {s: [t] for s, t in zip(src_words, tgt_words)}
