"""Joint byte-pair-encoding subwords and the shared vocabulary.

Merges are learned once over source and target text together so that a single
parameter set can serve both languages. The end-of-word marker rides on the
final character of each word ("ab" -> "a", "b</w>"), which keeps decoding a
plain concatenate-and-split.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Collection, Iterable

from .corpus import Sentence
from .errors import ConfigError

EOW = "</w>"

PAD = "<pad>"
BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
MASK = "<mask>"
SPECIAL_TOKENS = (PAD, BOS, EOS, UNK, MASK)


@dataclass
class MergeTable:
    merges: list[tuple[str, str]]
    end_of_word: str = EOW
    _cache: dict[str, tuple[str, ...]] = field(
        default_factory=dict, repr=False, compare=False
    )


def _word_symbols(word: str, eow: str) -> tuple[str, ...]:
    return tuple(word[:-1]) + (word[-1] + eow,)


def _merge_word(symbols: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    left, right = pair
    out: list[str] = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == left and symbols[i + 1] == right:
            out.append(left + right)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def bpe_learn(sentences: Iterable[Sentence], num_merges: int, eow: str = EOW) -> MergeTable:
    """Learn merge operations from tokenized sentences.

    Repeatedly merges the most frequent adjacent symbol pair, stopping after
    num_merges merges or as soon as no pair occurs at least twice. Ties are
    broken lexicographically on (left, right) so learning is deterministic.
    """
    if num_merges < 0:
        raise ConfigError(f"num_merges must be >= 0, got {num_merges}")
    word_freq: Counter[str] = Counter()
    for sent in sentences:
        word_freq.update(sent)
    if not word_freq:
        raise ConfigError("cannot learn BPE merges from an empty corpus")

    words: dict[tuple[str, ...], int] = {}
    for word, n in word_freq.items():
        sym = _word_symbols(word, eow)
        words[sym] = words.get(sym, 0) + n

    merges: list[tuple[str, str]] = []
    for _ in range(num_merges):
        pair_counts: Counter[tuple[str, str]] = Counter()
        for sym, n in words.items():
            for a, b in zip(sym, sym[1:]):
                pair_counts[(a, b)] += n
        if not pair_counts:
            break
        best_count = max(pair_counts.values())
        if best_count < 2:
            break
        best = min(p for p, c in pair_counts.items() if c == best_count)
        merges.append(best)
        merged: dict[tuple[str, ...], int] = {}
        for sym, n in words.items():
            new_sym = _merge_word(sym, best)
            merged[new_sym] = merged.get(new_sym, 0) + n
        words = merged
    return MergeTable(merges, eow)


def _apply_word(word: str, table: MergeTable) -> tuple[str, ...]:
    cached = table._cache.get(word)
    if cached is not None:
        return cached
    sym = _word_symbols(word, table.end_of_word)
    for pair in table.merges:
        if len(sym) == 1:
            break
        sym = _merge_word(sym, pair)
    table._cache[word] = sym
    return sym


def bpe_apply(
    sentence: Sentence,
    table: MergeTable,
    specials: Collection[str] = SPECIAL_TOKENS,
) -> Sentence:
    """Segment each word into subword units, applying merges in table order.

    Tokens listed in ``specials`` (mask, reserved symbols) pass through as
    single units. Unknown characters simply stay single symbols.
    """
    out: list[str] = []
    for token in sentence:
        if token in specials:
            out.append(token)
        else:
            out.extend(_apply_word(token, table))
    return out


def bpe_decode(
    subwords: Sentence,
    eow: str = EOW,
    specials: Collection[str] = SPECIAL_TOKENS,
) -> Sentence:
    """Concatenate subword units back into words, splitting at end-of-word markers."""
    words: list[str] = []
    buf = ""
    for sym in subwords:
        if sym in specials:
            if buf:
                words.append(buf)
                buf = ""
            words.append(sym)
        elif sym.endswith(eow):
            words.append(buf + sym[: -len(eow)])
            buf = ""
        else:
            buf += sym
    if buf:
        words.append(buf)
    return words


@dataclass
class Vocabulary:
    id_of: dict[str, int]

    @property
    def pad_id(self) -> int:
        return self.id_of[PAD]

    @property
    def bos_id(self) -> int:
        return self.id_of[BOS]

    @property
    def eos_id(self) -> int:
        return self.id_of[EOS]

    @property
    def unk_id(self) -> int:
        return self.id_of[UNK]

    @property
    def mask_id(self) -> int:
        return self.id_of[MASK]

    def __len__(self) -> int:
        return len(self.id_of)

    @property
    def symbols(self) -> list[str]:
        inv = [""] * len(self.id_of)
        for sym, i in self.id_of.items():
            inv[i] = sym
        return inv


def build_vocab(sentences: Iterable[Sentence]) -> Vocabulary:
    """Vocabulary over all subword symbols seen, with reserved tokens up front.

    Symbols are ordered by decreasing frequency (ties lexicographic) after the
    reserved block, so ids are stable across runs.
    """
    freq: Counter[str] = Counter()
    for sent in sentences:
        freq.update(sent)
    id_of = {sym: i for i, sym in enumerate(SPECIAL_TOKENS)}
    for sym in sorted(freq, key=lambda s: (-freq[s], s)):
        if sym not in id_of:
            id_of[sym] = len(id_of)
    return Vocabulary(id_of)


def encode(sentence: Sentence, vocab: Vocabulary) -> list[int]:
    unk = vocab.unk_id
    return [vocab.id_of.get(sym, unk) for sym in sentence]


def decode_ids(ids: Iterable[int], vocab: Vocabulary) -> Sentence:
    symbols = vocab.symbols
    return [symbols[i] for i in ids]


def save_merges(table: MergeTable, path: str | Path) -> None:
    """One merge per line, "left right", in learning order."""
    lines = [f"{a} {b}" for a, b in table.merges]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_merges(path: str | Path) -> MergeTable:
    merges = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ConfigError(f"{path}:{lineno}: expected 'left right', got {line!r}")
        merges.append((parts[0], parts[1]))
    return MergeTable(merges)


def save_vocab(vocab: Vocabulary, path: str | Path) -> None:
    """One entry per line, "symbol<TAB>id"."""
    lines = [f"{sym}\t{i}" for sym, i in vocab.id_of.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_vocab(path: str | Path) -> Vocabulary:
    id_of: dict[str, int] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        sym, _, raw_id = line.partition("\t")
        if not raw_id:
            raise ConfigError(f"{path}:{lineno}: expected 'symbol<TAB>id', got {line!r}")
        id_of[sym] = int(raw_id)
    for sym in SPECIAL_TOKENS:
        if sym not in id_of:
            raise ConfigError(f"{path}: missing reserved symbol {sym!r}")
    return Vocabulary(id_of)
