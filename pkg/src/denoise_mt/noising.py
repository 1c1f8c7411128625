"""Word-level noise: nearby shuffle, dropout, blanking, and code-switching.

All operations are pure functions of (input, config, rng stream). Randomness
comes from per-line streams so noising is reproducible regardless of
processing order or parallelism degree.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Sentence
from .errors import ConfigError
from .subword import MASK

_U64 = (1 << 64) - 1

# Operation tags keying independent substreams of one line's randomness.
OP_SHUFFLE = 0
OP_DROPOUT = 1
OP_BLANK = 2
OP_SINGLE = 3


@dataclass(frozen=True)
class RngStream:
    """Deterministic randomness for one line: PCG64 keyed by (seed, line_index, op).

    The draw sequence is a pure function of the key, identical across
    platforms and across sequential vs parallel execution.
    """

    seed: int
    line_index: int

    def generator(self, op: int) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=self.seed & _U64, spawn_key=(self.line_index, op)
        )
        return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *parts: int) -> int:
    """Mix a base seed with integer parts into a fresh 64-bit seed."""
    ss = np.random.SeedSequence(entropy=seed & _U64, spawn_key=tuple(p & _U64 for p in parts))
    a, b = ss.generate_state(2)
    return (int(a) << 32) | int(b)


@dataclass
class CodeSwitchLexicon:
    entries: dict[str, list[str]]

    def __post_init__(self) -> None:
        for word, translations in self.entries.items():
            if not translations:
                raise ConfigError(f"lexicon entry {word!r} has no translations")

    @classmethod
    def load(cls, path: str | Path) -> "CodeSwitchLexicon":
        """Lexicon file: one "source<TAB>target1|target2|..." entry per line."""
        entries: dict[str, list[str]] = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            word, _, rest = line.partition("\t")
            translations = [t for t in rest.split("|") if t]
            if not word or not translations:
                raise ConfigError(
                    f"{path}:{lineno}: expected 'source<TAB>t1|t2|...', got {line!r}"
                )
            entries[word] = translations
        return cls(entries)


@dataclass
class NoiseConfig:
    wd: float = 0.1
    wb: float = 0.1
    sk: int = 3
    mask_symbol: str = MASK
    mode: str = "mask"  # "mask" | "code_switch"
    lexicon: CodeSwitchLexicon | None = None
    # "per_token": independent per-token draws (normative).
    # "single_word": each enabled noise edits exactly one uniformly chosen word.
    scheme: str = "per_token"

    def __post_init__(self) -> None:
        if not 0.0 <= self.wd <= 1.0:
            raise ConfigError(f"wd must be in [0, 1], got {self.wd}")
        if not 0.0 <= self.wb <= 1.0:
            raise ConfigError(f"wb must be in [0, 1], got {self.wb}")
        if self.sk < 1:
            raise ConfigError(f"sk must be >= 1, got {self.sk}")
        if self.mode not in ("mask", "code_switch"):
            raise ConfigError(f"unknown noise mode {self.mode!r}")
        if self.scheme not in ("per_token", "single_word"):
            raise ConfigError(f"unknown noise scheme {self.scheme!r}")


def word_shuffle(tokens: Sentence, sk: int, rng: RngStream) -> Sentence:
    """Reorder tokens by sorting on key i + u_i with u_i uniform in [0, sk).

    Ties break stably by original index. The key construction bounds every
    token's displacement by sk - 1; sk=1 is the identity.
    """
    if sk < 1:
        raise ConfigError(f"sk must be >= 1, got {sk}")
    if not tokens:
        return []
    gen = rng.generator(OP_SHUFFLE)
    keys = np.arange(len(tokens)) + gen.random(len(tokens)) * sk
    order = np.argsort(keys, kind="stable")
    return [tokens[i] for i in order]


def word_dropout(tokens: Sentence, wd: float, rng: RngStream) -> Sentence:
    """Keep token i iff its draw exceeds wd; never returns empty for non-empty input.

    When every token is dropped, a single uniformly chosen token from the
    original sentence is returned instead.
    """
    if not tokens:
        return []
    gen = rng.generator(OP_DROPOUT)
    draws = gen.random(len(tokens))
    kept = [tok for tok, d in zip(tokens, draws) if d > wd]
    if not kept:
        return [tokens[int(gen.integers(len(tokens)))]]
    return kept


def word_blank(tokens: Sentence, wb: float, mask_symbol: str, rng: RngStream) -> Sentence:
    """Replace token i by mask_symbol iff its draw is <= wb. Length preserved."""
    if not tokens:
        return []
    gen = rng.generator(OP_BLANK)
    draws = gen.random(len(tokens))
    return [mask_symbol if d <= wb else tok for tok, d in zip(tokens, draws)]


def code_switch_blank(
    tokens: Sentence,
    wb: float,
    lexicon: CodeSwitchLexicon | None,
    mask_symbol: str,
    rng: RngStream,
) -> Sentence:
    """Like word_blank, but selected in-lexicon words become a translation.

    Positions are selected with probability wb (same draws as word_blank);
    selected words missing from the lexicon fall back to mask_symbol.
    Translation picks consume extra draws in position order.
    """
    if not tokens:
        return []
    entries = lexicon.entries if lexicon is not None else {}
    gen = rng.generator(OP_BLANK)
    draws = gen.random(len(tokens))
    out: list[str] = []
    for tok, d in zip(tokens, draws):
        if d <= wb:
            translations = entries.get(tok)
            if translations:
                out.append(translations[int(gen.integers(len(translations)))])
            else:
                out.append(mask_symbol)
        else:
            out.append(tok)
    return out


def noised(tokens: Sentence, cfg: NoiseConfig, rng: RngStream) -> Sentence:
    """Full noise composition: shuffle, then dropout, then blank or code-switch."""
    if not tokens:
        return []
    if cfg.scheme == "single_word":
        return _noised_single_word(tokens, cfg, rng)
    out = word_shuffle(tokens, cfg.sk, rng)
    out = word_dropout(out, cfg.wd, rng)
    if cfg.mode == "code_switch":
        out = code_switch_blank(out, cfg.wb, cfg.lexicon, cfg.mask_symbol, rng)
    else:
        out = word_blank(out, cfg.wb, cfg.mask_symbol, rng)
    return out


def _noised_single_word(tokens: Sentence, cfg: NoiseConfig, rng: RngStream) -> Sentence:
    """Alternate scheme: each enabled noise edits one uniformly chosen word.

    Applied in the same order as the per-token scheme: one nearby swap within
    the span (if sk > 1), one removal (if wd > 0), one blank or code-switch
    (if wb > 0). All noise off leaves the sentence unchanged.
    """
    gen = rng.generator(OP_SINGLE)
    out = list(tokens)
    if cfg.sk > 1 and len(out) > 1:
        i = int(gen.integers(len(out)))
        lo = max(0, i - (cfg.sk - 1))
        hi = min(len(out) - 1, i + (cfg.sk - 1))
        j = int(gen.integers(lo, hi + 1))
        out[i], out[j] = out[j], out[i]
    if cfg.wd > 0 and len(out) > 1:
        del out[int(gen.integers(len(out)))]
    if cfg.wb > 0 and out:
        i = int(gen.integers(len(out)))
        replacement = cfg.mask_symbol
        if cfg.mode == "code_switch" and cfg.lexicon is not None:
            translations = cfg.lexicon.entries.get(out[i])
            if translations:
                replacement = translations[int(gen.integers(len(translations)))]
        out[i] = replacement
    return out
