"""Beam-search decoding, tokenized corpus BLEU, and the paired sign test."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from .corpus import Sentence
from .errors import ConfigError
from .model import Seq2SeqModel


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 5
    length_penalty: float = 1.0
    max_len_factor: float = 1.5

    def __post_init__(self) -> None:
        if self.beam_size < 1:
            raise ConfigError(f"beam_size must be >= 1, got {self.beam_size}")


def beam_search(
    step_logprobs: Callable[[list[tuple[int, ...]]], np.ndarray],
    eos_id: int,
    max_len: int,
    cfg: DecodeConfig,
) -> list[int]:
    """Length-normalized beam search over next-token log-probabilities.

    ``step_logprobs`` maps a list of prefixes to an array (n_prefixes, V) of
    log-probabilities for the next token. Hypothesis score is
    log-prob / len^length_penalty with len counting generated tokens including
    EOS. Ties break deterministically toward smaller token ids. Hypotheses
    still unfinished at max_len compete with their score as-is.
    """
    live: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    finished: list[tuple[tuple[int, ...], float]] = []

    def normalized(seq: tuple[int, ...], logprob: float) -> float:
        return logprob / (max(len(seq), 1) ** cfg.length_penalty)

    for _ in range(max_len):
        if not live:
            break
        scores = step_logprobs([seq for seq, _ in live])
        candidates: list[tuple[float, tuple[int, ...], float]] = []
        for (seq, logprob), row in zip(live, scores):
            for tok in range(len(row)):
                total = logprob + float(row[tok])
                candidates.append((total, seq + (tok,), total))
        # raw log-prob ranking within the step; token ids break ties
        candidates.sort(key=lambda c: (-c[0], c[1]))
        live = []
        for _, seq, logprob in candidates[: cfg.beam_size]:
            if seq[-1] == eos_id:
                finished.append((seq, logprob))
            else:
                live.append((seq, logprob))
    finished.extend(live)
    if not finished:
        return []
    best = min(finished, key=lambda h: (-normalized(*h), h[0]))
    seq = best[0]
    return list(seq[:-1] if seq and seq[-1] == eos_id else seq)


def translate(
    model: Seq2SeqModel,
    src_ids: list[int],
    cfg: DecodeConfig,
) -> list[int]:
    """Decode one source id sequence to target ids (no BOS/EOS in the result)."""
    if not src_ids:
        return []
    mcfg = model.cfg
    max_len = int(cfg.max_len_factor * len(src_ids)) + 8
    max_len = min(max_len, mcfg.max_positions - 1)
    device = next(model.parameters()).device
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            src = torch.tensor([list(src_ids) + [mcfg.eos_id]], dtype=torch.long, device=device)
            src_pad = src.eq(mcfg.pad_id)
            memory = model.encode(src, src_pad)

            def step(prefixes: list[tuple[int, ...]]) -> np.ndarray:
                width = max(len(p) for p in prefixes) + 1
                tgt_in = torch.full((len(prefixes), width), mcfg.pad_id, dtype=torch.long, device=device)
                for r, p in enumerate(prefixes):
                    tgt_in[r, 0] = mcfg.bos_id
                    if p:
                        tgt_in[r, 1 : 1 + len(p)] = torch.tensor(p, dtype=torch.long)
                mem = memory.expand(len(prefixes), -1, -1)
                pad = src_pad.expand(len(prefixes), -1)
                logits = model.decode(mem, pad, tgt_in, tgt_in.eq(mcfg.pad_id))
                rows = torch.stack(
                    [logits[r, len(p)] for r, p in enumerate(prefixes)]
                )
                # never emit structural symbols
                rows[:, mcfg.pad_id] = float("-inf")
                rows[:, mcfg.bos_id] = float("-inf")
                return torch.log_softmax(rows, dim=-1).cpu().numpy()

            return beam_search(step, mcfg.eos_id, max_len, cfg)
    finally:
        if was_training:
            model.train()


def translate_corpus(
    model: Seq2SeqModel,
    sentences: Sequence[Sentence],
    table,
    vocab,
    cfg: DecodeConfig | None = None,
) -> list[Sentence]:
    """Decode word-level sentences end to end (subword round trip included)."""
    from .subword import bpe_apply, bpe_decode, decode_ids, encode

    cfg = cfg or DecodeConfig()
    out: list[Sentence] = []
    for sent in sentences:
        src_ids = encode(bpe_apply(sent, table), vocab)
        hyp_ids = translate(model, src_ids, cfg)
        out.append(bpe_decode(decode_ids(hyp_ids, vocab)))
    return out


def _ngram_counts(tokens: Sentence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


@dataclass
class BleuReport:
    bleu: float
    precisions: tuple[float, ...]
    brevity_penalty: float
    hyp_length: int
    ref_length: int
    matches: tuple[int, ...]
    totals: tuple[int, ...]
    smoothed: bool

    def as_dict(self) -> dict:
        return {
            "bleu": self.bleu,
            "precisions": list(self.precisions),
            "brevity_penalty": self.brevity_penalty,
            "hyp_length": self.hyp_length,
            "ref_length": self.ref_length,
            "matches": list(self.matches),
            "totals": list(self.totals),
            "smoothed": self.smoothed,
        }


def corpus_bleu(
    hypotheses: Sequence[Sentence],
    references: Sequence[Sentence],
    max_n: int = 4,
    smooth: bool = False,
) -> BleuReport:
    """Corpus-level BLEU with clipped modified n-gram precision.

    Statistics are summed over the corpus before combining: geometric mean of
    p_1..p_max_n times the brevity penalty min(1, exp(1 - ref_len/hyp_len)).
    Any zero precision sends the score to 0 unless ``smooth`` adds one to the
    match and total counts for n >= 2 (useful at toy scale).
    """
    if len(hypotheses) != len(references):
        raise ValueError(
            f"segment count mismatch: {len(hypotheses)} hypotheses vs "
            f"{len(references)} references"
        )
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            hyp_counts = _ngram_counts(hyp, n)
            if not hyp_counts:
                continue
            ref_counts = _ngram_counts(ref, n)
            totals[n - 1] += sum(hyp_counts.values())
            matches[n - 1] += sum((hyp_counts & ref_counts).values())

    precisions = []
    for n in range(1, max_n + 1):
        m, t = matches[n - 1], totals[n - 1]
        if smooth and n >= 2:
            m, t = m + 1, t + 1
        precisions.append(m / t if t > 0 else 0.0)

    if hyp_len == 0:
        bp = 0.0
    elif hyp_len >= ref_len:
        bp = 1.0
    else:
        bp = math.exp(1.0 - ref_len / hyp_len)

    if min(precisions) > 0.0:
        log_mean = sum(math.log(p) for p in precisions) / max_n
        bleu = bp * math.exp(log_mean) * 100.0
    else:
        bleu = 0.0
    return BleuReport(
        bleu=bleu,
        precisions=tuple(precisions),
        brevity_penalty=bp,
        hyp_length=hyp_len,
        ref_length=ref_len,
        matches=tuple(matches),
        totals=tuple(totals),
        smoothed=smooth,
    )


def sentence_bleu(hypothesis: Sentence, reference: Sentence) -> float:
    """Smoothed single-segment BLEU, the per-segment score for the sign test."""
    return corpus_bleu([hypothesis], [reference], smooth=True).bleu


@dataclass
class SignTestResult:
    wins: int
    losses: int
    ties: int
    p_value: float
    all_ties: bool = False

    def as_dict(self) -> dict:
        return {
            "wins": self.wins,
            "losses": self.losses,
            "ties": self.ties,
            "p_value": self.p_value,
            "all_ties": self.all_ties,
        }


def sign_test(scores_a: Sequence[float], scores_b: Sequence[float]) -> SignTestResult:
    """Two-sided exact binomial sign test on per-segment score pairs.

    Ties are excluded from the trial count; the p-value is
    min(1, 2 * P[X >= max(wins, losses)]) for X ~ Binomial(wins+losses, 1/2),
    computed with exact integer arithmetic.
    """
    if len(scores_a) != len(scores_b):
        raise ValueError(
            f"score count mismatch: {len(scores_a)} vs {len(scores_b)}"
        )
    wins = sum(1 for a, b in zip(scores_a, scores_b) if a > b)
    losses = sum(1 for a, b in zip(scores_a, scores_b) if a < b)
    ties = len(scores_a) - wins - losses
    n = wins + losses
    if n == 0:
        return SignTestResult(wins, losses, ties, 1.0, all_ties=True)
    k = max(wins, losses)
    tail = sum(math.comb(n, j) for j in range(k, n + 1))
    p = min(1.0, (2 * tail) / (1 << n))
    return SignTestResult(wins, losses, ties, p)
