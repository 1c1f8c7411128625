"""Denoising datasets, the two-phase step split, and deterministic batch streams."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .corpus import ParallelCorpus, Sentence
from .errors import ConfigError
from .noising import NoiseConfig, RngStream, noised

EncodedExample = tuple[list[int], list[int]]

# Stream tags keep the shuffle randomness of each batch source independent.
TAG_SRC = 0
TAG_TGT = 1
TAG_PARALLEL = 2
TAG_MIXED = 3


@dataclass
class DenoisingExample:
    input: Sentence
    output: Sentence
    side: str  # "src" | "tgt"
    origin_index: int


def build_denoising(
    corpus: ParallelCorpus,
    cfg: NoiseConfig,
    seed: int,
) -> tuple[list[DenoisingExample], list[DenoisingExample]]:
    """Build the two single-side denoising sets from a parallel corpus.

    Pair i contributes (noised(source_i), source_i) to the source set and
    (noised(target_i), target_i) to the target set, so together the sets
    double the corpus. Per-line rng streams make construction order-free:
    source lines use stream index i, target lines N + i.
    """
    if len(corpus) == 0:
        raise ConfigError("cannot build denoising data from an empty corpus")
    n = len(corpus)
    m_src: list[DenoisingExample] = []
    m_tgt: list[DenoisingExample] = []
    for pair in corpus.pairs:
        src_noisy = noised(pair.source, cfg, RngStream(seed, pair.index))
        tgt_noisy = noised(pair.target, cfg, RngStream(seed, n + pair.index))
        m_src.append(DenoisingExample(src_noisy, list(pair.source), "src", pair.index))
        m_tgt.append(DenoisingExample(tgt_noisy, list(pair.target), "tgt", pair.index))
    return m_src, m_tgt


@dataclass(frozen=True)
class TrainingSchedule:
    total_steps: int
    denoise_steps: int
    finetune_steps: int
    warmup_steps: int
    decay_steps: int
    initial_lr: float
    peak_lr: float
    floor_lr: float


def make_schedule(total_steps: int, lr_config) -> TrainingSchedule:
    """Split the step budget: the first third denoises, the rest fine-tunes.

    The denoising phase gets floor(total_steps / 3) steps; flooring biases
    leftover steps toward the translation task. LR curve parameters are copied
    from lr_config.
    """
    if total_steps < 3:
        raise ConfigError(f"total_steps must be >= 3, got {total_steps}")
    denoise_steps = total_steps // 3
    return TrainingSchedule(
        total_steps=total_steps,
        denoise_steps=denoise_steps,
        finetune_steps=total_steps - denoise_steps,
        warmup_steps=lr_config.warmup_steps,
        decay_steps=lr_config.decay_steps,
        initial_lr=lr_config.initial_lr,
        peak_lr=lr_config.peak_lr,
        floor_lr=lr_config.floor_lr,
    )


@dataclass(frozen=True)
class BatchStream:
    batch_tokens: int
    seed: int

    def __post_init__(self) -> None:
        if self.batch_tokens < 1:
            raise ConfigError(f"batch_tokens must be >= 1, got {self.batch_tokens}")


@dataclass
class Batch:
    side: str  # "src" | "tgt" | "parallel" | "mixed"
    examples: list[EncodedExample]
    indices: list[int]
    epoch: int
    over_budget: bool = False
    language: str | None = None

    def __len__(self) -> int:
        return len(self.examples)


def _example_tokens(example: EncodedExample) -> int:
    # +1 on both sides for the sequence markers added at batch assembly
    src_ids, tgt_ids = example
    return max(len(src_ids) + 1, len(tgt_ids) + 1)


def _epoch_rng(seed: int, tag: int, epoch: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed & ((1 << 64) - 1), spawn_key=(tag, epoch))
    return np.random.Generator(np.random.PCG64(ss))


def _pack_epoch(
    examples: list[EncodedExample],
    stream: BatchStream,
    tag: int,
    epoch: int,
) -> list[tuple[list[int], bool]]:
    """One epoch's batches as (example index list, over_budget) tuples.

    Examples are shuffled per epoch seed, stably sorted by length so batches
    stay length-homogeneous, packed greedily to the token budget, and the
    batch order is shuffled again. A single example over the budget forms its
    own flagged batch.
    """
    rng = _epoch_rng(stream.seed, tag, epoch)
    order = list(rng.permutation(len(examples)))
    order.sort(key=lambda i: _example_tokens(examples[i]))  # stable: keeps shuffle within a length
    batches: list[tuple[list[int], bool]] = []
    current: list[int] = []
    current_tokens = 0
    for i in order:
        cost = _example_tokens(examples[i])
        if cost > stream.batch_tokens:
            if current:
                batches.append((current, False))
                current, current_tokens = [], 0
            batches.append(([i], True))
            continue
        if current and current_tokens + cost > stream.batch_tokens:
            batches.append((current, False))
            current, current_tokens = [], 0
        current.append(i)
        current_tokens += cost
    if current:
        batches.append((current, False))
    rng.shuffle(batches)
    return batches


def iter_batches(
    examples: list[EncodedExample],
    side: str,
    stream: BatchStream,
    tag: int,
    refresh: Callable[[int], list[EncodedExample]] | None = None,
) -> Iterator[Batch]:
    """Infinite deterministic batch stream cycling over epochs.

    ``refresh`` optionally rebuilds the example list at each epoch boundary
    (used for re-noising denoising data per epoch).
    """
    if not examples and refresh is None:
        raise ConfigError(f"batch stream for {side!r} has no examples")
    epoch = 0
    while True:
        if refresh is not None:
            examples = refresh(epoch)
            if not examples:
                raise ConfigError(f"refresh produced no examples for {side!r}")
        for idx_list, over in _pack_epoch(examples, stream, tag, epoch):
            yield Batch(
                side=side,
                examples=[examples[i] for i in idx_list],
                indices=idx_list,
                epoch=epoch,
                over_budget=over,
            )
        epoch += 1


def denoise_batches(
    m_src: list[EncodedExample],
    m_tgt: list[EncodedExample],
    stream: BatchStream,
    mixed: bool = False,
    refresh_src: Callable[[int], list[EncodedExample]] | None = None,
    refresh_tgt: Callable[[int], list[EncodedExample]] | None = None,
) -> Iterator[Batch]:
    """Denoising batch stream for the pretraining phase.

    Default is strict alternation: batch 0 from the source set, batch 1 from
    the target set, and so on, realizing the iterative optimization of the two
    single-side objectives. Within a side, batches never mix provenance. With
    ``mixed=True`` both sets are pooled into one stream instead.
    """
    if mixed:
        pooled = list(m_src) + list(m_tgt)
        yield from iter_batches(pooled, "mixed", stream, TAG_MIXED)
        return
    src_it = iter_batches(m_src, "src", stream, TAG_SRC, refresh=refresh_src)
    tgt_it = iter_batches(m_tgt, "tgt", stream, TAG_TGT, refresh=refresh_tgt)
    while True:
        yield next(src_it)
        yield next(tgt_it)


def finetune_batches(
    pairs: list[EncodedExample],
    stream: BatchStream,
) -> Iterator[Batch]:
    """Standard shuffled token-budget batches over the clean parallel data."""
    return iter_batches(pairs, "parallel", stream, TAG_PARALLEL)
