"""Two-phase training orchestration: denoising pretrain, then translation.

A run consumes the first third of the step budget on alternating source/target
denoising batches and the rest on clean parallel batches, with one shared
parameter set throughout. Baseline mode spends every step on the parallel
data. Every run is a pure function of its config and seed: reruns are
byte-identical (modulo timing fields in the log) and an interrupted run
resumed from a checkpoint reproduces the uninterrupted parameters bit for bit.
"""
from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Union

import torch

from .corpus import MultilingualPool, ParallelCorpus, sample_language
from .dataset import (
    TAG_MIXED,
    TAG_PARALLEL,
    TAG_SRC,
    TAG_TGT,
    Batch,
    BatchStream,
    TrainingSchedule,
    build_denoising,
    iter_batches,
    make_schedule,
)
from .errors import CheckpointError, ConfigError
from .model import (
    LrCurve,
    ModelConfig,
    Seq2SeqModel,
    SequenceBatch,
    average_params,
    backward_step,
    config_fingerprint,
    load_checkpoint,
    lr_at,
    make_optimizer,
    save_checkpoint,
)
from .noising import CodeSwitchLexicon, NoiseConfig, RngStream, derive_seed
from .subword import MergeTable, Vocabulary, bpe_apply, encode

import numpy as np

# seed-derivation tags (keep stable: they define the reproducibility contract)
_SEED_NOISE = 101
_SEED_BATCHES = 102
_SEED_LANG_DENOISE = 103
_SEED_LANG_FINETUNE = 104
_SEED_TORCH = 105
_SEED_RENOISE = 106


@dataclass
class RunConfig:
    """Everything that defines a training run. Flat so config files stay flat."""

    total_steps: int = 3000
    mode: str = "denoise"  # "denoise" (two-phase) | "baseline" (all fine-tune)
    seed: int = 0
    batch_tokens: int = 1024
    weight_decay: float = 0.01
    # model shape
    layers: int = 2
    model_dim: int = 64
    heads: int = 4
    ffn_dim: int = 128
    dropout: float = 0.1
    label_smoothing: float = 0.1
    max_positions: int = 256
    # learning-rate curve (warmup/decay default to total/10 and the remainder)
    initial_lr: float = 1e-7
    peak_lr: float = 3e-4
    warmup_steps: int | None = None
    decay_steps: int | None = None
    floor_lr: float = 1e-7
    # noise
    wd: float = 0.1
    wb: float = 0.1
    sk: int = 3
    noise_mode: str = "mask"
    noise_scheme: str = "per_token"
    lexicon: str | None = None
    # multilingual sampling
    temperature: float = 2.0
    denoise_language_sampling: str = "temperature"  # "temperature" | "uniform"
    # run mechanics
    checkpoint_every: int | None = None  # default: total_steps // 20, minimum 1
    average_last: int = 10
    reset_optimizer_at_phase: bool = True
    renoise_each_epoch: bool = False
    mixed_denoise_batches: bool = False
    output_dir: str = "run"

    def __post_init__(self) -> None:
        if self.mode not in ("denoise", "baseline"):
            raise ConfigError(f"mode must be 'denoise' or 'baseline', got {self.mode!r}")
        if self.total_steps < 3:
            raise ConfigError(f"total_steps must be >= 3, got {self.total_steps}")
        if self.average_last < 1:
            raise ConfigError(f"average_last must be >= 1, got {self.average_last}")
        if self.denoise_language_sampling not in ("temperature", "uniform"):
            raise ConfigError(
                f"denoise_language_sampling must be 'temperature' or 'uniform', "
                f"got {self.denoise_language_sampling!r}"
            )

    def lr_curve(self) -> LrCurve:
        warmup = self.warmup_steps if self.warmup_steps is not None else max(1, self.total_steps // 10)
        decay = self.decay_steps if self.decay_steps is not None else max(1, self.total_steps - warmup)
        return LrCurve(
            initial_lr=self.initial_lr,
            peak_lr=self.peak_lr,
            warmup_steps=warmup,
            decay_steps=decay,
            floor_lr=self.floor_lr,
        )

    def schedule(self) -> TrainingSchedule:
        return make_schedule(self.total_steps, self.lr_curve())

    def model_config(self, vocab: Vocabulary) -> ModelConfig:
        return ModelConfig(
            vocab_size=len(vocab),
            pad_id=vocab.pad_id,
            bos_id=vocab.bos_id,
            eos_id=vocab.eos_id,
            layers=self.layers,
            model_dim=self.model_dim,
            heads=self.heads,
            ffn_dim=self.ffn_dim,
            dropout=self.dropout,
            label_smoothing=self.label_smoothing,
            max_positions=self.max_positions,
        )

    def noise_config(self) -> NoiseConfig:
        lex = CodeSwitchLexicon.load(self.lexicon) if self.lexicon else None
        return NoiseConfig(
            wd=self.wd,
            wb=self.wb,
            sk=self.sk,
            mode=self.noise_mode,
            scheme=self.noise_scheme,
            lexicon=lex,
        )

    def checkpoint_interval(self) -> int:
        if self.checkpoint_every is not None:
            if self.checkpoint_every < 1:
                raise ConfigError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
            return self.checkpoint_every
        return max(1, self.total_steps // 20)

    def to_json(self) -> str:
        # output_dir is deliberately excluded: artifacts must not depend on
        # where they are written, and resume may relocate a run.
        payload = dataclasses.asdict(self)
        payload.pop("output_dir")
        return json.dumps(payload, sort_keys=True)

    def config_hash(self) -> str:
        return config_fingerprint(self.to_json())

    @classmethod
    def from_mapping(cls, mapping: dict) -> "RunConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            if key not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(raw, fields[key].type, key)
        return cls(**kwargs)


_TYPE_PARSERS = {
    "int": int,
    "float": float,
    "str": str,
    "bool": None,
    "int | None": int,
    "str | None": str,
}


def _coerce(raw, type_name: str, key: str):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if type_name not in _TYPE_PARSERS:
        raise ConfigError(f"config key {key!r} has unsupported type {type_name}")
    if text.lower() in ("none", "null", ""):
        if "None" in type_name:
            return None
        raise ConfigError(f"config key {key!r} must not be empty")
    if type_name == "bool":
        if text.lower() in ("true", "yes", "1"):
            return True
        if text.lower() in ("false", "no", "0"):
            return False
        raise ConfigError(f"config key {key!r} expects a boolean, got {raw!r}")
    try:
        return _TYPE_PARSERS[type_name](text)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from exc


def parse_config_file(path: str | Path) -> dict:
    """Flat "key = value" file with '#' comments and blank lines."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        values[key.strip()] = value.strip()
    return values


def config_diff(old_json: str, new_json: str) -> str:
    old = json.loads(old_json)
    new = json.loads(new_json)
    lines = []
    for key in sorted(set(old) | set(new)):
        a, b = old.get(key, "<absent>"), new.get(key, "<absent>")
        if a != b:
            lines.append(f"  {key}: checkpoint={a!r} requested={b!r}")
    return "\n".join(lines) or "  (no field-level difference found)"


class RunLog:
    """Append-only line-delimited JSON records, one per event."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []
        self._fh = open(self.path, "a", encoding="utf-8") if self.path else None

    def append(self, record: dict) -> None:
        self.records.append(record)
        if self._fh is not None:
            self._fh.write(json.dumps(record, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def step_records(self) -> list[dict]:
        return [r for r in self.records if r.get("kind") == "step"]


@dataclass
class _Language:
    tag: str
    index: int
    finetune_iter: Iterator[Batch]
    denoise_src_iter: Iterator[Batch] | None = None
    denoise_tgt_iter: Iterator[Batch] | None = None
    denoise_mixed_iter: Iterator[Batch] | None = None


def noise_seed_for(seed: int, language_index: int = 0) -> int:
    """The derived seed a run uses to noise one language's denoising data."""
    return derive_seed(seed, _SEED_NOISE, language_index)


def encode_corpus(corpus: ParallelCorpus, table: MergeTable, vocab: Vocabulary):
    """Clean parallel pairs as (source ids, target ids), subword-encoded."""
    return [
        (encode(bpe_apply(p.source, table), vocab), encode(bpe_apply(p.target, table), vocab))
        for p in corpus.pairs
    ]


def encode_denoising(examples, table: MergeTable, vocab: Vocabulary):
    return [
        (encode(bpe_apply(ex.input, table), vocab), encode(bpe_apply(ex.output, table), vocab))
        for ex in examples
    ]


def _as_pool(data: Union[ParallelCorpus, MultilingualPool], temperature: float) -> MultilingualPool:
    if isinstance(data, MultilingualPool):
        return data
    return MultilingualPool({data.tag: data}, temperature)


def _lang_rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(derive_seed(seed, tag))))


def _build_languages(
    config: RunConfig,
    pool: MultilingualPool,
    table: MergeTable,
    vocab: Vocabulary,
) -> list[_Language]:
    noise_cfg = config.noise_config()
    languages = []
    for idx, (tag, corpus) in enumerate(pool.corpora.items()):
        stream = BatchStream(config.batch_tokens, derive_seed(config.seed, _SEED_BATCHES, idx))
        finetune_iter = iter_batches(encode_corpus(corpus, table, vocab), "parallel", stream, TAG_PARALLEL)
        lang = _Language(tag=tag, index=idx, finetune_iter=finetune_iter)
        if config.mode == "denoise":
            noise_seed = derive_seed(config.seed, _SEED_NOISE, idx)

            def build(side_filter: str | None, epoch: int | None, _seed=noise_seed, _corpus=corpus):
                seed = _seed if epoch is None else derive_seed(_seed, _SEED_RENOISE, epoch)
                m_src, m_tgt = build_denoising(_corpus, noise_cfg, seed)
                if side_filter == "src":
                    return encode_denoising(m_src, table, vocab)
                if side_filter == "tgt":
                    return encode_denoising(m_tgt, table, vocab)
                return encode_denoising(m_src, table, vocab) + encode_denoising(m_tgt, table, vocab)

            renoise = config.renoise_each_epoch
            if config.mixed_denoise_batches:
                lang.denoise_mixed_iter = iter_batches(
                    [] if renoise else build(None, None),
                    "mixed", stream, TAG_MIXED,
                    refresh=(lambda e, _b=build: _b(None, e)) if renoise else None,
                )
            else:
                lang.denoise_src_iter = iter_batches(
                    [] if renoise else build("src", None),
                    "src", stream, TAG_SRC,
                    refresh=(lambda e, _b=build: _b("src", e)) if renoise else None,
                )
                lang.denoise_tgt_iter = iter_batches(
                    [] if renoise else build("tgt", None),
                    "tgt", stream, TAG_TGT,
                    refresh=(lambda e, _b=build: _b("tgt", e)) if renoise else None,
                )
        languages.append(lang)
    return languages


def run(
    config: RunConfig,
    data: Union[ParallelCorpus, MultilingualPool],
    table: MergeTable,
    vocab: Vocabulary,
) -> RunLog:
    """Execute a full training run into config.output_dir.

    Artifacts: config.json (config echo), run_log.jsonl, checkpoints/, and
    averaged.pt (mean of the last ``average_last`` checkpoints, the model to
    decode with).
    """
    out = Path(config.output_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config.to_json() + "\n", encoding="utf-8")
    log = RunLog(out / "run_log.jsonl")
    try:
        _run_loop(config, data, table, vocab, log, start_step=0, init_state=None)
    finally:
        log.close()
    return log


def resume(
    checkpoint_path: str | Path,
    config: RunConfig,
    data: Union[ParallelCorpus, MultilingualPool],
    table: MergeTable,
    vocab: Vocabulary,
) -> RunLog:
    """Continue an interrupted run from a step checkpoint.

    The config must hash-match the one the checkpoint was trained with;
    otherwise the refusal names the differing fields. Resuming replays the
    deterministic batch bookkeeping up to the checkpoint step and then
    continues, yielding parameters bitwise-equal to an uninterrupted run.
    """
    payload = load_checkpoint(checkpoint_path)
    if payload["config_hash"] != config.config_hash():
        raise ConfigError(
            "checkpoint config does not match requested config:\n"
            + config_diff(payload["config_json"], config.to_json())
        )
    out = Path(config.output_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    log = RunLog(out / "run_log.jsonl")
    try:
        if payload["step"] >= config.total_steps:
            log.append(
                {
                    "kind": "resume_noop",
                    "step": payload["step"],
                    "message": f"checkpoint already at step {payload['step']} of {config.total_steps}",
                }
            )
            return log
        log.append({"kind": "resume", "step": payload["step"]})
        _run_loop(config, data, table, vocab, log, start_step=payload["step"], init_state=payload)
    finally:
        log.close()
    return log


def _run_loop(
    config: RunConfig,
    data: Union[ParallelCorpus, MultilingualPool],
    table: MergeTable,
    vocab: Vocabulary,
    log: RunLog,
    start_step: int,
    init_state: dict | None,
) -> None:
    torch.set_num_threads(1)  # keeps CPU reductions bit-stable across hosts
    pool = _as_pool(data, config.temperature)
    schedule = config.schedule()
    curve = config.lr_curve()
    denoise_steps = schedule.denoise_steps if config.mode == "denoise" else 0
    out = Path(config.output_dir)
    interval = config.checkpoint_interval()

    torch.manual_seed(derive_seed(config.seed, _SEED_TORCH))
    model = Seq2SeqModel(config.model_config(vocab))
    optimizer = make_optimizer(model, config.weight_decay)
    languages = _build_languages(config, pool, table, vocab)
    by_tag = {lang.tag: lang for lang in languages}
    dn_lang_rng = _lang_rng(config.seed, _SEED_LANG_DENOISE)
    ft_lang_rng = _lang_rng(config.seed, _SEED_LANG_FINETUNE)

    if init_state is not None:
        model.load_state_dict(init_state["model_state"])
        if init_state.get("optimizer_state") is not None:
            optimizer.load_state_dict(init_state["optimizer_state"])
        if init_state.get("torch_rng_state") is not None:
            torch.set_rng_state(init_state["torch_rng_state"])

    saved_checkpoints: list[Path] = []
    if init_state is not None:
        # earlier checkpoints of the interrupted run still count toward averaging
        saved_checkpoints = sorted((out / "checkpoints").glob("step*.pt"))
        saved_checkpoints = [p for p in saved_checkpoints if _checkpoint_step(p) <= start_step]

    model.train()
    bad_loss_streak = 0
    for step in range(config.total_steps):
        phase = "denoise" if step < denoise_steps else "finetune"
        replaying = step < start_step

        if (
            config.mode == "denoise"
            and step == denoise_steps
            and not replaying
            and config.reset_optimizer_at_phase
        ):
            optimizer = make_optimizer(model, config.weight_decay)
        if config.mode == "denoise" and step == denoise_steps and not replaying:
            log.append({"kind": "phase_transition", "step": step, "to": "finetune"})

        if phase == "denoise":
            if len(languages) > 1:
                if config.denoise_language_sampling == "temperature":
                    lang = by_tag[sample_language(pool, dn_lang_rng)]
                else:
                    lang = languages[int(dn_lang_rng.integers(len(languages)))]
            else:
                lang = languages[0]
            if config.mixed_denoise_batches:
                batch = next(lang.denoise_mixed_iter)
            elif step % 2 == 0:
                batch = next(lang.denoise_src_iter)
            else:
                batch = next(lang.denoise_tgt_iter)
        else:
            if len(languages) > 1:
                lang = by_tag[sample_language(pool, ft_lang_rng)]
            else:
                lang = languages[0]
            batch = next(lang.finetune_iter)

        if replaying:
            continue

        lr = lr_at(curve, step)
        seq_batch = SequenceBatch.from_pairs(batch.examples, model.cfg)
        started = time.perf_counter()
        loss, n_tokens, _stepped = backward_step(model, optimizer, seq_batch, lr)
        elapsed = max(time.perf_counter() - started, 1e-9)

        log.append(
            {
                "kind": "step",
                "step": step,
                "phase": phase,
                "side": batch.side,
                "language": lang.tag,
                "loss": loss,
                "lr": lr,
                "ntokens": n_tokens,
                "tokens_per_sec": n_tokens / elapsed,
            }
        )

        if not math.isfinite(loss):
            bad_loss_streak += 1
            if bad_loss_streak >= 3:
                log.append({"kind": "abort", "step": step, "reason": "non-finite loss 3 consecutive steps"})
                raise RuntimeError(
                    f"aborting at step {step}: non-finite loss for 3 consecutive steps"
                )
        else:
            bad_loss_streak = 0

        completed = step + 1
        if completed % interval == 0 or completed == config.total_steps:
            path = out / "checkpoints" / f"step{completed:08d}.pt"
            save_checkpoint(
                path,
                model_state=model.state_dict(),
                step=completed,
                phase=phase,
                config_json=config.to_json(),
                optimizer_state=optimizer.state_dict(),
                torch_rng_state=torch.get_rng_state(),
                extra={"mode": config.mode},
            )
            if path not in saved_checkpoints:
                saved_checkpoints.append(path)
            log.append({"kind": "checkpoint", "step": completed, "file": path.name})

    _write_averaged(config, saved_checkpoints, out, log)


def _checkpoint_step(path: Path) -> int:
    return int(path.stem.replace("step", ""))


def _write_averaged(config: RunConfig, saved: list[Path], out: Path, log: RunLog) -> None:
    if not saved:
        raise CheckpointError("run finished without saving any checkpoint")
    last = sorted(saved, key=_checkpoint_step)[-min(config.average_last, len(saved)):]
    states = [load_checkpoint(p)["model_state"] for p in last]
    averaged = average_params(states)
    save_checkpoint(
        out / "averaged.pt",
        model_state=averaged,
        step=_checkpoint_step(last[-1]),
        phase="averaged",
        config_json=config.to_json(),
        extra={"averaged_from_steps": [_checkpoint_step(p) for p in last]},
    )
    log.append(
        {
            "kind": "averaged",
            "file": "averaged.pt",
            "from_steps": [_checkpoint_step(p) for p in last],
        }
    )


def load_model(checkpoint_path: str | Path, vocab: Vocabulary) -> tuple[Seq2SeqModel, dict]:
    """Rebuild a model from any checkpoint (step or averaged)."""
    payload = load_checkpoint(checkpoint_path)
    run_cfg = RunConfig.from_mapping(json.loads(payload["config_json"]))
    model = Seq2SeqModel(run_cfg.model_config(vocab))
    try:
        model.load_state_dict(payload["model_state"])
    except RuntimeError as exc:
        raise CheckpointError(f"{checkpoint_path}: {exc}") from exc
    model.eval()
    return model, payload
