"""Training loop: mixed batches -> model -> NLL -> Adam, with checkpoints and a CSV log."""

from __future__ import annotations

import csv
import math
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .autodiff.optim import Adam
from .autodiff.tensor import backward
from .checkpoint import load_checkpoint, save_checkpoint
from .data.mixing import Batch, MixSpec, make_batch
from .data.preprocess import preprocess
from .data.samples import WordSample, load_annotations
from .data.synth import synth_corpus
from .evaluate import word_accuracy
from .model import TextRecognitionModel, preset_config

METRICS_HEADER = ("step", "epoch", "loss", "lr", "ms_per_step", "train_acc")
PREFETCH_DEPTH = 4


class NonFiniteLoss(RuntimeError):
    def __init__(self, step: int, loss: float, last_checkpoint: Path | None):
        self.step = step
        self.loss = loss
        self.last_checkpoint = last_checkpoint
        kept = f"; last good checkpoint: {last_checkpoint}" if last_checkpoint else ""
        super().__init__(f"loss became {loss} at step {step}{kept}")


@dataclass
class TrainConfig:
    """Training hyperparameters and data wiring.

    ``datasets`` maps a tag to either a JSONL annotation path or
    ``synth:<n>[:<seed>]`` for an in-memory synthetic corpus. ``mix`` gives
    the batch fraction per tag. ``max_steps`` overrides the epoch count;
    ``target_accuracy`` stops early once the held slice reaches it.
    """

    lr: float = 1e-4
    weight_decay: float = 0.0
    epochs: int = 15
    batch_size: int = 48
    seed: int = 0
    mix: dict[str, float] = field(default_factory=lambda: {"synth": 1.0})
    datasets: dict[str, str] = field(default_factory=lambda: {"synth": "synth:1000"})
    case_mode: str = "insensitive"
    preset: str = "desk"
    use_tps: bool = True
    dtype: str = "float32"
    checkpoint_dir: str = "checkpoints"
    log_every: int = 50
    max_steps: int | None = None
    augment: bool = False
    eval_slice: int = 32
    target_accuracy: float | None = None
    workers: int = 0
    timing: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.workers < 0:
            raise ValueError("workers must be >= 0")
        missing = set(self.mix) - set(self.datasets)
        if missing:
            raise ValueError(f"mix references datasets without a source: {sorted(missing)}")
        MixSpec.from_mapping(self.mix, self.batch_size)

    @property
    def mix_spec(self) -> MixSpec:
        return MixSpec.from_mapping(self.mix, self.batch_size)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


def resolve_dataset(source: str, tag: str) -> list[WordSample]:
    if source.startswith("synth:"):
        parts = source.split(":")
        try:
            n = int(parts[1])
            seed = int(parts[2]) if len(parts) > 2 else 0
        except (IndexError, ValueError):
            raise ValueError(f"bad synthetic source {source!r}; expected synth:<n>[:<seed>]") from None
        return synth_corpus(n, seed=seed, source=tag)
    return load_annotations(source, source=tag)


def steps_per_epoch(sizes: Mapping[str, int], mix: MixSpec) -> int:
    """``ceil(N_largest / (batch * fraction_largest))`` over the datasets in the mix."""
    fractions = dict(mix.entries)
    tag = max((t for t in mix.tags if fractions[t] > 0), key=lambda t: (sizes[t], -mix.tags.index(t)))
    return max(1, math.ceil(sizes[tag] / (mix.batch_size * fractions[tag])))


@dataclass
class TrainResult:
    steps: int
    final_loss: float
    train_acc: float | None
    checkpoint: Path
    metrics: Path


class Trainer:
    def __init__(
        self,
        config: TrainConfig,
        datasets: Mapping[str, Sequence[WordSample]] | None = None,
        model: TextRecognitionModel | None = None,
        optimizer: Adam | None = None,
        step: int = 0,
    ):
        config.validate()
        self.config = config
        if datasets is None:
            datasets = {tag: resolve_dataset(config.datasets[tag], tag) for tag in config.mix}
        for tag in config.mix:
            if tag not in datasets:
                raise KeyError(f"no dataset loaded for tag {tag!r}")
            if not len(datasets[tag]):
                raise ValueError(f"dataset {tag!r} is empty")
        self.datasets = dict(datasets)
        self.mix = config.mix_spec
        if model is None:
            model = TextRecognitionModel(
                preset_config(
                    config.preset, config.case_mode, use_tps=config.use_tps, dtype=config.dtype, seed=config.seed
                )
            )
        self.model = model
        self.optimizer = optimizer or Adam(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
        self.optimizer.state.lr = config.lr
        self.step = step
        self.steps_per_epoch = steps_per_epoch({t: len(d) for t, d in self.datasets.items()}, self.mix)
        self.total_steps = config.max_steps or config.epochs * self.steps_per_epoch
        self.checkpoint_dir = Path(config.checkpoint_dir)
        self.last_checkpoint: Path | None = None
        self._cache: dict = {}
        heldout = max(self.mix.tags, key=lambda t: dict(self.mix.entries)[t])
        held = list(self.datasets[heldout][: config.eval_slice])
        self._slice_images = np.stack([preprocess(s) for s in held])
        self._slice_texts = [s.text for s in held]

    @classmethod
    def resume(
        cls, checkpoint: str | Path, config: TrainConfig, datasets: Mapping[str, Sequence[WordSample]] | None = None
    ) -> Trainer:
        model, optimizer, header = load_checkpoint(checkpoint)
        return cls(config, datasets, model=model, optimizer=optimizer, step=header["step"])

    @property
    def metrics_path(self) -> Path:
        return self.checkpoint_dir / "metrics.csv"

    def batch_for(self, step: int) -> Batch:
        """The batch of a given step depends only on (seed, step)."""
        rng = np.random.default_rng([self.config.seed, step])
        cache = None if self.config.augment else self._cache
        return make_batch(
            self.datasets,
            self.mix,
            self.model.vocab,
            rng,
            augment=self.config.augment,
            max_len=self.model.config.head.max_len,
            cache=cache,
        )

    def _batches(self, steps: range) -> Iterator[Batch]:
        if not self.config.workers:
            for s in steps:
                yield self.batch_for(s)
            return
        # bounded in-order prefetch; the cache dict is only touched when not augmenting,
        # and racing writers store identical values
        with ThreadPoolExecutor(self.config.workers) as pool:
            pending: deque = deque()
            it = iter(steps)
            for s in it:
                pending.append(pool.submit(self.batch_for, s))
                if len(pending) >= PREFETCH_DEPTH:
                    break
            while pending:
                batch = pending.popleft().result()
                nxt = next(it, None)
                if nxt is not None:
                    pending.append(pool.submit(self.batch_for, nxt))
                yield batch

    def slice_accuracy(self) -> float:
        preds = self.model.recognize(self._slice_images)
        return word_accuracy(preds, self._slice_texts, self.model.vocab.case_mode)

    def train_step(self, batch: Batch) -> float:
        loss = self.model.loss(batch.images, batch.targets)
        value = float(loss.data)
        if not math.isfinite(value):
            raise NonFiniteLoss(self.step, value, self.last_checkpoint)
        backward(loss)
        self.optimizer.step()
        self.step += 1
        return value

    def save(self, path: str | Path) -> Path:
        return save_checkpoint(
            self.model, path, self.optimizer, step=self.step, extra={"train_config": self.config.to_dict()}
        )

    def train(self) -> TrainResult:
        cfg = self.config
        self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        fresh = self.step == 0 or not self.metrics_path.exists()
        loss_value = float("nan")
        acc: float | None = None
        with open(self.metrics_path, "w" if fresh else "a", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if fresh:
                writer.writerow(METRICS_HEADER)
            for batch in self._batches(range(self.step, self.total_steps)):
                index = self.step
                start = time.perf_counter()
                loss_value = self.train_step(batch)
                ms = (time.perf_counter() - start) * 1000.0 if cfg.timing else 0.0
                last = self.step == self.total_steps
                row_acc = ""
                if index % cfg.log_every == 0 or last:
                    acc = self.slice_accuracy()
                    row_acc = f"{acc:.6f}"
                writer.writerow(
                    [index, index // self.steps_per_epoch, f"{loss_value:.8g}", f"{cfg.lr:g}", f"{ms:.1f}", row_acc]
                )
                fh.flush()
                if self.step % self.steps_per_epoch == 0:
                    self.last_checkpoint = self.save(self.checkpoint_dir / "last.trck")
                if cfg.target_accuracy is not None and row_acc and acc >= cfg.target_accuracy:
                    break
        final = self.save(self.checkpoint_dir / "final.trck")
        return TrainResult(self.step, loss_value, acc, final, self.metrics_path)


def train(config: TrainConfig, datasets: Mapping[str, Sequence[WordSample]] | None = None) -> TrainResult:
    return Trainer(config, datasets).train()
