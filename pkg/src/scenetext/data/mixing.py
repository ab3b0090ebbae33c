"""Ratio-controlled batches drawn from several tagged datasets."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .preprocess import preprocess
from .samples import WordSample
from .vocab import Vocabulary


@dataclass
class MixSpec:
    """Fraction of each batch drawn from each dataset tag."""

    entries: list[tuple[str, float]]
    batch_size: int = 48

    def __post_init__(self):
        self.entries = [(str(tag), float(f)) for tag, f in self.entries]
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.entries:
            raise ValueError("MixSpec needs at least one dataset")
        if any(not 0.0 <= f <= 1.0 for _, f in self.entries):
            raise ValueError(f"fractions must lie in [0, 1]: {self.entries}")
        total = sum(f for _, f in self.entries)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got {total}")
        tags = [t for t, _ in self.entries]
        if len(set(tags)) != len(tags):
            raise ValueError(f"duplicate dataset tags in {tags}")

    @classmethod
    def from_mapping(cls, mix: Mapping[str, float], batch_size: int = 48) -> MixSpec:
        return cls(list(mix.items()), batch_size)

    @property
    def tags(self) -> list[str]:
        return [t for t, _ in self.entries]

    def counts(self) -> dict[str, int]:
        return dict(zip(self.tags, apportion([f for _, f in self.entries], self.batch_size)))


def apportion(fractions: Sequence[float], total: int) -> list[int]:
    """Largest-remainder apportionment; ties go to the earlier entry."""
    quotas = [f * total for f in fractions]
    counts = [math.floor(q + 1e-9) for q in quotas]
    remainders = [q - c for q, c in zip(quotas, counts)]
    order = sorted(range(len(quotas)), key=lambda i: (-round(remainders[i], 9), i))
    for i in order[: total - sum(counts)]:
        counts[i] += 1
    return counts


@dataclass
class Batch:
    images: np.ndarray  # (B, 1, 64, 256) float32
    targets: np.ndarray  # (B, T) int64, pad-filled
    sources: list[str]
    texts: list[str]


def make_batch(
    datasets: Mapping[str, Sequence[WordSample]],
    mix: MixSpec,
    vocab: Vocabulary,
    rng: np.random.Generator,
    augment: bool = False,
    max_len: int | None = None,
    cache: dict | None = None,
) -> Batch:
    """Draw ``mix.counts()`` samples per dataset uniformly with replacement.

    ``cache`` memoizes unaugmented preprocessing keyed by (tag, index).
    """
    for tag in mix.tags:
        if tag not in datasets:
            raise KeyError(f"MixSpec references unknown dataset {tag!r}")
        if not len(datasets[tag]):
            raise ValueError(f"dataset {tag!r} is empty")
    images, texts, sources = [], [], []
    for tag, count in mix.counts().items():
        data = datasets[tag]
        picks = rng.integers(0, len(data), size=count)
        for i in picks:
            sample = data[int(i)]
            if augment:
                img = preprocess(sample, augment=True, rng=rng)
            elif cache is not None:
                key = (tag, int(i))
                if key not in cache:
                    cache[key] = preprocess(sample)
                img = cache[key]
            else:
                img = preprocess(sample)
            images.append(img)
            texts.append(sample.text)
            sources.append(tag)
    targets = vocab.encode_batch(texts)
    if max_len is not None and targets.shape[1] > max_len:
        targets = targets[:, :max_len]
    return Batch(np.stack(images), targets, sources, texts)
