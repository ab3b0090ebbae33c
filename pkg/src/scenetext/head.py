"""Convolutional encoder + GRU decoder with 2-D additive attention."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import functional as F
from .autodiff.nn import Conv2d, Embedding, GRUCell, Linear, Module, parameter
from .autodiff.tensor import Tensor, concat, stack
from .data.vocab import Vocabulary


@dataclass
class HeadConfig:
    channels: int = 128
    feature_hw: tuple[int, int] = (3, 12)
    encoder_layers: int = 2
    encoder_kernel: int = 3
    hidden: int = 256
    attention_dim: int = 256
    embed_dim: int = 64
    max_len: int = 33

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> HeadConfig:
        d = dict(d)
        d["feature_hw"] = tuple(d["feature_hw"])
        return cls(**d)

    @property
    def positions(self) -> int:
        return self.feature_hw[0] * self.feature_hw[1]


@dataclass
class Memory:
    """Encoder output, flattened y-major over the feature lattice."""

    keys: Tensor  # (N, P, D), positional encoding added
    values: Tensor  # (N, P, D)
    projected: Tensor  # (N, P, A), keys through the attention key projection

    @property
    def batch(self) -> int:
        return self.keys.shape[0]


@dataclass
class DecodeResult:
    tokens: list[list[int]]
    texts: list[str]
    attention: np.ndarray  # (N, steps, P)


class RecognitionHead(Module):
    def __init__(self, config: HeadConfig, vocab: Vocabulary, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.config = config
        self.vocab = vocab
        c = config
        self.encoder: list[Conv2d] = []
        for i in range(c.encoder_layers):
            conv = Conv2d(c.channels, c.channels, c.encoder_kernel, padding=c.encoder_kernel // 2, rng=rng, dtype=dtype)
            setattr(self, f"encoder{i}", conv)
            self.encoder.append(conv)
        self.positional = parameter(rng.normal(0.0, 0.02, size=(c.positions, c.channels)), dtype)
        self.attn_key = Linear(c.channels, c.attention_dim, bias=False, rng=rng, dtype=dtype)
        self.attn_query = Linear(c.hidden, c.attention_dim, rng=rng, dtype=dtype)
        self.attn_score = Linear(c.attention_dim, 1, bias=False, rng=rng, dtype=dtype)
        self.embedding = Embedding(len(vocab), c.embed_dim, rng=rng, dtype=dtype)
        self.gru = GRUCell(c.embed_dim + c.channels, c.hidden, rng=rng, dtype=dtype)
        # small output layer keeps the initial posterior close to uniform
        self.classifier = Linear(c.hidden, len(vocab), rng=rng, dtype=dtype, scale=0.01)
        self.dtype = np.dtype(dtype)

    @property
    def num_classes(self) -> int:
        return len(self.vocab)

    def encode(self, features: Tensor) -> Memory:
        n, ch, h, w = features.shape
        if (h, w) != tuple(self.config.feature_hw):
            raise ValueError(f"encoder expects a {self.config.feature_hw} feature map, got {h}x{w}")
        x = features
        for conv in self.encoder:
            x = conv(x).relu()
        values = x.reshape(n, ch, h * w).transpose(0, 2, 1)
        keys = values + self.positional
        return Memory(keys=keys, values=values, projected=self.attn_key(keys))

    def initial_hidden(self, batch: int) -> Tensor:
        return Tensor(np.zeros((batch, self.config.hidden), dtype=self.dtype))

    def attend(self, hidden: Tensor, memory: Memory) -> tuple[Tensor, Tensor]:
        """Additive scores ``v . tanh(W_h h + W_k k_i)`` softmaxed over all positions."""
        n, p, a = memory.projected.shape
        query = self.attn_query(hidden).reshape(n, 1, a)
        scores = self.attn_score((memory.projected + query).tanh()).reshape(n, p)
        weights = F.softmax(scores, axis=1)
        return F.attention_context(weights, memory.values), weights

    def _step(self, embedded: Tensor, hidden: Tensor, memory: Memory) -> tuple[Tensor, Tensor]:
        context, weights = self.attend(hidden, memory)
        hidden = self.gru(concat([embedded, context], axis=1), hidden)
        return hidden, weights

    def decode_step(self, prev_tokens, hidden: Tensor, memory: Memory) -> tuple[Tensor, Tensor, Tensor]:
        """One decoding step -> (logits (N, classes), next hidden, attention weights)."""
        prev = np.asarray(prev_tokens, dtype=np.int64)
        if prev.shape != (memory.batch,):
            raise ValueError(f"expected {memory.batch} previous tokens, got shape {prev.shape}")
        if prev.min() < 0 or prev.max() >= self.num_classes:
            raise IndexError(f"previous token out of range [0, {self.num_classes})")
        hidden, weights = self._step(self.embedding(prev), hidden, memory)
        return self.classifier(hidden), hidden, weights

    def forward_teacher_forced(self, memory: Memory, targets) -> Tensor:
        """Log-probabilities ``(N, T, classes)``; step t is conditioned on gold token t-1."""
        tgt = np.asarray(targets, dtype=np.int64)
        n, t = tgt.shape
        if t > self.config.max_len:
            raise ValueError(f"target length {t} exceeds max_len {self.config.max_len}")
        inputs = np.concatenate([np.full((n, 1), self.vocab.start), tgt[:, :-1]], axis=1)
        embedded = self.embedding(inputs)  # (N, T, E)
        hidden = self.initial_hidden(n)
        states = []
        for step in range(t):
            hidden, _ = self._step(embedded[:, step], hidden, memory)
            states.append(hidden)
        logits = self.classifier(stack(states, axis=1))
        return F.log_softmax(logits, axis=-1)

    def greedy_decode(self, memory: Memory, max_len: int | None = None) -> DecodeResult:
        max_len = self.config.max_len if max_len is None else max_len
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        n = memory.batch
        v = self.vocab
        prev = np.full(n, v.start, dtype=np.int64)
        hidden = self.initial_hidden(n)
        done = np.zeros(n, dtype=bool)
        tokens: list[list[int]] = [[] for _ in range(n)]
        maps = []
        for _ in range(max_len):
            logits, hidden, weights = self.decode_step(prev, hidden, memory)
            scores = logits.data.copy()
            scores[:, v.unk] = -np.inf
            # argmax keeps the lowest index on ties
            prev = scores.argmax(axis=1)
            maps.append(weights.data)
            for row in np.flatnonzero(~done):
                tok = int(prev[row])
                if tok == v.end:
                    done[row] = True
                elif tok not in (v.start, v.pad):
                    tokens[row].append(tok)
            if done.all():
                break
        texts = [v.decode(seq) for seq in tokens]
        return DecodeResult(tokens=tokens, texts=texts, attention=np.stack(maps, axis=1))
