from __future__ import annotations

import string
from typing import Iterable, Sequence

import numpy as np

CASE_MODES = ("insensitive", "sensitive")
SPECIALS = ("<start>", "<end>", "<pad>", "<unk>")


class Vocabulary:
    """Bijection between symbols and class indices.

    Case-insensitive: digits 0-9, letters a-z at 10-35, then start/end/pad/unk
    (40 classes). Case-sensitive adds A-Z before the specials (66 classes).
    """

    def __init__(self, case_mode: str = "insensitive"):
        if case_mode not in CASE_MODES:
            raise ValueError(f"case_mode must be one of {CASE_MODES}, got {case_mode!r}")
        self.case_mode = case_mode
        chars = string.digits + string.ascii_lowercase
        if case_mode == "sensitive":
            chars += string.ascii_uppercase
        self.chars = chars
        self.symbols = list(chars) + list(SPECIALS)
        self._index = {c: i for i, c in enumerate(chars)}
        base = len(chars)
        self.start, self.end, self.pad, self.unk = base, base + 1, base + 2, base + 3

    def __len__(self) -> int:
        return len(self.symbols)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and other.case_mode == self.case_mode

    def __repr__(self) -> str:
        return f"Vocabulary(case_mode={self.case_mode!r}, size={len(self)})"

    @property
    def specials(self) -> tuple[int, int, int, int]:
        return self.start, self.end, self.pad, self.unk

    def normalize(self, text: str) -> str:
        return text.lower() if self.case_mode == "insensitive" else text

    def encode(self, text: str) -> list[int]:
        """Indices for ``text`` followed by the end token; unknown characters map to unk."""
        if not text:
            raise ValueError("cannot encode empty text")
        text = self.normalize(text)
        return [self._index.get(ch, self.unk) for ch in text] + [self.end]

    def decode(self, indices: Iterable[int]) -> str:
        """Inverse of :meth:`encode`; stops at end, drops every special token."""
        out = []
        n_chars = len(self.chars)
        for i in indices:
            i = int(i)
            if i == self.end:
                break
            if 0 <= i < n_chars:
                out.append(self.chars[i])
        return "".join(out)

    def encode_batch(self, texts: Sequence[str], length: int | None = None) -> np.ndarray:
        """Encode and pad with the pad token to the longest sequence (or ``length``)."""
        encoded = [self.encode(t) for t in texts]
        width = max(len(e) for e in encoded) if length is None else length
        out = np.full((len(encoded), width), self.pad, dtype=np.int64)
        for row, seq in enumerate(encoded):
            if len(seq) > width:
                raise ValueError(f"text {texts[row]!r} needs {len(seq)} tokens, limit is {width}")
            out[row, : len(seq)] = seq
        return out

    def to_dict(self) -> dict:
        return {"case_mode": self.case_mode, "symbols": self.symbols}

    @classmethod
    def from_dict(cls, d: dict) -> Vocabulary:
        vocab = cls(d["case_mode"])
        if d.get("symbols", vocab.symbols) != vocab.symbols:
            raise ValueError("vocabulary symbols in checkpoint do not match this build")
        return vocab


def encode_text(text: str, vocab: Vocabulary) -> list[int]:
    return vocab.encode(text)
