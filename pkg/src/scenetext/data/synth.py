"""Deterministic desk-scale word renderer built on the 5x7 bitmap font."""

from __future__ import annotations

import string

import numpy as np

from .font import GLYPH_H, GLYPH_W, GLYPHS
from .samples import WordSample

DEFAULT_CHARSET = string.digits + string.ascii_lowercase


def render_text(
    text: str,
    scale: int,
    rng: np.random.Generator,
    foreground: int = 20,
    background: int = 235,
    noise: float = 0.0,
) -> np.ndarray:
    """Render ``text`` with random margins; returns ``(H, W, 1)`` uint8."""
    spacing = 1
    cols = len(text) * (GLYPH_W + spacing) - spacing
    canvas = np.zeros((GLYPH_H, cols), dtype=bool)
    for i, ch in enumerate(text):
        x = i * (GLYPH_W + spacing)
        canvas[:, x : x + GLYPH_W] = GLYPHS[ch]
    canvas = np.kron(canvas, np.ones((scale, scale), dtype=bool))
    top, bottom = rng.integers(1, 2 * scale + 2, size=2)
    left, right = rng.integers(1, 3 * scale + 2, size=2)
    canvas = np.pad(canvas, ((top, bottom), (left, right)))
    img = np.where(canvas, float(foreground), float(background))
    if noise > 0:
        img = img + rng.normal(0.0, noise, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)[:, :, None]


def synth_corpus(
    n: int,
    seed: int = 0,
    charset: str = DEFAULT_CHARSET,
    size_range: tuple[int, int] = (2, 4),
    max_chars: int = 10,
    noise: float = 8.0,
    source: str = "synth",
) -> list[WordSample]:
    """``n`` random words of 1..``max_chars`` characters, reproducible from ``seed``.

    ``size_range`` bounds the integer pixel size of one glyph dot.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not charset:
        raise ValueError("charset must be nonempty")
    unknown = set(charset) - set(GLYPHS)
    if unknown:
        raise ValueError(f"no glyphs for characters {sorted(unknown)}")
    rng = np.random.default_rng(seed)
    chars = list(charset)
    out = []
    for _ in range(n):
        length = int(rng.integers(1, max_chars + 1))
        text = "".join(rng.choice(chars, size=length))
        scale = int(rng.integers(size_range[0], size_range[1] + 1))
        fg, bg = rng.integers(0, 90), rng.integers(160, 256)
        if rng.random() < 0.5:
            fg, bg = bg, fg
        img = render_text(text, scale, rng, int(fg), int(bg), noise=noise * rng.random())
        out.append(WordSample(pixels=img, text=text, source=source))
    return out
