"""Word samples, image IO and JSONL annotation ingestion.

Annotation format (UTF-8, one JSON object per line, one line per parent image)::

    {"image": "relative/path.pgm", "words": [{"box": [x, y, w, h], "text": "word"}, ...]}

Paths are resolved relative to the annotation file. Binary PGM (P5) and PPM
(P6) images are always accepted; PNG only with ``allow_png=True``.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

NETPBM_SUFFIXES = {".pgm", ".ppm", ".pnm"}


class AnnotationError(ValueError):
    """A malformed annotation file."""


class AnnotationWarning(UserWarning):
    """A record or word that was skipped during loading."""


@dataclass
class WordSample:
    pixels: np.ndarray  # (H, W, 1|3) uint8
    text: str
    source: str = ""
    box: tuple[int, int, int, int] | None = None

    def __post_init__(self):
        if not self.text:
            raise ValueError("WordSample text must be nonempty")
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"pixels must be HxW, HxWx1 or HxWx3, got {px.shape}")
        self.pixels = px.astype(np.uint8, copy=False)


def read_image(path: str | Path, allow_png: bool = False) -> np.ndarray:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix not in NETPBM_SUFFIXES and not (allow_png and suffix == ".png"):
        raise ValueError(f"unsupported image format {suffix!r} for {path}")
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.uint8)
    return arr[:, :, None] if arr.ndim == 2 else arr


def write_image(path: str | Path, pixels: np.ndarray) -> None:
    """Write P5 (one channel) or P6 (three channels)."""
    px = np.asarray(pixels, dtype=np.uint8)
    if px.ndim == 3 and px.shape[2] == 1:
        px = px[:, :, 0]
    Image.fromarray(px).save(path)


def crop(pixels: np.ndarray, box: Sequence[int]) -> np.ndarray:
    x, y, w, h = (int(v) for v in box)
    return pixels[y : y + h, x : x + w]


def _valid_box(box, shape) -> str | None:
    if not isinstance(box, (list, tuple)) or len(box) != 4:
        return f"box must be [x, y, w, h], got {box!r}"
    x, y, w, h = box
    if w <= 0 or h <= 0:
        return f"degenerate box {box}"
    if x < 0 or y < 0 or x + w > shape[1] or y + h > shape[0]:
        return f"box {box} outside image of size {shape[1]}x{shape[0]}"
    return None


def load_annotations(path: str | Path, source: str | None = None, allow_png: bool = False) -> list[WordSample]:
    """Read a JSONL annotation file into cropped word samples.

    Malformed JSON raises :class:`AnnotationError` naming the line. Missing
    images, invalid boxes and empty transcriptions are skipped with an
    :class:`AnnotationWarning`.
    """
    path = Path(path)
    root = path.parent
    source = path.stem if source is None else source
    samples: list[WordSample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                image_rel = record["image"]
                words = record["words"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise AnnotationError(f"{path}:{lineno}: malformed record ({exc})") from exc
            image_path = root / image_rel
            if not image_path.exists():
                warnings.warn(f"{path}:{lineno}: missing image {image_path}", AnnotationWarning, stacklevel=2)
                continue
            pixels = read_image(image_path, allow_png=allow_png)
            for word in words:
                box = word.get("box")
                text = word.get("text", "")
                problem = _valid_box(box, pixels.shape) if box is not None else None
                if problem is None and not text:
                    problem = "empty transcription"
                if problem:
                    warnings.warn(f"{path}:{lineno}: {problem}; word skipped", AnnotationWarning, stacklevel=2)
                    continue
                region = crop(pixels, box) if box is not None else pixels
                samples.append(
                    WordSample(
                        pixels=region.copy(),
                        text=text,
                        source=source,
                        box=tuple(int(v) for v in box) if box is not None else None,
                    )
                )
    logger.info("loaded %d word samples from %s", len(samples), path)
    return samples


def save_corpus(samples: Sequence[WordSample], directory: str | Path, name: str = "annotations.jsonl") -> Path:
    """Write each sample as its own PGM/PPM image plus one JSONL annotation file."""
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    ann = directory / name
    with open(ann, "w", encoding="utf-8") as fh:
        for i, s in enumerate(samples):
            ext = ".pgm" if s.pixels.shape[2] == 1 else ".ppm"
            rel = f"images/{i:06d}{ext}"
            write_image(directory / rel, s.pixels)
            h, w = s.pixels.shape[:2]
            fh.write(json.dumps({"image": rel, "words": [{"box": [0, 0, w, h], "text": s.text}]}) + "\n")
    return ann
