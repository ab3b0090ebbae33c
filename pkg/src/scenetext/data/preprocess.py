"""Resize, augmentation and grayscale conversion to the fixed network input."""

from __future__ import annotations

import cv2
import numpy as np

from .samples import WordSample

INPUT_H, INPUT_W = 64, 256
LUMA = np.array([0.299, 0.587, 0.114])

JITTER_RANGE = (0.6, 1.4)
BLUR_KERNELS = (3, 5)
BLUR_SIGMA = (0.1, 2.0)
BLUR_PROB = 0.5


def _gray(img: np.ndarray) -> np.ndarray:
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img @ LUMA


def color_jitter(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Brightness, contrast and saturation blends on a float image in [0, 255]."""
    lo, hi = JITTER_RANGE
    b, c, s = rng.uniform(lo, hi, size=3)
    img = np.clip(img * b, 0, 255)
    img = np.clip((img - _gray(img).mean()) * c + _gray(img).mean(), 0, 255)
    if img.shape[2] == 3:
        gray = _gray(img)[:, :, None]
        img = np.clip(gray + (img - gray) * s, 0, 255)
    return img


def gaussian_blur(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    k = int(rng.choice(BLUR_KERNELS))
    sigma = float(rng.uniform(*BLUR_SIGMA))
    out = cv2.GaussianBlur(img.astype(np.float32), (k, k), sigma)
    return out.reshape(img.shape).astype(np.float64)


def preprocess(sample: WordSample | np.ndarray, augment: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
    """Map a word image to a ``(1, 64, 256)`` array in [0, 1].

    Order: bilinear resize (aspect ratio not preserved) -> optional jitter and
    blur -> luma grayscale -> divide by 255.
    """
    pixels = sample.pixels if isinstance(sample, WordSample) else np.asarray(sample)
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    img = cv2.resize(pixels.astype(np.float32), (INPUT_W, INPUT_H), interpolation=cv2.INTER_LINEAR)
    img = img.reshape(INPUT_H, INPUT_W, pixels.shape[2]).astype(np.float64)
    if augment:
        if rng is None:
            raise ValueError("augmentation needs an explicit rng")
        img = color_jitter(img, rng)
        if rng.random() < BLUR_PROB:
            img = gaussian_blur(img, rng)
    gray = _gray(img) / 255.0
    return np.clip(gray, 0.0, 1.0)[None].astype(np.float32)
