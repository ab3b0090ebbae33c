"""scikit-learn style wrapper around training and inference."""

from __future__ import annotations

import tempfile
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data.preprocess import preprocess
from .data.samples import WordSample
from .evaluate import word_accuracy
from .trainer import TrainConfig, Trainer


def check_images(X) -> list[np.ndarray]:
    """Accept a sequence of ``(H, W)``/``(H, W, C)`` uint8 crops or one stacked array."""
    if isinstance(X, np.ndarray) and X.ndim in (3, 4) and X.dtype != object:
        X = list(X)
    if isinstance(X, (str, bytes)) or not isinstance(X, Sequence):
        raise TypeError(f"X must be a sequence of images, got {type(X).__name__}")
    if not len(X):
        raise ValueError("X is empty")
    out = []
    for i, img in enumerate(X):
        arr = np.asarray(img)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3) or 0 in arr.shape:
            raise ValueError(f"image {i} has shape {np.shape(img)}; expected (H, W), (H, W, 1) or (H, W, 3)")
        if arr.dtype != np.uint8:
            if not np.issubdtype(arr.dtype, np.number) or arr.min() < 0 or arr.max() > 255:
                raise ValueError(f"image {i} must hold uint8-range values")
            arr = arr.astype(np.uint8)
        out.append(arr)
    return out


def check_texts(y, n: int) -> list[str]:
    if isinstance(y, str):
        raise TypeError("y must be a sequence of strings, not a single string")
    texts = [str(t) for t in y]
    if len(texts) != n:
        raise ValueError(f"X has {n} images but y has {len(texts)} texts")
    empty = [i for i, t in enumerate(texts) if not t]
    if empty:
        raise ValueError(f"empty transcriptions at positions {empty[:5]}")
    return texts


class TextRecognizer(BaseEstimator):
    """Word-image recognizer with ``fit(images, texts)`` / ``predict(images)``.

    Training runs the same loop as the command-line trainer on a single
    in-memory dataset; ``max_steps`` (when set) replaces the epoch count.
    """

    def __init__(
        self,
        preset: str = "desk",
        case_mode: str = "insensitive",
        lr: float = 1e-4,
        batch_size: int = 48,
        epochs: int = 15,
        max_steps: int | None = None,
        use_tps: bool = True,
        augment: bool = False,
        target_accuracy: float | None = None,
        log_every: int = 50,
        seed: int = 0,
        checkpoint_dir: str | None = None,
    ):
        self.preset = preset
        self.case_mode = case_mode
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.max_steps = max_steps
        self.use_tps = use_tps
        self.augment = augment
        self.target_accuracy = target_accuracy
        self.log_every = log_every
        self.seed = seed
        self.checkpoint_dir = checkpoint_dir

    def _config(self, checkpoint_dir: str, n: int) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            mix={"train": 1.0},
            datasets={"train": "<memory>"},
            case_mode=self.case_mode,
            preset=self.preset,
            use_tps=self.use_tps,
            checkpoint_dir=checkpoint_dir,
            log_every=self.log_every,
            max_steps=self.max_steps,
            augment=self.augment,
            eval_slice=min(n, 32),
            target_accuracy=self.target_accuracy,
        )

    def fit(self, X, y) -> TextRecognizer:
        images = check_images(X)
        texts = check_texts(y, len(images))
        samples = [WordSample(img, text=t, source="train") for img, t in zip(images, texts)]
        if self.checkpoint_dir is None:
            with tempfile.TemporaryDirectory() as tmp:
                result, trainer = self._train(tmp, samples)
        else:
            result, trainer = self._train(self.checkpoint_dir, samples)
        self.model_ = trainer.model
        self.n_steps_ = result.steps
        self.final_loss_ = result.final_loss
        return self

    def _train(self, directory: str, samples: list[WordSample]):
        trainer = Trainer(self._config(directory, len(samples)), {"train": samples})
        return trainer.train(), trainer

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        images = check_images(X)
        batch = np.stack([preprocess(WordSample(img, text="?")) for img in images])
        return np.array(self.model_.recognize(batch), dtype=object)

    def score(self, X, y) -> float:
        """Word accuracy under the estimator's case mode."""
        preds = self.predict(X)
        return word_accuracy(list(preds), check_texts(y, len(preds)), self.case_mode)
