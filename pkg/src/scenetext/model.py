"""Full recognizer: TPS rectification -> backbone -> attention head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import functional as F
from .autodiff.nn import Module
from .autodiff.tensor import Tensor, no_grad
from .backbone import Backbone, BackboneConfig, desk_backbone, full_backbone
from .data.vocab import Vocabulary
from .head import DecodeResult, HeadConfig, Memory, RecognitionHead
from .tps import TPSConfig, TPSRectifier, resize_by_sampling

PRESETS = ("desk", "full")


@dataclass
class ModelConfig:
    preset: str = "desk"
    case_mode: str = "insensitive"
    use_tps: bool = True
    dtype: str = "float32"
    seed: int = 0
    tps: TPSConfig = field(default_factory=TPSConfig)
    backbone: BackboneConfig = field(default_factory=desk_backbone)
    head: HeadConfig = field(default_factory=HeadConfig)

    def to_dict(self) -> dict:
        return {
            "preset": self.preset,
            "case_mode": self.case_mode,
            "use_tps": self.use_tps,
            "dtype": self.dtype,
            "seed": self.seed,
            "tps": self.tps.to_dict(),
            "backbone": self.backbone.to_dict(),
            "head": self.head.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(
            preset=d["preset"],
            case_mode=d["case_mode"],
            use_tps=d["use_tps"],
            dtype=d["dtype"],
            seed=d["seed"],
            tps=TPSConfig.from_dict(d["tps"]),
            backbone=BackboneConfig.from_dict(d["backbone"]),
            head=HeadConfig.from_dict(d["head"]),
        )

    def validate(self) -> None:
        self.backbone.validate((self.tps.out_h, self.tps.out_w), self.head.feature_hw)
        if self.backbone.out_channels != self.head.channels:
            raise ValueError(
                f"head channels ({self.head.channels}) must equal backbone output ({self.backbone.out_channels})"
            )


def preset_config(preset: str = "desk", case_mode: str = "insensitive", **overrides) -> ModelConfig:
    if preset == "desk":
        cfg = ModelConfig(preset="desk", case_mode=case_mode)
    elif preset == "full":
        cfg = ModelConfig(
            preset="full",
            case_mode=case_mode,
            backbone=full_backbone(),
            head=HeadConfig(channels=1024, hidden=1024, attention_dim=1024, embed_dim=64),
        )
    else:
        raise ValueError(f"unknown preset {preset!r}; choose from {PRESETS}")
    for key, value in overrides.items():
        if not hasattr(cfg, key):
            raise ValueError(f"unknown model option {key!r}")
        setattr(cfg, key, value)
    return cfg


class TextRecognitionModel(Module):
    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        config = config or ModelConfig()
        config.validate()
        self.config = config
        self.vocab = Vocabulary(config.case_mode)
        dtype = np.dtype(config.dtype)
        self.dtype = dtype
        rng = np.random.default_rng(config.seed)
        if config.use_tps:
            self.rectifier = TPSRectifier(config.tps, rng, dtype)
        self.backbone = Backbone(config.backbone, rng, dtype, (config.tps.out_h, config.tps.out_w))
        self.head = RecognitionHead(config.head, self.vocab, rng, dtype)

    def _as_input(self, images) -> Tensor:
        if isinstance(images, Tensor):
            x = images if images.dtype == self.dtype else Tensor(images.data.astype(self.dtype))
        else:
            x = Tensor(np.asarray(images, dtype=self.dtype))
        t = self.config.tps
        if x.ndim != 4 or x.shape[1:] != (1, t.in_h, t.in_w):
            raise ValueError(f"images must have shape (N, 1, {t.in_h}, {t.in_w}), got {x.shape}")
        return x

    def rectify(self, images) -> Tensor:
        x = self._as_input(images)
        if self.config.use_tps:
            return self.rectifier(x)
        return resize_by_sampling(x, self.config.tps.out_h, self.config.tps.out_w)

    def encode(self, images) -> Memory:
        return self.head.encode(self.backbone(self.rectify(images)))

    def log_probs(self, images, targets) -> Tensor:
        return self.head.forward_teacher_forced(self.encode(images), targets)

    def loss(self, images, targets) -> Tensor:
        return F.nll_loss(self.log_probs(images, targets), targets, ignore_index=self.vocab.pad)

    def decode(self, images, max_len: int | None = None) -> DecodeResult:
        with no_grad():
            return self.head.greedy_decode(self.encode(images), max_len)

    def recognize(self, images, batch_size: int = 64) -> list[str]:
        images = images.data if isinstance(images, Tensor) else np.asarray(images)
        texts: list[str] = []
        for start in range(0, len(images), batch_size):
            texts.extend(self.decode(images[start : start + batch_size]).texts)
        return texts
