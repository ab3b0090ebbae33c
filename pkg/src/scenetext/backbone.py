"""ResNeXt-style grouped-convolution feature extractor."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import functional as F
from .autodiff.nn import Conv2d, GroupNorm, Module
from .autodiff.tensor import Tensor


class BackboneConfigError(ValueError):
    pass


@dataclass
class BackboneConfig:
    """Stage layout of the extractor.

    ``stage_*`` lists describe the complete network; with
    ``include_last_stage=False`` the final entry is dropped.
    """

    stage_blocks: list[int] = field(default_factory=lambda: [1, 1, 1, 1])
    stage_channels: list[int] = field(default_factory=lambda: [32, 64, 96, 128])
    stage_strides: list[int] = field(default_factory=lambda: [1, 2, 2, 2])
    cardinality: int = 4
    bottleneck_ratio: float = 0.5
    include_last_stage: bool = True
    in_channels: int = 1
    stem_channels: int = 16
    stem_kernel: int = 7
    stem_stride: int = 2
    stem_pool: bool = False
    norm_groups: int = 8
    zero_init_residual: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> BackboneConfig:
        return cls(**d)

    @property
    def num_stages(self) -> int:
        return len(self.stage_blocks) - (0 if self.include_last_stage else 1)

    def used(self) -> list[tuple[int, int, int]]:
        """(blocks, channels, stride) for every stage actually built."""
        return list(
            zip(
                self.stage_blocks[: self.num_stages],
                self.stage_channels[: self.num_stages],
                self.stage_strides[: self.num_stages],
            )
        )

    def width(self, channels: int) -> int:
        return int(round(channels * self.bottleneck_ratio))

    @property
    def out_channels(self) -> int:
        return self.stage_channels[self.num_stages - 1]

    @property
    def total_stride(self) -> int:
        s = self.stem_stride * (2 if self.stem_pool else 1)
        for _, _, stride in self.used():
            s *= stride
        return s

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        pad = self.stem_kernel // 2
        h = F.conv_output_size(h, self.stem_kernel, self.stem_stride, pad)
        w = F.conv_output_size(w, self.stem_kernel, self.stem_stride, pad)
        if self.stem_pool:
            h, w = F.conv_output_size(h, 3, 2, 1), F.conv_output_size(w, 3, 2, 1)
        for _, _, stride in self.used():
            h, w = F.conv_output_size(h, 3, stride, 1), F.conv_output_size(w, 3, stride, 1)
        return h, w

    def validate(self, input_hw: tuple[int, int] = (48, 192), output_hw: tuple[int, int] | None = (3, 12)) -> None:
        n = len(self.stage_blocks)
        if not (len(self.stage_channels) == len(self.stage_strides) == n):
            raise BackboneConfigError("stage_blocks, stage_channels and stage_strides must have equal length")
        if self.num_stages < 1:
            raise BackboneConfigError("at least one stage must be used")
        if any(b < 1 for b in self.stage_blocks):
            raise BackboneConfigError(f"every stage needs >= 1 block, got {self.stage_blocks}")
        if self.stem_stride < 1 or any(s < 1 for s in self.stage_strides):
            raise BackboneConfigError("strides must be >= 1 (stride may never decrease the receptive field)")
        for ch in self.stage_channels[: self.num_stages]:
            if ch % self.cardinality:
                raise BackboneConfigError(f"stage channels {ch} not divisible by cardinality {self.cardinality}")
            width = self.width(ch)
            if width < self.cardinality or width % self.cardinality:
                raise BackboneConfigError(
                    f"bottleneck width {width} not divisible by cardinality {self.cardinality}"
                )
            for c in (ch, width):
                if c % min(self.norm_groups, c):
                    raise BackboneConfigError(f"{c} channels not divisible by {self.norm_groups} norm groups")
        h, w = input_hw
        if h % self.total_stride or w % self.total_stride:
            raise BackboneConfigError(
                f"input {h}x{w} is not divisible by the total stride {self.total_stride}"
            )
        got = self.output_size(h, w)
        if output_hw is not None and got != tuple(output_hw):
            raise BackboneConfigError(
                f"stride schedule maps {h}x{w} to {got[0]}x{got[1]}, expected {output_hw[0]}x{output_hw[1]}"
            )


def desk_backbone() -> BackboneConfig:
    return BackboneConfig()


def full_backbone() -> BackboneConfig:
    """ResNeXt-101 (32x8d) layout with the final stage removed: 1024 channels at stride 16."""
    return BackboneConfig(
        stage_blocks=[3, 4, 23, 3],
        stage_channels=[256, 512, 1024, 2048],
        stage_strides=[1, 2, 2, 2],
        cardinality=32,
        bottleneck_ratio=1.0,
        include_last_stage=False,
        stem_channels=64,
        stem_kernel=7,
        stem_stride=2,
        stem_pool=True,
        norm_groups=32,
    )


class Bottleneck(Module):
    """1x1 reduce -> 3x3 grouped conv -> 1x1 expand, plus (projected) residual."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        width: int,
        stride: int,
        cardinality: int,
        norm_groups: int,
        zero_init_residual: bool,
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        super().__init__()
        self.conv1 = Conv2d(in_channels, width, 1, bias=False, rng=rng, dtype=dtype)
        self.norm1 = GroupNorm(min(norm_groups, width), width, dtype=dtype)
        self.conv2 = Conv2d(
            width, width, 3, stride=stride, padding=1, groups=cardinality, bias=False, rng=rng, dtype=dtype
        )
        self.norm2 = GroupNorm(min(norm_groups, width), width, dtype=dtype)
        self.conv3 = Conv2d(width, out_channels, 1, bias=False, rng=rng, dtype=dtype)
        self.norm3 = GroupNorm(
            min(norm_groups, out_channels), out_channels, zero_init=zero_init_residual, dtype=dtype
        )
        self.project = stride != 1 or in_channels != out_channels
        if self.project:
            self.shortcut_conv = Conv2d(in_channels, out_channels, 1, stride=stride, bias=False, rng=rng, dtype=dtype)
            self.shortcut_norm = GroupNorm(min(norm_groups, out_channels), out_channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        out = self.norm1(self.conv1(x)).relu()
        out = self.norm2(self.conv2(out)).relu()
        out = self.norm3(self.conv3(out))
        shortcut = self.shortcut_norm(self.shortcut_conv(x)) if self.project else x
        if shortcut.shape != out.shape:
            raise ValueError(f"residual shape {shortcut.shape} does not match branch {out.shape}")
        return (out + shortcut).relu()


class Backbone(Module):
    def __init__(self, config: BackboneConfig, rng: np.random.Generator, dtype=np.float32, input_hw=(48, 192)):
        super().__init__()
        config.validate(input_hw, output_hw=None)
        self.config = config
        self.input_hw = tuple(input_hw)
        c = config
        self.stem_conv = Conv2d(
            c.in_channels, c.stem_channels, c.stem_kernel, stride=c.stem_stride,
            padding=c.stem_kernel // 2, bias=False, rng=rng, dtype=dtype,
        )
        self.stem_norm = GroupNorm(min(c.norm_groups, c.stem_channels), c.stem_channels, dtype=dtype)
        self.blocks: list[Bottleneck] = []
        in_ch = c.stem_channels
        for si, (n_blocks, ch, stride) in enumerate(c.used()):
            for bi in range(n_blocks):
                block = Bottleneck(
                    in_ch, ch, c.width(ch), stride if bi == 0 else 1, c.cardinality,
                    c.norm_groups, c.zero_init_residual, rng, dtype,
                )
                setattr(self, f"stage{si + 1}_block{bi}", block)
                self.blocks.append(block)
                in_ch = ch

    @property
    def out_channels(self) -> int:
        return self.config.out_channels

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.config.in_channels or x.shape[2:] != self.input_hw:
            raise ValueError(
                f"backbone expects (N, {self.config.in_channels}, {self.input_hw[0]}, {self.input_hw[1]}), got {x.shape}"
            )
        x = self.stem_norm(self.stem_conv(x)).relu()
        if self.config.stem_pool:
            x = F.max_pool2d(x, 3, 2, 1)
        for block in self.blocks:
            x = block(x)
        return x
