"""Thin-plate-spline rectification: localization net, grid generator, sampler."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg

from .autodiff import functional as F
from .autodiff.nn import Conv2d, GroupNorm, Linear, Module, parameter
from .autodiff.tensor import Tensor, matmul


@dataclass
class TPSConfig:
    num_fiducials: int = 20
    in_h: int = 64
    in_w: int = 256
    out_h: int = 48
    out_w: int = 192
    loc_pool: tuple[int, int] = (2, 4)
    loc_channels: tuple[int, ...] = (16, 32, 64, 128)
    loc_hidden: int = 256
    norm_groups: int = 8
    # base points sit just inside [-1, 1] so tanh can reproduce them exactly
    margin: float = 0.999

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TPSConfig:
        d = dict(d)
        d["loc_pool"] = tuple(d["loc_pool"])
        d["loc_channels"] = tuple(d["loc_channels"])
        return cls(**d)


def base_fiducials(num_fiducials: int = 20, margin: float = 0.999) -> np.ndarray:
    """Two rows of evenly spaced control points along the top and bottom edges, shape ``(K, 2)``."""
    if num_fiducials < 4 or num_fiducials % 2:
        raise ValueError(f"number of fiducials must be even and >= 4, got {num_fiducials}")
    half = num_fiducials // 2
    xs = np.linspace(-1.0, 1.0, half) * margin
    top = np.stack([xs, np.full(half, -margin)], axis=1)
    bottom = np.stack([xs, np.full(half, margin)], axis=1)
    return np.concatenate([top, bottom], axis=0)


def identity_grid(out_h: int, out_w: int) -> np.ndarray:
    """Uniform lattice over [-1, 1]^2, shape ``(out_h, out_w, 2)`` with (x, y) order."""
    ys, xs = np.meshgrid(np.linspace(-1.0, 1.0, out_h), np.linspace(-1.0, 1.0, out_w), indexing="ij")
    return np.stack([xs, ys], axis=-1)


def _radial_kernel(points: np.ndarray, centres: np.ndarray) -> np.ndarray:
    d2 = ((points[:, None, :] - centres[None, :, :]) ** 2).sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = d2 * np.log(d2)
    u[d2 == 0] = 0.0
    return u


class TPSGridGenerator:
    """Maps predicted fiducials to a dense sampling grid.

    The ``(K+3) x (K+3)`` system depends only on the base points, so it is
    LU-factorized once here; after that the grid is a fixed linear function of
    the predicted points.
    """

    def __init__(self, base: np.ndarray, out_h: int, out_w: int):
        base = np.asarray(base, dtype=np.float64)
        k = len(base)
        self.base = base
        self.out_h = out_h
        self.out_w = out_w
        system = np.zeros((k + 3, k + 3))
        system[:k, :k] = _radial_kernel(base, base)
        system[:k, k] = 1.0
        system[:k, k + 1 :] = base
        system[k, :k] = 1.0
        system[k + 1 :, :k] = base.T
        if np.linalg.cond(system) > 1e12:
            raise np.linalg.LinAlgError("TPS system is singular: base fiducials are degenerate")
        self._lu = scipy.linalg.lu_factor(system)
        # only the first K right-hand-side columns are ever nonzero
        rhs = np.zeros((k + 3, k))
        rhs[:k] = np.eye(k)
        self._coef_map = scipy.linalg.lu_solve(self._lu, rhs)  # (K+3, K)
        lattice = identity_grid(out_h, out_w).reshape(-1, 2)
        self.sampling_matrix = self.mapping_matrix(lattice)  # (H*W, K)

    def mapping_matrix(self, points: np.ndarray) -> np.ndarray:
        """Matrix ``A`` such that the warp of ``points`` is ``A @ predicted``."""
        points = np.asarray(points, dtype=np.float64)
        lifted = np.concatenate(
            [_radial_kernel(points, self.base), np.ones((len(points), 1)), points], axis=1
        )
        return lifted @ self._coef_map

    def __call__(self, predicted: Tensor) -> Tensor:
        if predicted.ndim != 3 or predicted.shape[1:] != self.base.shape:
            raise ValueError(f"predicted fiducials must be (N, {len(self.base)}, 2), got {predicted.shape}")
        mat = Tensor(self.sampling_matrix.astype(predicted.dtype))
        grid = matmul(mat, predicted)
        return grid.reshape(predicted.shape[0], self.out_h, self.out_w, 2)


def build_grid(predicted: Tensor, base: np.ndarray, out_h: int = 48, out_w: int = 192) -> Tensor:
    if predicted.shape[-2] != len(base):
        raise ValueError(f"predicted has {predicted.shape[-2]} fiducials, base has {len(base)}")
    return TPSGridGenerator(base, out_h, out_w)(predicted)


def rectify(image: Tensor, grid: Tensor) -> Tensor:
    return F.bilinear_sample(image, grid)


class LocalizationNetwork(Module):
    """Predicts ``K`` fiducial points in (-1, 1)^2 from a downsampled copy of the image.

    The final layer starts with zero weights and ``atanh(base)`` bias, so the
    untrained network outputs the base configuration for every image.
    """

    def __init__(self, config: TPSConfig, base: np.ndarray, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.config = config
        self.pool = config.loc_pool
        self.blocks: list[tuple[Conv2d, GroupNorm]] = []
        in_ch = 1
        for i, ch in enumerate(config.loc_channels):
            conv = Conv2d(in_ch, ch, 3, stride=2, padding=1, bias=False, rng=rng, dtype=dtype)
            norm = GroupNorm(min(config.norm_groups, ch), ch, dtype=dtype)
            setattr(self, f"conv{i}", conv)
            setattr(self, f"norm{i}", norm)
            self.blocks.append((conv, norm))
            in_ch = ch
        self.fc1 = Linear(in_ch, config.loc_hidden, rng=rng, dtype=dtype)
        self.fc2 = Linear(config.loc_hidden, 2 * len(base), rng=rng, dtype=dtype)
        self.fc2.weight = parameter(np.zeros_like(self.fc2.weight.data), dtype)
        self.fc2.bias = parameter(np.arctanh(base.reshape(-1)), dtype)

    def forward(self, image: Tensor) -> Tensor:
        cfg = self.config
        if image.shape[1:] != (1, cfg.in_h, cfg.in_w):
            raise ValueError(f"localization expects (N, 1, {cfg.in_h}, {cfg.in_w}) input, got {image.shape}")
        x = F.avg_pool2d(image, *self.pool)
        for conv, norm in self.blocks:
            x = norm(conv(x)).relu()
        x = x.mean(axis=(2, 3))
        x = self.fc1(x).relu()
        return self.fc2(x).tanh().reshape(image.shape[0], -1, 2)


class TPSRectifier(Module):
    """Localize -> build grid -> bilinear sample; output is ``(N, 1, out_h, out_w)``."""

    def __init__(self, config: TPSConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.config = config
        self.base = base_fiducials(config.num_fiducials, config.margin)
        self.localization = LocalizationNetwork(config, self.base, rng, dtype)
        self.generator = TPSGridGenerator(self.base, config.out_h, config.out_w)

    def fiducials(self, image: Tensor) -> Tensor:
        return self.localization(image)

    def forward(self, image: Tensor) -> Tensor:
        grid = self.generator(self.fiducials(image))
        return rectify(image, grid)


def resize_by_sampling(image: Tensor, out_h: int, out_w: int) -> Tensor:
    """Plain bilinear resize expressed through the sampler (identity warp)."""
    grid = np.broadcast_to(identity_grid(out_h, out_w), (image.shape[0], out_h, out_w, 2))
    return F.bilinear_sample(image, Tensor(grid.astype(image.dtype)))
