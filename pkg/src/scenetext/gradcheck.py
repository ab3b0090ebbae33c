"""Central finite-difference checks for every differentiable operation.

Each check draws a random configuration, reduces the op output to a scalar
with a fixed random weighting, and compares analytic gradients of all
inputs against ``(f(x + h) - f(x - h)) / 2h`` in double precision.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import functional as F
from .autodiff.tensor import Tensor, backward, branch_signature
from .data.vocab import Vocabulary
from .head import HeadConfig, RecognitionHead
from .model import TextRecognitionModel, preset_config
from .tps import TPSGridGenerator, base_fiducials

STEP = 1e-4
TOLERANCE = 1e-3


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    inputs: list[Tensor],
    rng: np.random.Generator,
    h: float = STEP,
    max_coords: int | None = None,
) -> float:
    """Relative error between tape and finite-difference gradients of ``loss_fn``.

    With ``max_coords`` only that many randomly chosen coordinates (across all
    inputs) are perturbed. A coordinate whose +-h perturbation flips a
    piecewise branch (ReLU sign, bilinear cell, border clamp, pooling argmax)
    sits on a kink where no derivative exists; it is replaced by another draw.
    """
    with branch_signature() as sig:
        loss = loss_fn()
    base = sig.digest()
    backward(loss)
    grads = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    sizes = [t.size for t in inputs]
    total = sum(sizes)
    wanted = total if max_coords is None else min(max_coords, total)
    if wanted == total:
        queue = [(i, j) for i, n in enumerate(sizes) for j in range(n)]
    else:
        queue = []
    analytic, numeric = [], []
    attempts = 0
    while len(analytic) < wanted and attempts < 20 * wanted:
        attempts += 1
        if queue:
            i, j = queue.pop(0)
        else:
            i = int(rng.integers(0, len(inputs)))
            j = int(rng.integers(0, sizes[i]))
        flat = inputs[i].data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        with branch_signature() as sig_up:
            up = float(loss_fn().data)
        flat[j] = orig - h
        with branch_signature() as sig_down:
            down = float(loss_fn().data)
        flat[j] = orig
        if sig_up.digest() != base or sig_down.digest() != base:
            continue
        analytic.append(grads[i].reshape(-1)[j])
        numeric.append((up - down) / (2 * h))
    if not analytic:
        raise RuntimeError("every probed coordinate straddles a kink; no valid finite differences")
    return relative_error(np.array(analytic), np.array(numeric))


def _param(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def _weighted(out: Tensor, weights: np.ndarray) -> Tensor:
    return (out * Tensor(weights)).sum()


def _conv_case(rng, grouped: bool):
    groups = int(rng.choice([2, 4])) if grouped else 1
    cin = groups * int(rng.integers(1, 3))
    cout = groups * int(rng.integers(1, 3))
    k = int(rng.choice([1, 3]))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    x = _param(rng, int(rng.integers(1, 3)), cin, int(rng.integers(4, 7)), int(rng.integers(4, 7)))
    w = _param(rng, cout, cin // groups, k, k)
    b = _param(rng, cout)
    out_shape = F.conv2d(x, w, b, stride, pad, groups).shape
    r = rng.normal(size=out_shape)
    return (lambda: _weighted(F.conv2d(x, w, b, stride, pad, groups), r)), [x, w, b]


def _case_conv2d(rng):
    return _conv_case(rng, grouped=False)


def _case_conv2d_grouped(rng):
    return _conv_case(rng, grouped=True)


def _case_gru_cell(rng):
    n, din, dh = int(rng.integers(1, 4)), int(rng.integers(2, 6)), int(rng.integers(2, 6))
    x, h = _param(rng, n, din), _param(rng, n, dh)
    w_ih, w_hh = _param(rng, 3 * dh, din, scale=0.5), _param(rng, 3 * dh, dh, scale=0.5)
    b_ih, b_hh = _param(rng, 3 * dh, scale=0.5), _param(rng, 3 * dh, scale=0.5)
    r = rng.normal(size=(n, dh))
    inputs = [x, h, w_ih, w_hh, b_ih, b_hh]
    return (lambda: _weighted(F.gru_cell(*inputs), r)), inputs


def smooth_images(rng, n: int, h: int, w: int, max_cycles: float = 0.5) -> np.ndarray:
    """Low-frequency images in [0, 1]; their bilinear interpolant has tiny slope jumps."""
    ys, xs = np.mgrid[0:h, 0:w]
    out = np.full((n, 1, h, w), 0.5)
    for i in range(n):
        for _ in range(3):
            fx, fy = rng.uniform(0.1, max_cycles), rng.uniform(0.05, max_cycles / 2)
            phase = rng.uniform(0, 2 * np.pi)
            out[i, 0] += 0.15 * np.sin(2 * np.pi * (fx * xs / w + fy * ys / h) + phase)
    return out


def _off_pixel_lines(rng, size, extent: int, margin: float = 1e-2) -> np.ndarray:
    """Normalized coordinates whose pixel position is >= ``margin`` from any integer.

    Bilinear interpolation is not differentiable on pixel lines, where a central
    difference measures a secant instead of a derivative.
    """
    pix = rng.uniform(0.05, extent - 1.05, size=size)
    frac = pix - np.floor(pix)
    pix = np.floor(pix) + np.clip(frac, margin, 1 - margin)
    return pix / (extent - 1) * 2 - 1


def _case_bilinear_sample(rng):
    n, c = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    h, w = int(rng.integers(3, 7)), int(rng.integers(3, 7))
    img = _param(rng, n, c, h, w)
    grid = np.stack([_off_pixel_lines(rng, (n, 3, 4), w), _off_pixel_lines(rng, (n, 3, 4), h)], axis=-1)
    grid = Tensor(grid, requires_grad=True)
    r = rng.normal(size=(n, c, 3, 4))
    return (lambda: _weighted(F.bilinear_sample(img, grid), r)), [img, grid]


def _case_softmax(rng):
    x = _param(rng, int(rng.integers(1, 4)), int(rng.integers(2, 7)), scale=2.0)
    axis = int(rng.integers(0, 2))
    r = rng.normal(size=x.shape)
    return (lambda: _weighted(F.softmax(x, axis), r)), [x]


def _case_log_softmax(rng):
    x = _param(rng, int(rng.integers(1, 4)), int(rng.integers(2, 7)), scale=2.0)
    axis = int(rng.integers(0, 2))
    r = rng.normal(size=x.shape)
    return (lambda: _weighted(F.log_softmax(x, axis), r)), [x]


def _case_nll_loss(rng):
    n, t, c = int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(3, 8))
    logits = _param(rng, n, t, c)
    targets = rng.integers(0, c, size=(n, t))
    targets[rng.random((n, t)) < 0.3] = c - 1
    targets[0, 0] = 0
    return (lambda: F.nll_loss(F.log_softmax(logits, -1), targets, ignore_index=c - 1)), [logits]


def _case_group_norm(rng):
    groups = int(rng.choice([1, 2]))
    c = groups * int(rng.integers(1, 4))
    x = _param(rng, int(rng.integers(1, 3)), c, 3, 4)
    gamma, beta = _param(rng, c), _param(rng, c)
    r = rng.normal(size=x.shape)
    return (lambda: _weighted(F.group_norm(x, groups, gamma, beta), r)), [x, gamma, beta]


def _case_linear(rng):
    x = _param(rng, int(rng.integers(1, 4)), int(rng.integers(1, 5)))
    w, b = _param(rng, int(rng.integers(1, 5)), x.shape[1]), None
    b = _param(rng, w.shape[0])
    r = rng.normal(size=(x.shape[0], w.shape[0]))
    return (lambda: _weighted(F.linear(x, w, b), r)), [x, w, b]


def _case_max_pool2d(rng):
    x = _param(rng, 1, int(rng.integers(1, 3)), int(rng.integers(4, 7)), int(rng.integers(4, 7)))
    r = rng.normal(size=F.max_pool2d(x).shape)
    return (lambda: _weighted(F.max_pool2d(x), r)), [x]


def _case_tps_grid(rng):
    k = int(rng.choice([6, 10, 20]))
    gen = TPSGridGenerator(base_fiducials(k), int(rng.integers(2, 6)), int(rng.integers(2, 8)))
    pred = Tensor(gen.base[None] + rng.normal(0, 0.1, size=(2, k, 2)), requires_grad=True)
    r = rng.normal(size=(2, gen.out_h, gen.out_w, 2))
    return (lambda: _weighted(gen(pred), r)), [pred]


def _case_tps_rectify(rng):
    k = 10
    h, w = 12, 16
    gen = TPSGridGenerator(base_fiducials(k), 6, 8)
    # redraw until no h-perturbation of a fiducial can move a sample across a pixel line
    reach = STEP * np.abs(gen.sampling_matrix).max() * 2 * max(h, w)
    while True:
        pred = gen.base[None] * 0.8 + rng.normal(0, 0.05, size=(1, k, 2))
        grid = gen.sampling_matrix @ pred[0]
        pix = np.concatenate([(grid[:, 0] + 1) * (w - 1) / 2, (grid[:, 1] + 1) * (h - 1) / 2])
        if np.min(np.abs(pix - np.round(pix))) > reach:
            break
    pred = Tensor(pred, requires_grad=True)
    img = Tensor(rng.random((1, 1, h, w)))
    r = rng.normal(size=(1, 1, 6, 8))
    return (lambda: _weighted(F.bilinear_sample(img, gen(pred)), r)), [pred]


def _case_attention(rng):
    cfg = HeadConfig(channels=4, hidden=5, attention_dim=3, embed_dim=2, encoder_layers=1)
    head = RecognitionHead(cfg, Vocabulary(), rng, dtype=np.float64)
    feats = _param(rng, 2, 4, 3, 12)
    hidden = _param(rng, 2, 5)
    r = rng.normal(size=(2, 4))
    rw = rng.normal(size=(2, 36))

    def loss():
        context, weights = head.attend(hidden, head.encode(feats))
        return _weighted(context, r) + _weighted(weights, rw)

    return loss, [feats, hidden] + head.parameters()


def _case_decoder(rng):
    cfg = HeadConfig(channels=4, hidden=6, attention_dim=3, embed_dim=3, encoder_layers=1)
    vocab = Vocabulary()
    head = RecognitionHead(cfg, vocab, rng, dtype=np.float64)
    head.classifier.weight.data *= 100.0
    feats = _param(rng, 2, 4, 3, 12)
    targets = vocab.encode_batch(["ab1", "z"])
    return (lambda: F.nll_loss(head.forward_teacher_forced(head.encode(feats), targets), targets, vocab.pad)), [
        feats
    ] + head.parameters()


_MODEL_CACHE: dict = {}


def _case_model(rng):
    """Desk preset end to end on a 2-sample batch, parameters randomized away from init."""
    if "model" not in _MODEL_CACHE:
        _MODEL_CACHE["model"] = TextRecognitionModel(preset_config("desk", dtype="float64", seed=1))
    model = _MODEL_CACHE["model"]
    for name, p in model.named_parameters():
        if name.endswith("localization.fc2.weight"):
            p.data[...] = rng.normal(0, 0.02, size=p.shape)
        elif name.endswith("localization.fc2.bias"):
            # keep the grid off the border clamp
            p.data[...] = np.arctanh(model.rectifier.base.reshape(-1) * rng.uniform(0.8, 0.9))
        elif "norm" in name and name.endswith("weight"):
            p.data[...] = 1.0 + rng.normal(0, 0.1, size=p.shape)
        elif name.endswith("classifier.weight"):
            p.data[...] = rng.normal(0, 0.1, size=p.shape)
    images = smooth_images(rng, 2, 64, 256)
    targets = model.vocab.encode_batch(["c4t", "dog"])
    return (lambda: model.loss(images, targets)), model.parameters()


@dataclass
class OpCheck:
    build: Callable
    max_coords: int | None = None


CHECKS: dict[str, OpCheck] = {
    "conv2d": OpCheck(_case_conv2d),
    "conv2d_grouped": OpCheck(_case_conv2d_grouped),
    "gru_cell": OpCheck(_case_gru_cell),
    "bilinear_sample": OpCheck(_case_bilinear_sample),
    "softmax": OpCheck(_case_softmax),
    "log_softmax": OpCheck(_case_log_softmax),
    "nll_loss": OpCheck(_case_nll_loss),
    "group_norm": OpCheck(_case_group_norm),
    "linear": OpCheck(_case_linear),
    "max_pool2d": OpCheck(_case_max_pool2d),
    "tps_grid": OpCheck(_case_tps_grid),
    "tps_rectify": OpCheck(_case_tps_rectify),
    "attention": OpCheck(_case_attention, max_coords=200),
    "decoder": OpCheck(_case_decoder, max_coords=200),
    "model": OpCheck(_case_model, max_coords=40),
}


def check_op(name: str, configs: int = 20, seed: int = 0) -> list[float]:
    """Relative errors of ``configs`` random configurations of op ``name``."""
    if name not in CHECKS:
        raise KeyError(f"unknown op {name!r}; choose from {sorted(CHECKS)}")
    spec = CHECKS[name]
    errors = []
    for i in range(configs):
        rng = np.random.default_rng([seed, i, sum(map(ord, name))])
        loss_fn, inputs = spec.build(rng)
        errors.append(check_gradients(loss_fn, inputs, rng, max_coords=spec.max_coords))
    return errors


def run_suite(ops: list[str] | None = None, configs: int = 20, seed: int = 0) -> dict[str, dict]:
    results = {}
    for name in ops or list(CHECKS):
        start = time.perf_counter()
        errors = check_op(name, configs, seed)
        results[name] = {
            "max_rel_error": max(errors),
            "configs": len(errors),
            "seconds": time.perf_counter() - start,
            "passed": max(errors) < TOLERANCE,
        }
    return results
