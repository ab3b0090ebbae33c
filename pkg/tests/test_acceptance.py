"""Acceptance criteria, one test each.

Every test prints a single ``PASS``/``FAIL`` line with the measured numbers
and then asserts. The lines are repeated together at the end of the module.
"""

import csv
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import OVERFIT_MAX_STEPS
from oracles import resize_align_corners
from scenetext.autodiff import Tensor
from scenetext.autodiff import functional as F
from scenetext.backbone import BackboneConfig, BackboneConfigError
from scenetext.checkpoint import load_checkpoint, save_checkpoint
from scenetext.data import MixSpec, Vocabulary, load_annotations, make_batch, preprocess, synth_corpus
from scenetext.evaluate import EvalProtocol, filter_dataset
from scenetext.gradcheck import TOLERANCE, run_suite
from scenetext.head import HeadConfig, RecognitionHead
from scenetext.model import TextRecognitionModel, preset_config
from scenetext.tps import TPSGridGenerator, base_fiducials, build_grid, identity_grid, rectify
from scenetext.trainer import TrainConfig, Trainer

FIXTURES = Path(__file__).parent / "fixtures"
LINES: list[str] = []


def verdict(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number} ({title}): {detail}"
    LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module", autouse=True)
def summary(request):
    yield
    reporter = request.config.pluginmanager.getplugin("terminalreporter")
    if reporter is not None and LINES:
        reporter.write_line("")
        reporter.write_line("acceptance summary:")
        for line in LINES:
            reporter.write_line("  " + line)


def test_criterion_1_gradient_suite():
    start = time.perf_counter()
    results = run_suite(configs=20, seed=0)
    seconds = time.perf_counter() - start
    worst = max(results.items(), key=lambda kv: kv[1]["max_rel_error"])
    ok = all(r["passed"] and r["configs"] >= 20 for r in results.values()) and seconds < 300
    verdict(
        1,
        "gradient suite",
        ok,
        f"{len(results)} ops x 20 configs, worst {worst[0]} rel.err {worst[1]['max_rel_error']:.2e} "
        f"(< {TOLERANCE:g}), {seconds:.0f}s (< 300s)",
    )


def test_criterion_2_tps_invariants():
    base = base_fiducials()
    lattice = identity_grid(48, 192)

    def grid(points):
        return build_grid(Tensor(points[None]), base).data[0]

    identity_dev = np.abs(grid(base) - lattice).max()
    shift = np.array([0.13, -0.21])
    translation_dev = np.abs(grid(base + shift) - (lattice + shift)).max()
    rng = np.random.default_rng(0)
    pred = np.tanh(np.arctanh(base) + rng.normal(0, 0.3, size=base.shape))
    interp_dev = np.abs(TPSGridGenerator(base, 48, 192).mapping_matrix(base) @ pred - pred).max()
    img = rng.uniform(size=(64, 256))
    out = rectify(Tensor(img[None, None]), Tensor(grid(base)[None])).data[0, 0]
    resize_dev = np.abs(out - resize_align_corners(img, 48, 192)).max()
    ok = identity_dev <= 1e-10 and translation_dev <= 1e-8 and interp_dev <= 1e-8 and resize_dev <= 1e-6
    verdict(
        2,
        "TPS invariants",
        ok,
        f"identity {identity_dev:.1e} (<=1e-10), translation {translation_dev:.1e} (<=1e-8), "
        f"interpolation {interp_dev:.1e} (<=1e-8), resize {resize_dev:.1e} (<=1e-6)",
    )


def test_criterion_3_shape_contract():
    model = TextRecognitionModel(preset_config("full", seed=0))
    images = np.random.default_rng(1).uniform(size=(1, 1, 64, 256)).astype(np.float32)
    rectified = model.rectify(images)
    features = model.backbone(rectified)
    mem = model.head.encode(features)
    logits_in, _, _ = model.head.decode_step([model.vocab.start], model.head.initial_hidden(1), mem)
    sensitive = RecognitionHead(HeadConfig(channels=1024, hidden=64, attention_dim=32), Vocabulary("sensitive"),
                                np.random.default_rng(2), np.float32)
    logits_cs, _, _ = sensitive.decode_step([sensitive.vocab.start], sensitive.initial_hidden(1), sensitive.encode(features))
    rejected = 0
    bad_schedules = [[1, 1, 2, 2], [2, 2, 2, 2], [1, 2, 2, 1], [2, 2, 2, 4]]
    for strides in bad_schedules:
        try:
            BackboneConfig(stage_strides=strides).validate((48, 192), (3, 12))
        except BackboneConfigError:
            rejected += 1
    ok = (
        tuple(rectified.shape[2:]) == (48, 192)
        and tuple(features.shape[1:]) == (1024, 3, 12)
        and logits_in.shape[1] == 40
        and logits_cs.shape[1] == 66
        and rejected == len(bad_schedules)
    )
    verdict(
        3,
        "shape contract",
        ok,
        f"features {tuple(features.shape[1:])} from {tuple(rectified.shape[2:])}, logits {logits_in.shape[1]}/"
        f"{logits_cs.shape[1]}, validator rejected {rejected}/{len(bad_schedules)} bad schedules",
    )


def test_criterion_4_end_to_end_overfit(overfit_run):
    with open(overfit_run.result.metrics, newline="") as fh:
        rows = list(csv.DictReader(fh))
    initial = float(rows[0]["loss"])
    acc = overfit_run.result.train_acc
    steps = overfit_run.result.steps
    minutes = overfit_run.seconds / 60
    ok = acc == 1.0 and steps <= OVERFIT_MAX_STEPS and abs(initial - math.log(40)) <= 0.3 and minutes <= 15
    verdict(
        4,
        "end-to-end overfit",
        ok,
        f"train acc {acc:.3f} after {steps} steps (<= {OVERFIT_MAX_STEPS}), initial loss {initial:.4f} "
        f"(ln40={math.log(40):.4f} +-0.3), {minutes:.1f} min (<= 15)",
    )


def test_criterion_5_protocol_fidelity():
    samples = load_annotations(FIXTURES / "protocol10.jsonl")
    kept = [s.text for s in filter_dataset(samples, EvalProtocol(True, 3))]
    expected = ["cat", "Hello", "2024", "IIIT5K"]
    verdict(5, "protocol fidelity", kept == expected, f"kept {kept} of {len(samples)} (official IC03/IC13 checks live in test_evaluate)")


def test_criterion_6_mixing_apportionment():
    three = MixSpec.from_mapping({"MJ": 0.4, "OI": 0.2, "ST": 0.4}, 48)
    two = MixSpec.from_mapping({"A": 0.5, "B": 0.5}, 48)
    data = {t: synth_corpus(6, seed=i, source=t) for i, t in enumerate(["MJ", "OI", "ST"])}
    seen = set()
    for seed in range(5):
        batch = make_batch(data, three, Vocabulary(), np.random.default_rng(seed))
        seen.add(tuple(batch.sources.count(t) for t in ("MJ", "OI", "ST")))
    counts3, counts2 = tuple(three.counts().values()), tuple(two.counts().values())
    ok = counts3 == (19, 10, 19) and counts2 == (24, 24) and seen == {(19, 10, 19)}
    verdict(6, "mixing apportionment", ok, f"{counts3} and {counts2}; drawn batches {sorted(seen)}")


def test_criterion_7_determinism_and_persistence(tmp_path):
    def run(name):
        cfg = TrainConfig(lr=1e-3, batch_size=4, max_steps=6, log_every=2, eval_slice=4, timing=False,
                          checkpoint_dir=str(tmp_path / name), datasets={"synth": "synth:8:3"})
        trainer = Trainer(cfg)
        return trainer, trainer.train()

    (trained, a), (_, b) = run("a"), run("b")
    logs_equal = a.metrics.read_bytes() == b.metrics.read_bytes()
    model, opt, header = load_checkpoint(a.checkpoint)
    reference = trained.model
    images = np.stack([preprocess(s) for s in synth_corpus(10, seed=2)])
    p, q = model.decode(images), reference.decode(images)
    parity = p.tokens == q.tokens and p.attention.tobytes() == q.attention.tobytes()
    again = save_checkpoint(model, tmp_path / "again.trck", opt, step=header["step"], extra=header.get("extra"))
    bitwise = again.read_bytes() == a.checkpoint.read_bytes()
    verdict(
        7,
        "determinism & persistence",
        logs_equal and parity and bitwise,
        f"metrics logs identical={logs_equal}, 10-sample predict parity={parity}, checkpoint byte round-trip={bitwise}",
    )


def test_criterion_8_decoder_equivalence():
    model = TextRecognitionModel(preset_config("desk", dtype="float64", seed=3))
    images = np.random.default_rng(4).uniform(size=(3, 1, 64, 256))
    targets = model.vocab.encode_batch(["hello", "a1", "scene"])
    mem = model.encode(images)
    head = model.head
    teacher = head.forward_teacher_forced(mem, targets).data
    hidden = head.initial_hidden(3)
    prev = np.full(3, model.vocab.start)
    worst_lp, worst_sum = 0.0, 0.0
    for t in range(targets.shape[1]):
        logits, hidden, weights = head.decode_step(prev, hidden, mem)
        worst_lp = max(worst_lp, np.abs(F.log_softmax(logits).data - teacher[:, t]).max())
        worst_sum = max(worst_sum, np.abs(weights.data.sum(axis=1) - 1.0).max())
        prev = targets[:, t]
    greedy = head.greedy_decode(mem, 8).attention
    worst_sum = max(worst_sum, np.abs(greedy.sum(-1) - 1.0).max())
    ok = worst_lp <= 1e-6 and worst_sum <= 1e-9
    verdict(8, "decoder equivalence", ok, f"teacher-forced vs stepwise {worst_lp:.1e} (<=1e-6), attention sum dev {worst_sum:.1e} (<=1e-9)")
