import sys
import time
from dataclasses import dataclass
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from scenetext.data import synth_corpus  # noqa: E402
from scenetext.trainer import TrainConfig, Trainer, TrainResult  # noqa: E402

# Settings of the end-to-end overfit run shared by several test modules.
OVERFIT_SEED = 7
OVERFIT_N = 32
OVERFIT_LR = 1e-3
OVERFIT_BATCH = 16
OVERFIT_MAX_STEPS = 2000


@dataclass
class OverfitRun:
    corpus: list
    trainer: Trainer
    result: TrainResult
    seconds: float
    directory: Path


@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory) -> OverfitRun:
    directory = tmp_path_factory.mktemp("overfit")
    corpus = synth_corpus(OVERFIT_N, seed=OVERFIT_SEED)
    config = TrainConfig(
        lr=OVERFIT_LR,
        batch_size=OVERFIT_BATCH,
        max_steps=OVERFIT_MAX_STEPS,
        log_every=50,
        eval_slice=OVERFIT_N,
        target_accuracy=1.0,
        checkpoint_dir=str(directory),
        mix={"synth": 1.0},
        datasets={"synth": f"synth:{OVERFIT_N}:{OVERFIT_SEED}"},
    )
    start = time.perf_counter()
    trainer = Trainer(config, {"synth": corpus})
    result = trainer.train()
    return OverfitRun(corpus, trainer, result, time.perf_counter() - start, directory)
