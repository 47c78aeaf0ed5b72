"""Shared fixtures: datasets and trained models used across the suite.

Training runs are expensive, so trained weights are cached on disk under
tests/_artifacts keyed by their exact configuration; training is bitwise
deterministic and the weights file round-trip is exact, so a cache hit
reproduces precisely what a fresh run would produce.  Delete the directory
to retrain everything from scratch.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from taustream import io, sim, trainer  # noqa: E402

ARTIFACTS = Path(__file__).parent / "_artifacts"
DATA = Path(__file__).parent / "data"

# acceptance-scale training configurations
MAIN_DATASET_SEED = 2001
NOISY_DATASET_SEED = 2002
MAIN_EPOCHS = 35
REDUCED_EPOCHS = 16
REDUCED_SAMPLES = 20_000


def _train_cached(tag: str, cfg: trainer.TrainConfig, dataset: sim.Dataset):
    ARTIFACTS.mkdir(exist_ok=True)
    path = ARTIFACTS / f"{tag}.weights.txt"
    hist_path = ARTIFACTS / f"{tag}.history.csv"
    if path.exists():
        weights = io.read_weights(path)
        history = None
        if hist_path.exists():
            rows = io.read_rows_csv(hist_path)
            history = trainer.TrainHistory(
                train_loss=[float(r["train_loss"]) for r in rows],
                eval_loss=[float(r["eval_loss"]) for r in rows],
                eval_mape=[float(r["eval_mape"]) for r in rows],
                learning_rate=[float(r["learning_rate"]) for r in rows],
                best_epoch=int(rows[0]["best_epoch"]),
            )
        return weights, history
    weights, history = trainer.train(cfg, dataset)
    io.write_weights(weights, path)
    io.write_rows_csv(
        [
            {
                "epoch": e,
                "learning_rate": history.learning_rate[e],
                "train_loss": history.train_loss[e],
                "eval_loss": history.eval_loss[e],
                "eval_mape": history.eval_mape[e],
                "best_epoch": history.best_epoch,
            }
            for e in range(history.n_epochs)
        ],
        hist_path,
    )
    return weights, history


@pytest.fixture(scope="session")
def main_dataset():
    cfg = sim.DatasetConfig(n_samples=50_000, photons_per_sample=256)
    return sim.generate_dataset(cfg, master_seed=MAIN_DATASET_SEED)


@pytest.fixture(scope="session")
def noisy_dataset():
    cfg = sim.DatasetConfig(n_samples=50_000, photons_per_sample=256,
                            background_range=(0.0, 0.10))
    return sim.generate_dataset(cfg, master_seed=NOISY_DATASET_SEED)


@pytest.fixture(scope="session")
def gru16_trained(main_dataset):
    """The headline desk-scale model: GRU-16 on 50k x 256, full epochs."""
    cfg = trainer.TrainConfig(variant="gru", hidden_size=16,
                              epochs=MAIN_EPOCHS, seed=7)
    return _train_cached("gru16_main", cfg, main_dataset)


@pytest.fixture(scope="session")
def noise_gru16_trained(noisy_dataset):
    """Noise-robust model: trained with 0-10% random background."""
    cfg = trainer.TrainConfig(variant="gru", hidden_size=16,
                              epochs=MAIN_EPOCHS, seed=8)
    return _train_cached("gru16_noise", cfg, noisy_dataset)


@pytest.fixture(scope="session")
def comparison_models(main_dataset):
    """Variant/size comparison set trained under one reduced budget."""
    subset = main_dataset.subset(np.arange(REDUCED_SAMPLES))
    out = {}
    for variant, hidden in [("simple", 16), ("gru", 8), ("gru", 16),
                            ("gru", 32), ("lstm", 16)]:
        cfg = trainer.TrainConfig(variant=variant, hidden_size=hidden,
                                  epochs=REDUCED_EPOCHS, batch_size=64, seed=11)
        tag = f"{variant}{hidden}_reduced"
        out[f"{variant}-{hidden}"] = _train_cached(tag, cfg, subset)[0]
    return out


# ---------------------------------------------------------------------------
# acceptance reporting: one pass/fail line per criterion at session end

ACCEPTANCE_RESULTS: dict[int, dict] = {}


def record_criterion(number: int, description: str, passed: bool, detail: str = ""):
    ACCEPTANCE_RESULTS[number] = {
        "description": description,
        "passed": bool(passed),
        "detail": detail,
    }


def check(number: int, description: str, passed: bool, detail: str = ""):
    record_criterion(number, description, passed, detail)
    assert passed, f"criterion {number} ({description}): {detail}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        r = ACCEPTANCE_RESULTS[num]
        status = "PASS" if r["passed"] else "FAIL"
        detail = f"  [{r['detail']}]" if r["detail"] else ""
        terminalreporter.write_line(
            f"criterion {num:2d}: {status} - {r['description']}{detail}")
