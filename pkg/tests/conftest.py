import os
from pathlib import Path

import numpy as np
import pytest
import torch

from conceptgan.config import build_config, read_config
from conceptgan.data import CIFAR10_SUBDIR, CIFAR100_SUBDIR, encode_records
from conceptgan.model import ModelConfig, build_model
from conceptgan.train import datasets_for, run_seed

ROOT = Path(__file__).resolve().parents[1]
TOY_CFG = ROOT / "configs" / "toy.cfg"

ACCEPTANCE_RESULTS = []


def record(criterion, passed, detail=""):
    ACCEPTANCE_RESULTS.append((criterion, bool(passed), detail))
    print(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


def toy_config(tmp, **overrides):
    values = read_config(TOY_CFG)
    values["out"] = str(tmp)
    values.update(overrides)
    return build_config(values)


TINY = ModelConfig(concept_count=2, noise_size=1, class_count=2, image_size=8,
                   backbone_width=1, generator_width=1, discriminator_width=1)


@pytest.fixture
def tiny_model():
    return build_model(TINY, seed=3, dtype=torch.float64)


@pytest.fixture(scope="session")
def toy_data():
    return datasets_for(toy_config("unused"))


@pytest.fixture(scope="session")
def trained_toy(tmp_path_factory, toy_data):
    """The toy recipe (DAN, 2,000 steps, seed 0) run once per session."""
    out = tmp_path_factory.mktemp("toy_dan")
    cfg = toy_config(out)
    state, report = run_seed(cfg, 0, out / "seed_0", toy_data)
    return cfg, state, report, out / "seed_0"


def _write_cifar10(root, rng):
    d = root / CIFAR10_SUBDIR
    d.mkdir(parents=True)
    names = [f"data_batch_{i}.bin" for i in range(1, 6)] + ["test_batch.bin"]
    for name in names:
        labels = np.tile(np.arange(10), 1000)
        rng.shuffle(labels)
        pixels = rng.integers(0, 256, size=(10000, 3072), dtype=np.uint8)
        (d / name).write_bytes(encode_records(labels, pixels))
    (d / "batches.meta.txt").write_text("\n".join(f"class{i}" for i in range(10)) + "\n")
    return d


def _write_cifar100(root, rng):
    d = root / CIFAR100_SUBDIR
    d.mkdir(parents=True)
    for name, per_class in (("train.bin", 500), ("test.bin", 100)):
        fine = np.repeat(np.arange(100), per_class)
        rng.shuffle(fine)
        coarse = fine // 5
        pixels = rng.integers(0, 256, size=(len(fine), 3072), dtype=np.uint8)
        (d / name).write_bytes(encode_records(fine, pixels, coarse))
    return d


@pytest.fixture(scope="session")
def cifar_root(tmp_path_factory):
    """Dataset root with the official binary layout.

    Uses real files when ``$CONCEPTGAN_DATA`` provides them; otherwise
    writes full-size synthetic binaries (random pixels, balanced labels).
    """
    env = os.environ.get("CONCEPTGAN_DATA")
    if env and (Path(env) / CIFAR10_SUBDIR).is_dir() and (Path(env) / CIFAR100_SUBDIR).is_dir():
        return Path(env), True
    root = tmp_path_factory.mktemp("cifar")
    rng = np.random.default_rng(2024)
    _write_cifar10(root, rng)
    _write_cifar100(root, rng)
    return root, False
