import os
from pathlib import Path

import numpy as np
import pytest
import torch
from torch import nn

from fiabench.modelzoo import CNNClassifier, TappedNet

ZOO_DIR = Path(os.environ.get("FIABENCH_ZOO", Path(__file__).resolve().parents[1] / ".zoo_cache"))


def make_stub(seed=0, in_channels=1, size=8, num_classes=3, dtype=torch.float64, activation=nn.Tanh):
    """Tiny smooth tapped CNN with identity input scaling."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        blocks = [
            nn.Sequential(nn.Conv2d(in_channels, 4, 3, padding=1), activation()),
            nn.Sequential(nn.Conv2d(4, 6, 3, stride=2, padding=1), activation()),
        ]
        head = nn.Sequential(nn.Flatten(), nn.Linear(6 * (size // 2) ** 2, num_classes))
        net = TappedNet(blocks, head, input_scale=1.0).to(dtype)
    return CNNClassifier.from_module(net, arch="stub", num_classes=num_classes,
                                     input_shape=(in_channels, size, size))


@pytest.fixture
def stub():
    return make_stub()


def random_images(n, seed=0, shape=(1, 8, 8), high=1.0, dtype=np.float64):
    return np.random.default_rng(seed).uniform(0, high, size=(n, *shape)).astype(dtype)


@pytest.fixture(scope="session")
def dataset():
    from fiabench.modelzoo import load_dataset

    return load_dataset("mnist5k")


@pytest.fixture(scope="session")
def zoo(dataset):
    """The default desk zoo, trained once and cached on disk."""
    from fiabench.modelzoo import train_zoo

    out = train_zoo(dataset, ZOO_DIR)
    failed = {k: s for k, (m, s) in out.items() if m is None}
    assert not failed, failed
    return {k: m for k, (m, _) in out.items()}


ACCEPTANCE_LINES = []


def report_criterion(number, passed, detail):
    """Record and print one acceptance line."""
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
