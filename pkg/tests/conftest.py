import json
import sys
from pathlib import Path

import numpy as np
import pytest

from floodwatch import segnet

DATA = Path(__file__).parent / "data"
KERALA_60 = DATA / "kerala_60.jsonl"


def fixture_kinds() -> dict[str, str]:
    return {json.loads(line)["id"]: json.loads(line)["kind"]
            for line in KERALA_60.read_text().splitlines() if line.strip()}


@pytest.fixture
def checkpoint(tmp_path):
    net = segnet.ToySegNet.init(seed=0, width=4)
    state = segnet.TrainState(net=net, moments=segnet.init_moments(net.params), step=0,
                              epoch=0, rng=np.random.default_rng(0))
    path = tmp_path / "net.npz"
    segnet.save_checkpoint(path, state, segnet.TrainConfig(width=4))
    return path


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is not None and module.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(module.VERDICTS.items()):
            terminalreporter.write_line(line)
