import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from metascript.glyphs import load_dataset  # noqa: E402
from metascript.synth import build_toy_font, make_toy_dataset  # noqa: E402
from metascript.training import TrainConfig, train  # noqa: E402

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def toy_font(tmp_path_factory):
    return build_toy_font(tmp_path_factory.mktemp("font") / "toy.ttf")


@pytest.fixture(scope="session")
def toy_data(tmp_path_factory, toy_font):
    """Six characters by two writers at 32px."""
    root = tmp_path_factory.mktemp("toy")
    return make_toy_dataset(root, "十口田木天王", 2, resolution=32, font=toy_font)


@pytest.fixture(scope="session")
def toy_index(toy_data):
    return load_dataset(toy_data["root"], 32)


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory, toy_data):
    """A short desk-profile training run shared by tests that need a checkpoint."""
    runs = tmp_path_factory.mktemp("runs")
    config = TrainConfig(
        dataset_root=str(toy_data["root"]),
        name="short",
        profile="desk",
        references=2,
        batch_size=4,
        iterations=12,
        checkpoint_every=6,
        runs_dir=str(runs),
        font=str(toy_data["font"]),
    )
    return config, train(config)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one PASS/FAIL line per acceptance criterion at the end of the run
_verdicts = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or report.failed:
        seconds = _verdicts.get(item.nodeid, (None, None, 0.0))[2] + report.duration
        _verdicts[item.nodeid] = (mark.args[0], report.passed, seconds)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, passed, seconds in _verdicts.values():
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  ({seconds:.1f} s)")
