import numpy as np
import pytest
import torch

from homae.scenegen import SceneConfig, generate_scene, scene_seed


@pytest.fixture(scope="session")
def desk_scenes():
    cfg = SceneConfig(image_size=112)
    return [generate_scene(cfg, seed=scene_seed(0, i)) for i in range(8)]


@pytest.fixture(scope="session")
def scene224():
    return generate_scene(SceneConfig(), seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def double_precision():
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(prev)


def pytest_terminal_summary(terminalreporter):
    from _acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
