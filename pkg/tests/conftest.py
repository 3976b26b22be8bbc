import numpy as np
import pytest

from sceneforge.synthdata import GeneratorConfig, generate_video


@pytest.fixture(scope="session")
def small_config():
    return GeneratorConfig(frames=12, n_objects=(2, 3))


@pytest.fixture(scope="session")
def video(small_config):
    return generate_video(small_config, seed=11)


@pytest.fixture(scope="session")
def videos(small_config):
    return [generate_video(small_config, seed=20 + i) for i in range(3)]
