import numpy as np
import pytest

from eet.linalg import Rng
from eet.vit import ModelWeights, config_for_profile, init_weights, tensor_shapes


def random_weights(cfg, seed=0, scale=0.3):
    """Weights with every tensor random, biases and LN parameters included."""
    rng = Rng(seed)
    tensors = {}
    for name, shape in tensor_shapes(cfg).items():
        if name.endswith("gamma"):
            tensors[name] = 1.0 + rng.normal(shape, scale=0.1)
        else:
            tensors[name] = rng.normal(shape, scale=scale)
    return ModelWeights(cfg, tensors)


@pytest.fixture(scope="session")
def micro_cfg():
    return config_for_profile("micro-16")


@pytest.fixture(scope="session")
def micro_weights(micro_cfg):
    return random_weights(micro_cfg, seed=3)


@pytest.fixture(scope="session")
def small_cfg():
    return config_for_profile("small-224")


@pytest.fixture(scope="session")
def small_weights(small_cfg):
    return init_weights(small_cfg, seed=0)


def random_image(cfg, seed=0):
    return Rng(seed).uniform((cfg.image_size, cfg.image_size, cfg.channels)) * 2.0 - 1.0


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Callable recording one acceptance criterion outcome for the summary."""
    results = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def record(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        results[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
