import numpy as np
import pytest

from factvae import FactVaeModel, GroupedSample, GroupSpec, SeededRng

# lines recorded by the acceptance module, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def perturbed_model(specs, latent, hidden, seed, scale=0.3):
    """Initialized model with every parameter (biases, log-variances too) jittered."""
    model = FactVaeModel.initialize(specs, latent, hidden, SeededRng(seed))
    rng = np.random.default_rng(seed)
    for p in model.parameters():
        p.value[...] += scale * rng.standard_normal(p.shape)
    return model


@pytest.fixture
def tiny_specs():
    return [GroupSpec("a", 3), GroupSpec("b", 2)]


@pytest.fixture
def tiny_model(tiny_specs):
    return perturbed_model(tiny_specs, 2, 4, seed=3)


@pytest.fixture
def tiny_sample():
    rng = np.random.default_rng(11)
    return GroupedSample({"a": rng.standard_normal(3), "b": rng.standard_normal(2)})
