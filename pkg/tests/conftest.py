import sys

import numpy as np
import pytest

from projscan.harness.phantom import generate_cohort
from projscan.model import ModelConfig
from projscan.projection import PAPER_CHANNELS, build_projection_set
from projscan.training import ProjectionDataset


def cohort_dataset(n, seed=0, dims=(32, 32, 26), signal="mixed", noise=0.05):
    cohort = generate_cohort(n, seed=seed, dims=dims, noise=noise, signal=signal)
    sets = [build_projection_set(p.volume, PAPER_CHANNELS, p.subject_id) for p in cohort]
    return ProjectionDataset.from_projection_sets(sets, [p.age for p in cohort])


def tiny_model_cfg(**kw):
    base = dict(conv_layers_per_stack=4, final_filters=16, head_width=16)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def small_ds():
    return cohort_dataset(24, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
