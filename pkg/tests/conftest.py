import numpy as np
import pytest

from attn_adapter.episodes import synth_dataset

# Standard fixture: zero-shot accuracy lands around 0.65, leaving headroom
# for the adapters; shared by trainer, estimator, and acceptance tests.
FIXTURE = dict(n_classes=10, k_support=16, q_query=50, d=64, m=8, noise=0.22)


def make_fixture_archive(seed: int):
    return synth_dataset(seed, **FIXTURE)


@pytest.fixture(scope="session")
def fixture_archive():
    return make_fixture_archive(7)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def unit_rows(rng, n, d):
    rows = rng.standard_normal((n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)
