import numpy as np
import pytest

from skelact import (
    EncoderSpec,
    SynthSpec,
    TrainConfig,
    chain_graph,
    generate_synthetic,
    generate_synthetic_split,
)
from skelact.datasets import center_dataset
from skelact.training import init_framework


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_graph():
    return chain_graph(3)


@pytest.fixture
def tiny_batch():
    """A 4-sample (B,T,N,C) batch with labels, N=3 joints, T=2 frames."""
    data = generate_synthetic(
        SynthSpec(num_classes=3, num_joints=3, frames=2, samples_per_class=2, noise=0.3),
        seed=5,
    )
    return data.stack()[:4], data.labels()[:4]


@pytest.fixture
def tiny_config():
    return TrainConfig(epochs=1, warmup_epochs=0, batch_size=4, seed=1)


@pytest.fixture
def tiny_framework(tiny_graph, tiny_config):
    return init_framework(
        tiny_graph, num_classes=3, in_channels=3, config=tiny_config,
        base_spec=EncoderSpec(num_blocks=2, hidden_channels=(4, 5), delta=1.0),
    )


ACCEPTANCE_SPEC = SynthSpec(
    num_classes=3, num_joints=8, frames=16, samples_per_class=200, noise=0.1
)
ACCEPTANCE_SEED = 7


@pytest.fixture(scope="session")
def acceptance_data():
    """The synthetic benchmark task: 3 classes, N=8, T=16, 200 train / 100
    test per class, centered on the root joint."""
    train, test = generate_synthetic_split(ACCEPTANCE_SPEC, 100, ACCEPTANCE_SEED)
    graph = chain_graph(ACCEPTANCE_SPEC.num_joints)
    return center_dataset(train, graph), center_dataset(test, graph), graph


@pytest.fixture(scope="session")
def run_cache():
    """Session-wide cache of trained runs keyed by the caller's tag."""
    return {}
