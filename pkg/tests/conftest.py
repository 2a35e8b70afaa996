"""Shared fixtures: SCM specs, small trained models, backend sweeps."""

from __future__ import annotations

import numpy as np
import pytest

from causalgen import scm
from causalgen.graph import CausalGraph
from causalgen.model import ModelConfig, train
from causalgen.nncore import backend


def pytest_addoption(parser):
    parser.addoption(
        "--skip-slow",
        action="store_true",
        default=False,
        help="skip the full-scale acceptance reproductions",
    )


@pytest.fixture
def pair_spec():
    return scm.mean_reverting_pair_spec()


@pytest.fixture
def pair_graph():
    return scm.mean_reverting_pair_spec().graph


def tiny_model_config(graph, **overrides) -> ModelConfig:
    base = dict(
        graph=graph,
        sequence_length=5,
        latent_dim=2,
        feature_width=6,
        gru_width=8,
        decoder_width=8,
        flow_depth=2,
        flow_width=6,
        epochs=8,
        batch_size=64,
        seed=11,
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def tiny_config(pair_graph):
    return tiny_model_config(pair_graph)


@pytest.fixture(scope="session")
def small_checkpoint():
    """A cheaply trained model for structural tests (seconds, not minutes)."""
    spec = scm.mean_reverting_pair_spec()
    config = ModelConfig(
        graph=spec.graph,
        sequence_length=8,
        latent_dim=2,
        feature_width=12,
        gru_width=12,
        decoder_width=12,
        flow_depth=2,
        flow_width=8,
        epochs=30,
        batch_size=128,
        seed=3,
    )
    data = scm.simulate(spec, 1200, config.sequence_length, seed=42)
    checkpoint, _ = train(config, data)
    return checkpoint


@pytest.fixture(scope="session")
def quality_checkpoint():
    """A mid-scale model accurate enough for probability-level checks."""
    spec = scm.mean_reverting_pair_spec()
    config = ModelConfig(graph=spec.graph, epochs=60, seed=7)
    data = scm.simulate(spec, 3000, config.sequence_length, seed=55)
    checkpoint, _ = train(config, data)
    return checkpoint


def single_variable_spec() -> scm.LinearSCMSpec:
    graph = CausalGraph(("X",), (("X", "X", 1),))
    return scm.LinearSCMSpec(graph, {("X", "X", 1): 0.8}, {"X": 0.5})


@pytest.fixture(scope="session")
def flow1d_checkpoint():
    """A trained single-variable model with 1-d latents, for quadrature checks."""
    spec = single_variable_spec()
    config = ModelConfig(
        graph=spec.graph,
        sequence_length=4,
        latent_dim=1,
        feature_width=8,
        gru_width=8,
        decoder_width=8,
        flow_depth=3,
        flow_width=8,
        epochs=40,
        batch_size=128,
        seed=5,
    )
    data = scm.simulate(spec, 1000, config.sequence_length, seed=21)
    checkpoint, _ = train(config, data)
    return checkpoint


@pytest.fixture(params=backend.available_backends())
def kernel_backend(request):
    """Run the test under every installed kernel backend."""
    with backend.use_backend(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def chain_graph():
    return CausalGraph(("A", "B", "C"), (("A", "B", 0), ("B", "C", 0)))
