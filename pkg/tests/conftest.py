"""Shared fixtures; the heavy experiment artifacts are built once per session."""

import time

import pytest

from nettwin import harness, mpnn

SESSION_T0 = time.monotonic()

# evaluation seeds are disjoint from the training seed
HELDOUT_SEEDS = tuple(range(11, 23))


@pytest.fixture(scope="session")
def config():
    # one training seed: exactly six training topologies (3 models x 2 sizes)
    return harness.ExperimentConfig(train_seeds=(101,),
                                    eval_seeds=(11, 22, 33, 44))


@pytest.fixture(scope="session")
def train_data(config):
    samples, report = harness.run_phase1(config, config.train_seeds)
    return samples, report


@pytest.fixture(scope="session")
def trained_model(config, train_data):
    samples, _ = train_data
    t0 = time.monotonic()
    params = harness.train_model(config, samples)
    return params, time.monotonic() - t0


@pytest.fixture(scope="session")
def heldout_data(config):
    samples, report = harness.run_phase1(config, HELDOUT_SEEDS)
    return samples, report


@pytest.fixture(scope="session")
def paired_reports(config, trained_model):
    params, _ = trained_model
    _, baseline = harness.run_phase1(config, config.eval_seeds)
    optimized = harness.run_phase2(config, params, config.eval_seeds)
    return baseline, optimized


@pytest.fixture(scope="session")
def tiny_model(config):
    """Small, fast model for unit tests that only need plausible classifications."""
    small = harness.ExperimentConfig(
        models=config.models, sizes=(5,), iterations=3,
        train_seeds=(101,), eval_seeds=(11,))
    samples, _ = harness.run_phase1(small, small.train_seeds)
    return mpnn.train(samples, lr=0.02, epochs=120, seed=7)
