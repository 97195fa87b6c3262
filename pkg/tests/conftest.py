"""Shared fixtures: small trained models and the five-seed desk harness
used by the qualitative head-to-head checks."""

from __future__ import annotations

import numpy as np
import pytest

from sdmax import attacks, models

DESK_SEEDS = (1, 2, 3, 4, 5)
DESK_EPS = 0.1
DESK_ALPHA = 0.025
DESK_STEPS = 100


def train_desk_model(seed: int, d: int, n: int, hidden, epochs: int, adversarial: bool = True):
    """Blobs dataset plus an MLP trained on it, adversarially by default."""
    data = models.synth_dataset("blobs", n, d, 5, 0.09, seed=seed)
    model = models.init_mlp([d] + list(hidden) + [5], seed=seed)
    kwargs = {}
    if adversarial:
        kwargs = {"adv_epsilon": DESK_EPS, "adv_alpha": DESK_ALPHA, "adv_steps": 10}
    cfg = models.TrainConfig(epochs=epochs, batch_size=64, lr=0.1, seed=seed, **kwargs)
    model, trace = models.train(model, data, cfg)
    return data, model, trace


def _attack_all(model, data, seed: int):
    out = {}
    for method in ("pgd", "margin_pgd", "sdm"):
        cfg = attacks.AttackConfig(
            method=method,
            epsilon=DESK_EPS,
            alpha=DESK_ALPHA,
            total_steps=DESK_STEPS,
            seed=seed,
        )
        out[method] = attacks.run_attack(model, data.inputs, data.labels, cfg)
    return out


@pytest.fixture(scope="session")
def desk_runs():
    """Five seeds of adversarially trained d=8 models with all three
    iterative attacks run at the same step budget."""
    runs = []
    for seed in DESK_SEEDS:
        data, model, _ = train_desk_model(seed, d=8, n=400, hidden=(32, 32), epochs=25)
        runs.append({"seed": seed, "data": data, "model": model, **_attack_all(model, data, seed)})
    return runs


@pytest.fixture(scope="session")
def spatial_runs():
    """Five seeds of adversarially trained d=64 models whose inputs reshape
    to an 8x8 grid, for the interference comparisons."""
    runs = []
    for seed in DESK_SEEDS:
        data, model, _ = train_desk_model(seed, d=64, n=300, hidden=(48,), epochs=20)
        runs.append({"seed": seed, "data": data, "model": model, **_attack_all(model, data, seed)})
    return runs


@pytest.fixture(scope="session")
def tiny_model():
    """One clean-trained model for plumbing tests that just need a target."""
    data, model, _ = train_desk_model(7, d=8, n=240, hidden=(16,), epochs=25, adversarial=False)
    return data, model


def random_model(rng: np.random.Generator, d: int = 6, k: int = 5, hidden=(12, 10)):
    dims = [d] + list(hidden) + [k]
    weights = [rng.normal(0.0, 0.8, size=(o, i)) for i, o in zip(dims[:-1], dims[1:])]
    biases = [rng.normal(0.0, 0.2, size=o) for o in dims[1:]]
    return models.MlpModel(weights, biases)
