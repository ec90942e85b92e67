import numpy as np
import pytest

from kllab.dist import RewardVector, Scenario, from_probs, normalize


def make_scenario(ref_masses, rewards, name="test") -> Scenario:
    return Scenario(
        reference=from_probs(np.asarray(ref_masses, dtype=float)),
        rewards=RewardVector(np.asarray(rewards, dtype=float)),
        name=name,
    )


def random_scenario(rng: np.random.Generator, n_max=16, allow_masked=True) -> Scenario:
    n = int(rng.integers(2, n_max + 1))
    lw = rng.uniform(-4.0, 2.0, size=n)
    if allow_masked and rng.random() < 0.4:
        k = int(rng.integers(1, n))  # keep at least one unmasked
        masked = rng.choice(n, size=k, replace=False)
        lw[masked] = -np.inf
    rewards = rng.uniform(-2.0, 2.0, size=n)
    return Scenario(normalize(lw), RewardVector(rewards), name=f"random{n}")


@pytest.fixture
def two_point() -> Scenario:
    return make_scenario([0.5, 0.5], [0.0, 1.0], name="two_point")
