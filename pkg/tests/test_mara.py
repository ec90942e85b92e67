import numpy as np
import pytest

from conftest import make_scenario, random_scenario
from kllab.dist import RewardVector, Scenario, normalize
from kllab.errors import InvalidAnchor, InvalidCoefficient
from kllab.mara import (
    BatchPercentile,
    Constant,
    MaraConfig,
    anchored_scenario,
    augment_ref_view,
    augment_rewards,
    augmented_reward_vector,
    global_anchor,
    mara_target,
    resolve_threshold,
    select_anchor,
)
from kllab.targets import reverse_kl_target
from kllab.trainer import reverse_coefficients, uniform_policy


def hand_scenario() -> Scenario:
    """Four tokens whose first three reference log-masses are exactly
    -2, -5, -3; the fourth absorbs the leftover mass."""
    masses = np.array([np.exp(-2.0), np.exp(-5.0), np.exp(-3.0), 0.0])
    masses[3] = 1.0 - masses.sum()
    return Scenario(
        normalize(np.log(masses)),
        RewardVector(np.array([1.0, 0.8, 0.2, 0.0])),
        name="hand",
    )


CFG = MaraConfig(Constant(0.5), beta=0.1)


def test_config_validation():
    with pytest.raises(InvalidCoefficient):
        MaraConfig(Constant(0.5), beta=0.0)
    with pytest.raises(ValueError):
        MaraConfig(Constant(0.5), beta=1.0, anchor_tiebreak="coin_flip")
    with pytest.raises(ValueError):
        BatchPercentile(1.0)


def test_resolve_threshold():
    assert resolve_threshold(Constant(0.4), np.array([0.0, 1.0])) == 0.4
    r = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
    assert resolve_threshold(BatchPercentile(0.5), r) == 2.0
    assert resolve_threshold(BatchPercentile(0.75), r) == 3.0


def test_select_anchor_prefers_reference_mass():
    s = hand_scenario()
    # both 0 and 1 qualify; 0 carries more reference mass
    assert select_anchor([1, 0, 2], s, threshold=0.5) == 0
    # restricting the batch changes the anchor
    assert select_anchor([1, 2], s, threshold=0.5) == 1
    assert select_anchor([2, 3], s, threshold=0.5) is None


def test_select_anchor_tiebreaks():
    s = make_scenario([0.4, 0.4, 0.2], [0.6, 0.9, 0.1])
    assert select_anchor([0, 1], s, 0.5, tiebreak="lowest_index") == 0
    assert select_anchor([1, 0], s, 0.5, tiebreak="lowest_index") == 1
    assert select_anchor([0, 1], s, 0.5, tiebreak="highest_reward") == 1


def test_augment_rewards_hand_example():
    s = hand_scenario()
    batch = augment_rewards([0, 1, 2], s, CFG)
    assert batch.anchor_index == 0
    assert batch.threshold_used == 0.5
    np.testing.assert_allclose(batch.augmented_rewards, [1.0, 1.3, 0.2], atol=1e-12)
    # reward view keeps the true reference log-probs
    np.testing.assert_allclose(
        batch.augmented_ref_logprobs, s.reference.log_weights[[0, 1, 2]], atol=0
    )


def test_augment_ref_view_hand_example():
    s = hand_scenario()
    batch = augment_ref_view([0, 1, 2], s, CFG)
    assert batch.anchor_index == 0
    np.testing.assert_allclose(batch.augmented_rewards, [1.0, 1.0, 0.2], atol=1e-12)
    lref0 = s.reference.log_weights[0]
    np.testing.assert_allclose(
        batch.augmented_ref_logprobs,
        [lref0, lref0, s.reference.log_weights[2]],
        atol=0,
    )


def test_below_threshold_transparency():
    s = hand_scenario()
    cfg = MaraConfig(Constant(5.0), beta=0.1)
    batch = augment_rewards([0, 1, 2, 3], s, cfg)
    assert batch.anchor_index is None
    np.testing.assert_array_equal(batch.augmented_rewards, batch.raw_rewards)


def test_augment_duplicates_share_anchor():
    s = hand_scenario()
    batch = augment_rewards([1, 1, 0], s, CFG)
    assert batch.anchor_index == 0
    np.testing.assert_allclose(batch.augmented_rewards, [1.3, 1.3, 1.0], atol=1e-12)


def test_global_anchor():
    s = hand_scenario()
    assert global_anchor(s, tau=0.5) == 0
    assert global_anchor(s, tau=2.0) is None


def test_augmented_reward_vector_validation():
    s = hand_scenario()
    with pytest.raises(InvalidAnchor):
        augmented_reward_vector(s, 0.1, tau=0.5, anchor=2)


def test_mara_target_uniform_above_threshold():
    s = hand_scenario()
    g = mara_target(s, beta=0.1, tau=0.5, anchor=0)
    assert g.probs[0] == pytest.approx(g.probs[1], rel=1e-9)
    # below-threshold indices keep the plain tilt ordering
    assert g.probs[0] > g.probs[2]


def test_mara_target_matches_augmented_reverse_target():
    rng = np.random.Generator(np.random.PCG64(21))
    for _ in range(30):
        s = random_scenario(rng, allow_masked=False)
        beta = float(rng.uniform(0.05, 2.0))
        tau = float(np.quantile(s.rewards.values, 0.6))
        anchor = global_anchor(s, tau)
        if anchor is None:
            continue
        direct = mara_target(s, beta, tau, anchor)
        via_rewards = reverse_kl_target(
            Scenario(s.reference, augmented_reward_vector(s, beta, tau, anchor)),
            beta,
        )
        np.testing.assert_allclose(direct.probs, via_rewards.probs, atol=1e-12)


def test_anchored_scenario_shape():
    s = hand_scenario()
    anchored = anchored_scenario(s, tau=0.5, anchor=0)
    # both qualifying indices now carry the anchor's reward and an equal
    # share of reference mass
    assert anchored.rewards.values[1] == 1.0
    assert anchored.rewards.values[2] == 0.2
    p = anchored.reference.probs
    assert p[0] == pytest.approx(p[1], rel=1e-12)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


def test_estimator_views_agree_per_sample():
    rng = np.random.Generator(np.random.PCG64(8))
    for _ in range(50):
        s = random_scenario(rng, allow_masked=False)
        beta = float(rng.uniform(0.05, 2.0))
        cfg = MaraConfig(Constant(float(np.quantile(s.rewards.values, 0.5))), beta)
        ys = rng.integers(0, s.n, size=16)
        a1 = augment_rewards(ys, s, cfg)
        a2 = augment_ref_view(ys, s, cfg)
        policy = uniform_policy(s.n)
        c1 = reverse_coefficients(
            policy, ys, a1.augmented_rewards, a1.augmented_ref_logprobs, beta
        )
        c2 = reverse_coefficients(
            policy, ys, a2.augmented_rewards, a2.augmented_ref_logprobs, beta
        )
        np.testing.assert_allclose(c1, c2, atol=1e-12)
