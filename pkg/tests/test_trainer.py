import numpy as np
import pytest

from conftest import make_scenario, random_scenario
from kllab.errors import InfiniteDivergence, NonFiniteGradient
from kllab.mara import Constant, MaraConfig
from kllab.targets import TargetSpec, forward_kl_target, reverse_kl_target
from kllab.trainer import (
    AdamState,
    MonteCarlo,
    SoftmaxPolicy,
    TrainConfig,
    _apply_baseline,
    adam_step,
    exact_gradient,
    exact_objective,
    kl_gradient_to_target,
    matching_step_sft,
    mc_gradient_forward,
    mc_gradient_reverse,
    train,
    uniform_policy,
)


def fd_gradient(policy, s, spec, h=1e-5):
    g = np.zeros(policy.n)
    for k in range(policy.n):
        e = np.zeros(policy.n)
        e[k] = h
        jp = exact_objective(SoftmaxPolicy(policy.logits + e, policy.support_mask), s, spec)
        jm = exact_objective(SoftmaxPolicy(policy.logits - e, policy.support_mask), s, spec)
        g[k] = (jp - jm) / (2 * h)
    return g


def random_policy(rng, s, spec):
    mask = None
    if spec.kind == "reverse" or (spec.kind == "generalized" and spec.beta > 0):
        mask = np.asarray(s.reference.support_mask)
    return SoftmaxPolicy(rng.uniform(-2, 2, s.n), mask)


# --------------------------------------------------------------------------
# policy basics


def test_softmax_policy_masks_indices():
    p = SoftmaxPolicy(np.array([0.0, 5.0, 0.0]), np.array([True, False, True]))
    probs = p.probs()
    assert probs[1] == 0.0
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_softmax_policy_rejects_non_finite_logits():
    with pytest.raises(ValueError):
        SoftmaxPolicy(np.array([0.0, np.inf]))


# --------------------------------------------------------------------------
# exact objective and gradients


def test_objective_at_reference_is_expected_reward():
    s = make_scenario([0.3, 0.7], [1.0, 2.0])
    policy = SoftmaxPolicy(np.array(s.reference.log_weights))
    value = exact_objective(policy, s, TargetSpec("reverse", 0.5))
    assert value == pytest.approx(0.3 * 1.0 + 0.7 * 2.0, abs=1e-12)


def test_two_point_optimum_beats_grid(two_point):
    spec = TargetSpec("reverse", 1.0)
    target = reverse_kl_target(two_point, 1.0)
    best = exact_objective(
        SoftmaxPolicy(np.array(target.log_weights)), two_point, spec
    )
    for q in np.arange(1e-3, 1.0, 1e-3):
        policy = SoftmaxPolicy(np.log([1.0 - q, q]))
        assert exact_objective(policy, two_point, spec) <= best + 1e-12


def test_reverse_gradient_zero_at_target():
    rng = np.random.Generator(np.random.PCG64(3))
    for _ in range(10):
        s = random_scenario(rng)
        beta = float(rng.uniform(0.1, 2.0))
        target = reverse_kl_target(s, beta)
        lw = np.where(target.support_mask, target.log_weights, 0.0)
        policy = SoftmaxPolicy(lw, np.asarray(target.support_mask))
        g = exact_gradient(policy, s, TargetSpec("reverse", beta))
        np.testing.assert_allclose(g, 0.0, atol=1e-10)


def test_forward_gradient_zero_at_solution(two_point):
    sol = forward_kl_target(two_point, 1.0)
    policy = SoftmaxPolicy(np.array(sol.distribution.log_weights))
    g = exact_gradient(policy, two_point, TargetSpec("forward", 1.0))
    np.testing.assert_allclose(g, 0.0, atol=1e-9)


def test_reverse_objective_rejects_off_support_policy():
    s = make_scenario([1.0, 0.0], [0.0, 1.0])
    policy = uniform_policy(2)
    with pytest.raises(InfiniteDivergence):
        exact_objective(policy, s, TargetSpec("reverse", 1.0))
    with pytest.raises(InfiniteDivergence):
        exact_gradient(policy, s, TargetSpec("reverse", 1.0))


def test_forward_objective_rejects_partial_policy():
    s = make_scenario([0.5, 0.5], [0.0, 1.0])
    policy = uniform_policy(2, np.array([True, False]))
    with pytest.raises(InfiniteDivergence):
        exact_objective(policy, s, TargetSpec("forward", 1.0))


@pytest.mark.parametrize(
    "spec",
    [
        TargetSpec("reverse", 0.5),
        TargetSpec("forward", 0.5),
        TargetSpec("generalized", 0.3, 0.7),
        TargetSpec("generalized", 0.0, 1.0),
    ],
)
def test_exact_gradient_matches_finite_differences(spec):
    rng = np.random.Generator(np.random.PCG64(17))
    for _ in range(10):
        s = random_scenario(rng, n_max=8, allow_masked=spec.kind == "reverse")
        policy = random_policy(rng, s, spec)
        g = exact_gradient(policy, s, spec)
        fd = fd_gradient(policy, s, spec)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-7)


def test_gradient_identity_with_kl_to_target():
    rng = np.random.Generator(np.random.PCG64(29))
    for _ in range(10):
        s = random_scenario(rng)
        beta = float(rng.uniform(0.1, 2.0))
        spec = TargetSpec("reverse", beta)
        policy = random_policy(rng, s, spec)
        g = exact_gradient(policy, s, spec)
        g_kl = kl_gradient_to_target(policy, reverse_kl_target(s, beta))
        np.testing.assert_allclose(g, -beta * g_kl, atol=1e-9)


# --------------------------------------------------------------------------
# Monte-Carlo estimators


def test_baseline_variants_agree():
    rng = np.random.Generator(np.random.PCG64(4))
    coef = rng.normal(size=32)
    a = _apply_baseline(coef, "batch_mean")
    b = _apply_baseline(coef, "leave_one_out")
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_baseline_requires_two_samples():
    with pytest.raises(ValueError):
        _apply_baseline(np.array([1.0]), "batch_mean")


def test_point_mass_policy_has_zero_mc_gradient():
    s = make_scenario([1.0, 0.0], [0.7, 0.0])
    policy = uniform_policy(2, np.array([True, False]))
    g = mc_gradient_reverse(policy, s, beta=0.5, batch=16, baseline="none", seed=0)
    # only accumulation round-off remains (sum of 16 identical terms / 16)
    np.testing.assert_allclose(g, 0.0, atol=1e-15)


def test_mc_gradient_deterministic():
    s = make_scenario([0.2, 0.3, 0.5], [0.0, 1.0, 0.5])
    policy = uniform_policy(3)
    a = mc_gradient_reverse(policy, s, 0.5, 32, "batch_mean", seed=9)
    b = mc_gradient_reverse(policy, s, 0.5, 32, "batch_mean", seed=9)
    np.testing.assert_array_equal(a, b)


def test_mc_reverse_rejects_off_support_samples():
    s = make_scenario([0.0, 1.0], [1.0, 0.0])
    policy = uniform_policy(2)  # full support, can propose index 0
    with pytest.raises(InfiniteDivergence):
        mc_gradient_reverse(policy, s, 0.5, 64, "none", seed=1)


def _mean_mc(fn, trials):
    total = None
    for seed in range(trials):
        g = fn(seed)
        total = g if total is None else total + g
    return total / trials


def test_baselines_leave_expectation_unchanged():
    s = make_scenario([0.15, 0.25, 0.35, 0.25], [0.0, 1.0, 0.4, -0.3])
    rng = np.random.Generator(np.random.PCG64(33))
    policy = SoftmaxPolicy(rng.uniform(-1, 1, 4))
    spec = TargetSpec("reverse", 0.5)
    exact = exact_gradient(policy, s, spec)
    trials, batch = 8000, 16
    for baseline in ("batch_mean", "leave_one_out"):
        grads = np.array([
            mc_gradient_reverse(policy, s, 0.5, batch, baseline, seed)
            for seed in range(trials)
        ])
        mean = grads.mean(axis=0)
        se = grads.std(axis=0, ddof=1) / np.sqrt(trials)
        assert np.all(np.abs(mean - exact) <= 3.5 * se + 1e-12)


def test_baseline_reduces_variance():
    s = make_scenario([0.15, 0.25, 0.35, 0.25], [0.0, 1.0, 0.4, -0.3])
    policy = SoftmaxPolicy(np.array([0.3, -0.2, 0.1, 0.0]))
    trials = 800
    var = {}
    for baseline in ("none", "batch_mean"):
        grads = np.array([
            mc_gradient_reverse(policy, s, 0.5, 16, baseline, seed)
            for seed in range(trials)
        ])
        var[baseline] = float(grads.var(axis=0).sum())
    assert var["batch_mean"] < var["none"]


def test_mc_forward_regularizer_variants():
    s = make_scenario([0.2, 0.3, 0.5], [0.0, 1.0, 0.5])
    policy = SoftmaxPolicy(np.array([0.1, -0.3, 0.2]))
    exact_reg = mc_gradient_forward(policy, s, 1.0, 64, seed=5)
    sampled = _mean_mc(
        lambda seed: mc_gradient_forward(
            policy, s, 1.0, 64, seed=seed, sampled_regularizer=True
        ),
        2000,
    )
    expectation = _mean_mc(
        lambda seed: mc_gradient_forward(policy, s, 1.0, 64, seed=seed), 2000
    )
    np.testing.assert_allclose(sampled, expectation, atol=0.02)
    assert np.all(np.isfinite(exact_reg))


def test_matching_step_sft_point_mass_target():
    target = make_scenario([0.0, 1.0], [0, 0]).reference
    policy = uniform_policy(2)
    g = matching_step_sft(policy, target, batch=8, seed=0)
    np.testing.assert_allclose(g, [0.5, -0.5], atol=1e-12)


def test_matching_step_sft_converges():
    s = make_scenario([0.1, 0.2, 0.3, 0.4], [1.0, 0.0, 0.5, -0.5])
    target = reverse_kl_target(s, 0.5)
    policy = uniform_policy(4)
    state = AdamState(np.zeros(4), np.zeros(4))
    for step in range(600):
        # descent on KL(target || policy): negate the estimated gradient
        g = -matching_step_sft(policy, target, batch=256, seed=step)
        state, logits = adam_step(state, policy.logits, g, lr=0.05)
        policy = SoftmaxPolicy(logits, policy.support_mask)
    tv = 0.5 * np.sum(np.abs(policy.probs() - target.probs))
    assert tv <= 0.05


# --------------------------------------------------------------------------
# Adam


def test_adam_zero_gradient_is_identity():
    state = AdamState(np.zeros(3), np.zeros(3))
    params = np.array([1.0, -2.0, 0.5])
    state, new = adam_step(state, params, np.zeros(3), lr=0.1)
    np.testing.assert_array_equal(new, params)


def test_adam_first_step_magnitude():
    state = AdamState(np.zeros(2), np.zeros(2))
    g = np.array([3.0, -0.5])
    _, new = adam_step(state, np.zeros(2), g, lr=0.01)
    np.testing.assert_allclose(np.abs(new), 0.01, rtol=1e-6)
    assert np.sign(new[0]) == 1 and np.sign(new[1]) == -1


def test_adam_rejects_non_finite_gradient():
    state = AdamState(np.zeros(2), np.zeros(2))
    with pytest.raises(NonFiniteGradient):
        adam_step(state, np.zeros(2), np.array([1.0, np.nan]), lr=0.01)


# --------------------------------------------------------------------------
# training loop


def test_train_config_validation():
    spec = TargetSpec("generalized", 0.5, 0.5)
    with pytest.raises(ValueError):
        TrainConfig(spec, steps=0)
    with pytest.raises(ValueError):
        TrainConfig(spec, mara=MaraConfig(Constant(0.5), beta=0.5))
    with pytest.raises(ValueError):
        MonteCarlo(batch=1, baseline="leave_one_out")
    with pytest.raises(ValueError):
        MonteCarlo(baseline="oracle")


def test_train_trace_length_matches_steps(two_point):
    cfg = TrainConfig(TargetSpec("reverse", 1.0), steps=1)
    result = train(two_point, cfg)
    assert len(result.trace) == 1


def test_train_is_deterministic(two_point):
    cfg = TrainConfig(
        TargetSpec("reverse", 1.0), gradient_mode=MonteCarlo(batch=8),
        steps=50, seed=7,
    )
    a = train(two_point, cfg)
    b = train(two_point, cfg)
    np.testing.assert_array_equal(a.final_policy.probs, b.final_policy.probs)


def test_train_exact_reverse_converges():
    s = make_scenario([0.1, 0.2, 0.3, 0.4], [1.0, 0.0, 0.5, -0.5])
    cfg = TrainConfig(TargetSpec("reverse", 0.25), steps=1500)
    result = train(s, cfg)
    assert result.trace[-1].tv_to_target <= 0.02
    assert result.trace[-1].tv_to_target < result.trace[0].tv_to_target


def test_train_exact_forward_converges(two_point):
    cfg = TrainConfig(TargetSpec("forward", 1.0), steps=1500)
    result = train(two_point, cfg)
    assert result.trace[-1].tv_to_target <= 0.02


def test_train_records_anchor_history():
    s = make_scenario([0.5, 0.3, 0.2], [1.0, 0.9, 0.0])
    cfg = TrainConfig(
        TargetSpec("reverse", 0.5),
        gradient_mode=MonteCarlo(batch=8),
        mara=MaraConfig(Constant(0.5), beta=0.5),
        steps=20,
    )
    result = train(s, cfg)
    assert len(result.anchor_history) == 20
    assert all(a in (0, 1, None) for a in result.anchor_history)
    assert all(rec.above_threshold_mass is not None for rec in result.trace)


def test_train_mara_reaches_uniform_above_threshold():
    s = make_scenario([0.6, 0.2, 0.2], [1.0, 0.9, 0.0])
    cfg = TrainConfig(
        TargetSpec("reverse", 0.3),
        mara=MaraConfig(Constant(0.5), beta=0.3),
        steps=2000,
    )
    result = train(s, cfg)
    p = result.final_policy.probs
    assert p[0] == pytest.approx(p[1], rel=0.05)
