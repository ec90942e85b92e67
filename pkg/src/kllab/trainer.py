"""Softmax policy trained by policy gradient with a hand-rolled Adam.

Supports exact (full-enumeration) gradients, which serve as the oracle,
and Monte-Carlo score-function estimators with optional baselines. The
augmentation hooks plug in at the batch level for Monte-Carlo runs and
at the reward-vector level for exact runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np

from . import mara as mara_mod
from .dist import Categorical, Scenario, normalize
from .errors import InfiniteDivergence, NonFiniteGradient
from .mara import MaraConfig
from .targets import TargetSpec, analytic_target, forward_kl_target


# --------------------------------------------------------------------------
# policy


@dataclass(frozen=True)
class SoftmaxPolicy:
    """Categorical policy parameterized by unnormalized logits.

    Masked indices are excluded from the softmax and carry zero mass;
    their logits are ignored and their gradients are identically zero.
    """

    logits: np.ndarray
    support_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=float)
        if not np.all(np.isfinite(logits)):
            raise ValueError("logits must be finite")
        mask = self.support_mask
        mask = np.ones(logits.size, dtype=bool) if mask is None else np.asarray(mask, bool)
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "support_mask", mask)

    @property
    def n(self) -> int:
        return self.logits.size

    def log_probs(self) -> np.ndarray:
        lw = np.where(self.support_mask, self.logits, -np.inf)
        active = lw[self.support_mask]
        m = active.max()
        lw = lw - (m + np.log(np.sum(np.exp(active - m))))
        return lw

    def probs(self) -> np.ndarray:
        p = np.zeros(self.n)
        p[self.support_mask] = np.exp(self.log_probs()[self.support_mask])
        return p

    def distribution(self) -> Categorical:
        return normalize(self.log_probs())


def uniform_policy(n: int, support_mask=None) -> SoftmaxPolicy:
    return SoftmaxPolicy(np.zeros(n), support_mask)


# --------------------------------------------------------------------------
# exact objective and gradients


def exact_objective(policy: SoftmaxPolicy, s: Scenario, spec: TargetSpec) -> float:
    """Expected reward minus the exact regularizer, by full summation."""
    p = policy.probs()
    lp = policy.log_probs()
    lref = s.reference.log_weights
    r = s.rewards.values
    value = float(np.sum(p * r))
    if spec.kind in ("reverse", "generalized") and spec.beta > 0:
        if np.any(policy.support_mask & ~s.reference.support_mask):
            raise InfiniteDivergence("policy mass outside the reference support")
        m = policy.support_mask
        value -= spec.beta * float(np.sum(p[m] * (lp[m] - lref[m])))
    if spec.kind == "generalized" and spec.eta > 0:
        m = policy.support_mask
        value += spec.eta * float(-np.sum(p[m] * lp[m]))
    if spec.kind == "forward":
        if np.any(s.reference.support_mask & ~policy.support_mask):
            raise InfiniteDivergence("reference mass outside the policy support")
        m = s.reference.support_mask
        value -= spec.beta * float(np.sum(np.exp(lref[m]) * (lref[m] - lp[m])))
    return value


def exact_gradient(policy: SoftmaxPolicy, s: Scenario, spec: TargetSpec) -> np.ndarray:
    """Analytic gradient of the objective with respect to the logits."""
    p = policy.probs()
    lp = policy.log_probs()
    lref = s.reference.log_weights
    r = s.rewards.values
    m = policy.support_mask
    g = np.zeros(policy.n)
    if spec.kind == "forward":
        if np.any(s.reference.support_mask & ~m):
            raise InfiniteDivergence("reference mass outside the policy support")
        g[m] = p[m] * (r[m] - float(np.sum(p * r)))
        g[m] += spec.beta * (s.reference.probs[m] - p[m])
        return g
    if spec.beta > 0 and np.any(m & ~s.reference.support_mask):
        raise InfiniteDivergence("policy mass outside the reference support")
    coef = r[m].astype(float).copy()
    if spec.beta > 0:
        coef -= spec.beta * (lp[m] - lref[m])
    if spec.kind == "generalized" and spec.eta > 0:
        coef -= spec.eta * lp[m]
    g[m] = p[m] * (coef - float(np.sum(p[m] * coef)))
    return g


def kl_gradient_to_target(policy: SoftmaxPolicy, target: Categorical) -> np.ndarray:
    """Gradient of KL(policy || target) with respect to the logits."""
    if np.any(policy.support_mask & ~target.support_mask):
        raise InfiniteDivergence("policy mass outside the target support")
    p = policy.probs()
    lp = policy.log_probs()
    m = policy.support_mask
    d = lp[m] - target.log_weights[m]
    g = np.zeros(policy.n)
    g[m] = p[m] * (d - float(np.sum(p[m] * d)))
    return g


# --------------------------------------------------------------------------
# Monte-Carlo estimators

BASELINES = ("none", "batch_mean", "leave_one_out")


def _apply_baseline(coef: np.ndarray, baseline: str) -> np.ndarray:
    if baseline == "none":
        return coef
    b = coef.size
    if b < 2:
        raise ValueError("batch must be >= 2 for a batch-derived baseline")
    if baseline == "batch_mean":
        # mean subtraction shrinks the expectation by (b-1)/b; the b/(b-1)
        # factor restores unbiasedness
        return (coef - coef.mean()) * (b / (b - 1.0))
    if baseline == "leave_one_out":
        return coef - (coef.sum() - coef) / (b - 1.0)
    raise ValueError(f"unknown baseline {baseline!r}")


def score_function_gradient(
    policy: SoftmaxPolicy, ys: np.ndarray, coef: np.ndarray
) -> np.ndarray:
    """Mean over the batch of coef_i * grad log p(y_i) in logit space."""
    p = policy.probs()
    g = np.zeros(policy.n)
    np.add.at(g, ys, coef)
    g = g / ys.size - p * float(coef.mean())
    g[~policy.support_mask] = 0.0
    return g


def sample_policy(policy: SoftmaxPolicy, rng: np.random.Generator, count: int) -> np.ndarray:
    active = np.flatnonzero(policy.support_mask)
    cdf = np.cumsum(np.exp(policy.log_probs()[active]))
    cdf[-1] = 1.0
    return active[np.searchsorted(cdf, rng.random(count), side="right")]


def reverse_coefficients(
    policy: SoftmaxPolicy, ys: np.ndarray, rewards: np.ndarray,
    ref_logprobs: np.ndarray, beta: float,
) -> np.ndarray:
    """Per-sample coefficient r - beta * log(p(y) / ref(y))."""
    if np.any(~np.isfinite(ref_logprobs)):
        raise InfiniteDivergence("sampled index outside the reference support")
    lp = policy.log_probs()
    return rewards - beta * (lp[ys] - ref_logprobs)


def mc_gradient_reverse(
    policy: SoftmaxPolicy, s: Scenario, beta: float, batch: int,
    baseline: str, seed: int,
) -> np.ndarray:
    """Score-function estimator of the reverse-KL-regularized gradient."""
    rng = np.random.Generator(np.random.PCG64(seed))
    ys = sample_policy(policy, rng, batch)
    coef = reverse_coefficients(
        policy, ys, s.rewards.values[ys], s.reference.log_weights[ys], beta
    )
    return score_function_gradient(policy, ys, _apply_baseline(coef, baseline))


def mc_gradient_forward(
    policy: SoftmaxPolicy, s: Scenario, beta: float, batch: int, seed: int,
    sampled_regularizer: bool = False,
) -> np.ndarray:
    """Reward term from policy samples; regularizer exact over the
    reference (the reference is fully known here), or sampled from it
    when ``sampled_regularizer`` is set."""
    ss = np.random.SeedSequence(seed)
    k1, k2 = (int(c.generate_state(1)[0]) for c in ss.spawn(2))
    rng = np.random.Generator(np.random.PCG64(k1))
    ys = sample_policy(policy, rng, batch)
    g = score_function_gradient(policy, ys, s.rewards.values[ys])
    if beta > 0:
        p = policy.probs()
        if sampled_regularizer:
            from .dist import sample as dist_sample

            ws = dist_sample(s.reference, k2, batch)
            reg = np.zeros(policy.n)
            np.add.at(reg, ws, 1.0)
            reg = reg / batch - p
        else:
            reg = s.reference.probs - p
        reg[~policy.support_mask] = 0.0
        g = g + beta * reg
    return g


def matching_step_sft(
    policy: SoftmaxPolicy, target: Categorical, batch: int, seed: int
) -> np.ndarray:
    """Estimated gradient of KL(target || policy): the negative mean of
    grad log p over target samples (maximum likelihood on target draws)."""
    from .dist import sample as dist_sample

    ys = dist_sample(target, seed, batch)
    counts = np.zeros(policy.n)
    np.add.at(counts, ys, 1.0)
    g = policy.probs() - counts / batch
    g[~policy.support_mask] = 0.0
    return g


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_step(
    state: AdamState, params: np.ndarray, gradient: np.ndarray, lr: float,
    beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
) -> Tuple[AdamState, np.ndarray]:
    """One bias-corrected ascent step; returns (new state, new params)."""
    if not np.all(np.isfinite(gradient)):
        bad = np.flatnonzero(~np.isfinite(gradient))
        raise NonFiniteGradient(f"non-finite gradient at coordinates {bad[:8].tolist()}")
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * gradient
    v = beta2 * state.v + (1 - beta2) * gradient**2
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    return AdamState(m, v, t), params + lr * m_hat / (np.sqrt(v_hat) + eps)


# --------------------------------------------------------------------------
# training loop


@dataclass(frozen=True)
class Exact:
    pass


@dataclass(frozen=True)
class MonteCarlo:
    batch: int = 32
    baseline: str = "batch_mean"
    sampled_regularizer: bool = False

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.baseline not in BASELINES:
            raise ValueError(f"unknown baseline {self.baseline!r}")
        if self.baseline == "leave_one_out" and self.batch < 2:
            raise ValueError("leave_one_out needs batch >= 2")


GradientMode = Union[Exact, MonteCarlo]


@dataclass(frozen=True)
class TrainConfig:
    objective: TargetSpec
    gradient_mode: GradientMode = field(default_factory=Exact)
    mara: Optional[MaraConfig] = None
    steps: int = 3000
    learning_rate: float = 5e-3
    adam: Tuple[float, float, float] = (0.9, 0.999, 1e-8)
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.mara is not None and self.objective.kind == "generalized":
            raise ValueError("augmentation is defined for reverse and forward only")


@dataclass(frozen=True)
class StepRecord:
    objective_value: float
    tv_to_target: float
    entropy: float
    above_threshold_mass: Optional[float]


@dataclass(frozen=True)
class TrainResult:
    final_policy: Categorical
    trace: List[StepRecord]
    anchor_history: List[Optional[int]]
    target: Categorical


def _policy_support(s: Scenario, spec: TargetSpec) -> Optional[np.ndarray]:
    if spec.kind == "forward":
        return None
    if spec.kind == "generalized" and spec.beta == 0:
        return None
    return np.asarray(s.reference.support_mask)


def _global_threshold(s: Scenario, cfg: MaraConfig) -> float:
    r = s.rewards.values[s.reference.support_mask]
    return mara_mod.resolve_threshold(cfg.threshold_rule, r)


def _training_target(s: Scenario, cfg: TrainConfig) -> Categorical:
    spec = cfg.objective
    if cfg.mara is None:
        return analytic_target(s, spec)
    tau = _global_threshold(s, cfg.mara)
    anchor = mara_mod.global_anchor(s, tau, cfg.mara.anchor_tiebreak)
    if anchor is None:
        return analytic_target(s, spec)
    if spec.kind == "reverse":
        return mara_mod.mara_target(s, spec.beta, tau, anchor)
    return forward_kl_target(mara_mod.anchored_scenario(s, tau, anchor), spec.beta).distribution


def _exact_train_scenario(s: Scenario, cfg: TrainConfig) -> Scenario:
    if cfg.mara is None:
        return s
    tau = _global_threshold(s, cfg.mara)
    anchor = mara_mod.global_anchor(s, tau, cfg.mara.anchor_tiebreak)
    if anchor is None:
        return s
    if cfg.objective.kind == "reverse":
        rewards = mara_mod.augmented_reward_vector(s, cfg.objective.beta, tau, anchor)
        return Scenario(s.reference, rewards, name=f"{s.name}__augmented")
    return mara_mod.anchored_scenario(s, tau, anchor)


def train(s: Scenario, cfg: TrainConfig) -> TrainResult:
    """Run the optimization loop; deterministic for a given config."""
    spec = cfg.objective
    support = _policy_support(s, spec)
    policy = uniform_policy(s.n, support)
    state = AdamState(np.zeros(s.n), np.zeros(s.n))
    b1, b2, eps = cfg.adam

    target = _training_target(s, cfg)
    train_scenario = _exact_train_scenario(s, cfg)
    tau_global = _global_threshold(s, cfg.mara) if cfg.mara is not None else None
    above_set = (
        (s.rewards.values >= tau_global) if tau_global is not None else None
    )

    trace: List[StepRecord] = []
    anchors: List[Optional[int]] = []
    mc = cfg.gradient_mode if isinstance(cfg.gradient_mode, MonteCarlo) else None
    # exact mode draws nothing, and its marker seed may be negative
    rng = (
        np.random.Generator(np.random.PCG64(cfg.seed)) if mc is not None else None
    )

    for _ in range(cfg.steps):
        if mc is None:
            gradient = exact_gradient(policy, train_scenario, spec)
            if cfg.mara is not None:
                anchors.append(
                    mara_mod.global_anchor(s, tau_global, cfg.mara.anchor_tiebreak)
                )
        else:
            ys = sample_policy(policy, rng, mc.batch)
            if cfg.mara is not None:
                gradient, anchor = _mc_mara_gradient(policy, s, cfg, mc, ys)
                anchors.append(anchor)
            elif spec.kind == "forward":
                gradient = _mc_forward_from_batch(
                    policy, s, spec.beta, ys, rng, mc.sampled_regularizer
                )
            else:
                coef = reverse_coefficients(
                    policy, ys, s.rewards.values[ys],
                    s.reference.log_weights[ys], spec.beta,
                )
                if spec.kind == "generalized" and spec.eta > 0:
                    coef = coef - spec.eta * policy.log_probs()[ys]
                gradient = score_function_gradient(
                    policy, ys, _apply_baseline(coef, mc.baseline)
                )
        state, logits = adam_step(
            state, policy.logits, gradient, cfg.learning_rate, b1, b2, eps
        )
        policy = SoftmaxPolicy(logits, policy.support_mask)

        p = policy.probs()
        lp = policy.log_probs()
        active = policy.support_mask
        trace.append(
            StepRecord(
                objective_value=exact_objective(policy, train_scenario, spec),
                tv_to_target=float(0.5 * np.sum(np.abs(p - target.probs))),
                entropy=float(-np.sum(p[active] * lp[active])),
                above_threshold_mass=(
                    float(np.sum(p[above_set])) if above_set is not None else None
                ),
            )
        )
    return TrainResult(
        final_policy=policy.distribution(), trace=trace,
        anchor_history=anchors, target=target,
    )


def _mc_mara_gradient(policy, s, cfg: TrainConfig, mc: MonteCarlo, ys):
    spec = cfg.objective
    if spec.kind == "reverse":
        aug = mara_mod.augment_rewards(ys, s, cfg.mara)
        coef = reverse_coefficients(
            policy, ys, aug.augmented_rewards, aug.augmented_ref_logprobs, spec.beta
        )
        g = score_function_gradient(policy, ys, _apply_baseline(coef, mc.baseline))
        return g, aug.anchor_index
    aug = mara_mod.augment_ref_view(ys, s, cfg.mara)
    g = score_function_gradient(policy, ys, aug.augmented_rewards)
    if aug.anchor_index is not None:
        ref = mara_mod.anchored_scenario(s, aug.threshold_used, aug.anchor_index).reference
    else:
        ref = s.reference
    reg = ref.probs - policy.probs()
    reg[~policy.support_mask] = 0.0
    return g + spec.beta * reg, aug.anchor_index


def _mc_forward_from_batch(policy, s, beta, ys, rng, sampled_regularizer):
    g = score_function_gradient(policy, ys, s.rewards.values[ys])
    p = policy.probs()
    if sampled_regularizer:
        active = np.flatnonzero(s.reference.support_mask)
        cdf = np.cumsum(np.exp(s.reference.log_weights[active]))
        cdf[-1] = 1.0
        ws = active[np.searchsorted(cdf, rng.random(ys.size), side="right")]
        reg = np.zeros(policy.n)
        np.add.at(reg, ws, 1.0)
        reg = reg / ys.size - p
    else:
        reg = s.reference.probs - p
    reg[~policy.support_mask] = 0.0
    return g + beta * reg
