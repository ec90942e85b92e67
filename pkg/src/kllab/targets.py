"""Exact optimal distributions for regularized reward maximization.

Three families:

* reverse-KL penalty -> exponential tilt of the reference,
* forward-KL penalty -> rational form with a normalization multiplier
  found by root-finding (plus the off-support leftover-mass regime),
* generalized (KL + entropy) -> tempered-reference tilt.

Also the closed-form log probability ratio between two indices under the
reverse-KL optimum, and the coefficient at which two indices trade places.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dist import Categorical, Scenario, normalize
from .errors import (
    InvalidCoefficient,
    NoFiniteFlip,
    SolverFailure,
    UndefinedRatio,
)

KINDS = ("reverse", "forward", "generalized")


@dataclass(frozen=True)
class TargetSpec:
    """Which regularized objective, and with which coefficients."""

    kind: str
    beta: float
    eta: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidCoefficient(f"unknown kind {self.kind!r}")
        if self.kind in ("reverse", "forward") and not self.beta > 0:
            raise InvalidCoefficient(f"{self.kind} requires beta > 0")
        if self.kind == "generalized" and not self.beta + self.eta > 0:
            raise InvalidCoefficient("generalized requires beta + eta > 0")
        if self.beta < 0 or self.eta < 0:
            raise InvalidCoefficient("coefficients must be nonnegative")


@dataclass(frozen=True)
class ForwardSolution:
    """Forward-KL optimum plus its normalization multiplier.

    ``boundary_case`` marks the regime where the multiplier is pinned to
    the best off-support reward and leftover mass sits off-support.
    """

    distribution: Categorical
    lam: float
    off_support_mass: float
    boundary_case: bool


def reverse_kl_target(s: Scenario, beta: float) -> Categorical:
    """Optimum of reward maximization with a reverse-KL penalty.

    Proportional to ``reference * exp(R / beta)``; masked wherever the
    reference is masked.
    """
    if not beta > 0:
        raise InvalidCoefficient("beta must be > 0")
    lw = np.where(
        s.reference.support_mask,
        s.reference.log_weights + s.rewards.values / beta,
        -np.inf,
    )
    return normalize(lw)


def generalized_target(s: Scenario, beta: float, eta: float) -> Categorical:
    """Optimum under combined reverse-KL (beta) and entropy (eta) penalties.

    Proportional to ``reference^(beta/(beta+eta)) * exp(R/(beta+eta))``.
    With eta = 0 this is the reverse-KL target. With beta = 0 the
    reference enters as ``reference^0 = 1`` even at masked indices, so
    the entropy-only target is a full-support softmax of ``R / eta``.
    """
    if beta < 0 or eta < 0 or not beta + eta > 0:
        raise InvalidCoefficient("need beta, eta >= 0 with beta + eta > 0")
    total = beta + eta
    if beta == 0:
        return normalize(s.rewards.values / total)
    lw = np.where(
        s.reference.support_mask,
        (beta / total) * s.reference.log_weights + s.rewards.values / total,
        -np.inf,
    )
    return normalize(lw)


def _on_support_mass(lam: float, beta: float, ref_probs, rewards) -> float:
    return float(np.sum(beta * ref_probs / (lam - rewards)))


def _solve_lambda(beta: float, ref_probs, rewards, lower: float) -> float:
    """Bisect for the multiplier on the strictly decreasing mass map.

    ``lower`` is the infimum of admissible multipliers (mass -> inf or
    already >= 1 there); the bracket ceiling ``lower + beta + 1`` always
    has mass < 1 because the reference masses sum to 1.
    """
    lo = lower
    hi = lower + beta + 1.0
    eps = 1e-12 * max(1.0, abs(lower))
    if np.any(rewards >= lower):
        # open lower end (mass diverges at lower): step inside until >= 1
        lo = lower + eps
        tries = 0
        while _on_support_mass(lo, beta, ref_probs, rewards) < 1.0:
            eps *= 0.25
            lo = lower + eps
            tries += 1
            if tries > 60:
                raise SolverFailure("could not bracket the multiplier from below")
    if _on_support_mass(hi, beta, ref_probs, rewards) >= 1.0:
        tries = 0
        while _on_support_mass(hi, beta, ref_probs, rewards) >= 1.0:
            hi = lower + (hi - lower) * 2.0
            tries += 1
            if tries > 60:
                raise SolverFailure("could not bracket the multiplier from above")
    for _ in range(500):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _on_support_mass(mid, beta, ref_probs, rewards) > 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def forward_kl_target(s: Scenario, beta: float) -> ForwardSolution:
    """Optimum of reward maximization with a forward-KL penalty.

    On-support masses are ``beta * reference / (lam - R)`` with ``lam``
    the unique multiplier normalizing the distribution. When the best
    reward lives off the reference support and the on-support mass at
    that reward level falls short of 1, the multiplier is pinned there
    and the leftover mass is spread uniformly over the off-support
    argmax set.
    """
    if not beta > 0:
        raise InvalidCoefficient("beta must be > 0")
    mask = s.reference.support_mask
    ref_probs = np.exp(s.reference.log_weights[mask])
    r_on = s.rewards.values[mask]
    r_max_in = float(np.max(r_on))
    off = ~mask
    r_max_out = float(np.max(s.rewards.values[off])) if np.any(off) else -np.inf

    boundary = False
    off_mass = 0.0
    masses = np.zeros(s.n)
    if r_max_out > r_max_in:
        z_out = _on_support_mass(r_max_out, beta, ref_probs, r_on)
        if z_out < 1.0:
            lam = r_max_out
            boundary = True
            off_mass = 1.0 - z_out
            argmax_out = off & (s.rewards.values == r_max_out)
            masses[mask] = beta * ref_probs / (lam - r_on)
            masses[argmax_out] = off_mass / np.count_nonzero(argmax_out)
        else:
            lam = _solve_lambda(beta, ref_probs, r_on, r_max_out)
            masses[mask] = beta * ref_probs / (lam - r_on)
    else:
        lam = _solve_lambda(beta, ref_probs, r_on, r_max_in)
        masses[mask] = beta * ref_probs / (lam - r_on)

    with np.errstate(divide="ignore"):
        dist = normalize(np.log(masses))
    return ForwardSolution(
        distribution=dist, lam=float(lam), off_support_mass=off_mass,
        boundary_case=boundary,
    )


def log_prob_ratio(s: Scenario, beta: float, i: int, j: int) -> float:
    """Closed-form log ratio of two indices under the reverse-KL optimum.

    Equals ``log(ref_i / ref_j) + (R_i - R_j) / beta``; the normalization
    constant cancels, so no overflow for any beta.
    """
    if not beta > 0:
        raise InvalidCoefficient("beta must be > 0")
    if not (s.reference.support_mask[i] and s.reference.support_mask[j]):
        raise UndefinedRatio("both indices must carry reference mass")
    lref = s.reference.log_weights
    r = s.rewards.values
    return float(lref[i] - lref[j] + (r[i] - r[j]) / beta)


def flip_beta(s: Scenario, i: int, j: int) -> float:
    """Coefficient at which indices i and j get equal target probability.

    ``beta* = (R_j - R_i) / (log ref_i - log ref_j)``. Raises
    :class:`NoFiniteFlip` when the reference log-probs coincide or the
    resulting coefficient is not positive and finite.
    """
    if not (s.reference.support_mask[i] and s.reference.support_mask[j]):
        raise UndefinedRatio("both indices must carry reference mass")
    if i == j:
        raise NoFiniteFlip("identical indices never trade places")
    dref = s.reference.log_weights[i] - s.reference.log_weights[j]
    dr = s.rewards.values[j] - s.rewards.values[i]
    if dref == 0.0:
        raise NoFiniteFlip("equal reference log-probs: no coefficient equalizes")
    beta_star = dr / dref
    if not np.isfinite(beta_star) or beta_star <= 0:
        raise NoFiniteFlip(f"computed coefficient {beta_star!r} is not positive")
    return float(beta_star)


def analytic_target(s: Scenario, spec: TargetSpec) -> Categorical:
    """Dispatch to the right target family; forward returns its distribution."""
    if spec.kind == "reverse":
        return reverse_kl_target(s, spec.beta)
    if spec.kind == "forward":
        return forward_kl_target(s, spec.beta).distribution
    return generalized_target(s, spec.beta, spec.eta)
