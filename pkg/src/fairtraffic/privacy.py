"""Differential-privacy machinery for federated gradient aggregation.

Implements Gaussian-mechanism noise calibration, per-client gradient
clipping, noisy mean aggregation, adaptive clip-norm tracking, and a
budget accountant using the advanced composition bound. "Secure
aggregation" is a plain arithmetic mean over already-noised gradients;
no cryptography is involved.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BudgetExhaustedError,
    EmptyClientSetError,
    EmptyNormsError,
    InvalidPrivacyParamsError,
    NotClippedError,
)
from .gnn.model import ModelGradient, tree_add, tree_scale, tree_zeros_like


def calibrate_noise(epsilon: float, delta: float, clip_norm: float) -> float:
    """Noise multiplier sigma = sqrt(2 ln(1.25/delta)) * C / epsilon.

    A warning is emitted for epsilon >= 1, where the closed form is used
    outside its usual validity range; the reference experiments run
    epsilon = 1.0, so it is not an error.

    Raises:
        InvalidPrivacyParamsError: epsilon <= 0, delta outside (0,1), or
            clip_norm < 0.
    """
    if epsilon <= 0.0:
        raise InvalidPrivacyParamsError(f"epsilon must be > 0, got {epsilon}")
    if not 0.0 < delta < 1.0:
        raise InvalidPrivacyParamsError(f"delta must be in (0,1), got {delta}")
    if clip_norm < 0.0:
        raise InvalidPrivacyParamsError(f"clip_norm must be >= 0, got {clip_norm}")
    if epsilon >= 1.0:
        warnings.warn(
            f"epsilon={epsilon} >= 1: Gaussian-mechanism calibration used "
            "outside its strict validity range",
            stacklevel=2,
        )
    return math.sqrt(2.0 * math.log(1.25 / delta)) * clip_norm / epsilon


@dataclass(frozen=True)
class PrivacyParams:
    """Per-round privacy configuration; sigma derives from the other three."""

    epsilon: float = 1.0
    delta: float = 1e-5
    clip_norm: float = 1.0
    noise_multiplier: float | None = None  # override; None -> calibrate

    @property
    def sigma(self) -> float:
        """Calibrated noise scale, unless explicitly overridden."""
        if self.noise_multiplier is not None:
            return self.noise_multiplier
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return calibrate_noise(self.epsilon, self.delta, self.clip_norm)

    @property
    def noise_std(self) -> float:
        """Per-coordinate noise standard deviation sigma * C."""
        return self.sigma * self.clip_norm


def clip_gradient(grad: ModelGradient, clip_norm: float) -> ModelGradient:
    """Scale the gradient into the L2 ball of radius clip_norm.

    Divides by max(1, ||g||/C): gradients inside the ball pass through
    bit-identically, larger ones keep their direction.
    """
    if clip_norm <= 0.0:
        raise InvalidPrivacyParamsError(f"clip_norm must be > 0, got {clip_norm}")
    norm = grad.l2_norm
    scale = max(1.0, norm / clip_norm)
    if scale == 1.0:
        return grad.copy()
    return grad.scaled(1.0 / scale)


def add_noise(
    grad: ModelGradient, sigma: float, clip_norm: float, seed: int | list[int]
) -> ModelGradient:
    """Add i.i.d. Gaussian noise with std sigma*C to a clipped gradient.

    Deterministic given the seed; sigma = 0 returns the input unchanged.

    Raises:
        NotClippedError: input norm exceeds clip_norm beyond tolerance.
    """
    if grad.l2_norm > clip_norm + 1e-9:
        raise NotClippedError(
            f"gradient norm {grad.l2_norm:.6g} exceeds clip norm {clip_norm}"
        )
    if sigma == 0.0:
        return grad.copy()
    rng = np.random.default_rng(seed)
    std = sigma * clip_norm
    out = {}
    for k in sorted(grad.tensors):
        v = grad.tensors[k]
        out[k] = v + rng.normal(0.0, std, size=v.shape)
    return ModelGradient(out)


def compose_budget(per_round_epsilon: float, delta: float, rounds: int) -> float:
    """Total privacy loss after T rounds under advanced composition.

    epsilon_total = sqrt(2 T ln(1/delta)) * eps + T * eps * (e^eps - 1).

    Raises:
        InvalidPrivacyParamsError: negative inputs or delta outside (0,1).
    """
    if rounds < 0:
        raise InvalidPrivacyParamsError(f"rounds must be >= 0, got {rounds}")
    if per_round_epsilon < 0.0:
        raise InvalidPrivacyParamsError(f"epsilon must be >= 0, got {per_round_epsilon}")
    if not 0.0 < delta < 1.0:
        raise InvalidPrivacyParamsError(f"delta must be in (0,1), got {delta}")
    eps = per_round_epsilon
    return math.sqrt(2.0 * rounds * math.log(1.0 / delta)) * eps + rounds * eps * (
        math.exp(eps) - 1.0
    )


@dataclass
class PrivacyAccountant:
    """Tracks composed privacy spend; freezes when the budget would be exceeded.

    Charges are totally ordered (single writer). The composed spend uses
    the largest per-round epsilon seen, which reduces to the plain bound
    when every round charges the same epsilon.
    """

    epsilon_budget: float
    delta: float
    rounds_used: int = 0
    per_round_epsilon: list[float] = field(default_factory=list)
    spent: float = 0.0
    frozen: bool = False

    def composed(self, extra_epsilon: float | None = None) -> float:
        """Spend after the recorded rounds plus an optional extra charge."""
        eps_list = list(self.per_round_epsilon)
        if extra_epsilon is not None:
            eps_list.append(extra_epsilon)
        if not eps_list:
            return 0.0
        return compose_budget(max(eps_list), self.delta, len(eps_list))

    def charge(self, round_epsilon: float) -> float:
        """Record one round's epsilon; returns the new composed spend.

        Raises:
            BudgetExhaustedError: the accountant is frozen, or this charge
                would push the composed spend past the budget. State is
                unchanged on rejection.
        """
        if self.frozen:
            raise BudgetExhaustedError("privacy accountant is frozen")
        candidate = self.composed(round_epsilon)
        if candidate > self.epsilon_budget:
            self.frozen = True
            raise BudgetExhaustedError(
                f"charge would raise spend to {candidate:.4f} > budget "
                f"{self.epsilon_budget:.4f}"
            )
        self.per_round_epsilon.append(round_epsilon)
        self.rounds_used += 1
        self.spent = candidate
        return self.spent


def accountant_charge(acct: PrivacyAccountant, round_epsilon: float) -> PrivacyAccountant:
    """Functional wrapper over :meth:`PrivacyAccountant.charge`."""
    acct.charge(round_epsilon)
    return acct


def aggregate_private(
    grads: list[ModelGradient],
    params: PrivacyParams,
    acct: PrivacyAccountant,
    seed: int,
) -> ModelGradient:
    """Clip and noise each client gradient, then average; one budget charge.

    Per-client noise draws are seeded by (seed, client position) so the
    aggregate is reproducible. With sigma = 0 this is exactly the clipped
    mean.

    Raises:
        EmptyClientSetError: no gradients.
        BudgetExhaustedError: accountant rejected the charge (raised
            before any aggregation).
    """
    if not grads:
        raise EmptyClientSetError("aggregation requires at least one gradient")
    acct.charge(params.epsilon)
    total = tree_zeros_like(grads[0].tensors)
    for i, grad in enumerate(grads):
        clipped = clip_gradient(grad, params.clip_norm)
        noised = add_noise(clipped, params.sigma, params.clip_norm, [seed, i])
        total = tree_add(total, noised.tensors)
    return ModelGradient(tree_scale(total, 1.0 / len(grads)))


@dataclass(frozen=True)
class AdaptiveClipConfig:
    """Smoothing and quantile settings for adaptive clipping."""

    alpha: float = 0.7
    quantile: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidPrivacyParamsError(f"alpha must be in [0,1], got {self.alpha}")
        if not 0.5 <= self.quantile <= 0.9:
            raise InvalidPrivacyParamsError(
                f"quantile must be in [0.5,0.9], got {self.quantile}"
            )


def adapt_clip_norm(
    current: float, norms: list[float], config: AdaptiveClipConfig
) -> float:
    """Next clip norm: alpha * C_t + (1 - alpha) * quantile(norms, q).

    The quantile is the lower order statistic: sorted norms at index
    ceil(q * n) - 1 (0-based), which is reproducible across platforms.

    Raises:
        EmptyNormsError: empty norm list.
    """
    if not norms:
        raise EmptyNormsError("adaptive clipping requires at least one norm")
    ordered = sorted(norms)
    idx = max(0, math.ceil(config.quantile * len(ordered)) - 1)
    return config.alpha * current + (1.0 - config.alpha) * ordered[idx]
