"""Iterative message distillation with a decaying retention ratio."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numeric import Tensor, as_tensor, masked, topk_mask


class ScheduleExhausted(ValueError):
    pass


@dataclass(frozen=True)
class DistillSchedule:
    family: str = "linear"
    alpha_start: float = 1.0
    delta: float = 0.2
    gamma: float = 0.74
    rounds: int = 3

    def __post_init__(self):
        if self.family not in ("linear", "exponential"):
            raise ValueError(f"unknown decay family {self.family!r}")
        if not 0.0 < self.alpha_start <= 1.0:
            raise ValueError("alpha_start must lie in (0, 1]")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        # invariant: every ratio up to the last round stays positive
        schedule_alpha(self, self.rounds)

    def alphas(self):
        return [schedule_alpha(self, k) for k in range(1, self.rounds + 1)]


def schedule_alpha(schedule, k):
    """Retention ratio for round ``k`` (1-based)."""
    if not 1 <= k <= schedule.rounds:
        raise ValueError(f"round {k} outside 1..{schedule.rounds}")
    if schedule.family == "linear":
        alpha = schedule.alpha_start - (k - 1) * schedule.delta
    else:
        alpha = schedule.alpha_start * schedule.gamma ** (k - 1)
    if alpha <= 1e-12:
        raise ScheduleExhausted(f"retention ratio {alpha:g} at round {k} is not positive")
    return alpha


def retained_count(alpha, d):
    # round before ceil so that e.g. 0.6 * 5 = 3.0000000000000004 keeps 3
    return max(1, min(d, math.ceil(round(alpha * d, 9))))


def distill_mask(message, alpha):
    """0/1 mask keeping the ceil(alpha * d) largest-magnitude dims per row."""
    message = np.asarray(message, dtype=np.float64)
    d = message.shape[-1] if message.ndim else 0
    if d == 0:
        raise ValueError("cannot distill an empty message")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    return topk_mask(message, retained_count(alpha, d), key=np.abs(message))


def distill_round(message, alpha):
    """One filtering round. Accepts a vector, a row-stacked matrix or a Tensor."""
    if isinstance(message, Tensor):
        return masked(message, distill_mask(message.data, alpha), op="distill")
    message = np.asarray(message, dtype=np.float64)
    return message * distill_mask(message, alpha)


def distill(message, schedule):
    """Apply ``schedule.rounds`` rounds, each on the previous round's output."""
    out = message
    for alpha in schedule.alphas():
        out = distill_round(out, alpha)
    return out


def distill_tensor(message, schedule):
    """Tensor version used inside the encoder; gradient passes kept dims only."""
    message = as_tensor(message)
    mask = np.ones(message.shape)
    current = message.data
    for alpha in schedule.alphas():
        step = distill_mask(current, alpha)
        mask *= step
        current = current * step
    return masked(message, mask, op="distill")
