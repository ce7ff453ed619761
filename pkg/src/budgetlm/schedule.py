"""Budget-synchronized linear warmup/decay schedule and throughput planning.

The schedule horizon is expressed in optimizer steps. A run's horizon is
derived from its wall-clock budget and a measured steps/second figure; a
days_factor of 1 makes the learning rate hit zero exactly when the budget
runs out, while larger factors stretch the schedule so training ceases
partway down the decay.
"""

from __future__ import annotations

import logging
import statistics
import time
from dataclasses import dataclass
from typing import Callable

from .errors import ConfigError
from .util import round_half_up

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScheduleParams:
    """Linear warmup to peak_lr over round(warmup_proportion * total_steps)
    steps, then linear decay to zero at total_steps."""

    peak_lr: float
    warmup_proportion: float
    total_steps: int

    def __post_init__(self) -> None:
        if self.peak_lr <= 0:
            raise ConfigError(f"peak_lr must be positive, got {self.peak_lr}")
        if not 0 <= self.warmup_proportion < 1:
            raise ConfigError(f"warmup_proportion must be in [0, 1), got {self.warmup_proportion}")
        if self.total_steps < 1:
            raise ConfigError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.warmup_steps >= self.total_steps:
            raise ConfigError(
                f"warmup ({self.warmup_steps} steps) must end before total_steps "
                f"({self.total_steps})"
            )

    @property
    def warmup_steps(self) -> int:
        return round_half_up(self.warmup_proportion * self.total_steps)


def lr_at(step: int, params: ScheduleParams) -> float:
    """Learning rate at an integer step: 0 -> peak over the warmup, peak -> 0 after.

    With no warmup the rate starts at peak immediately. Steps past the end of
    the schedule clamp to zero with a warning (the schedule is exhausted).
    """
    if step < 0:
        raise ConfigError(f"step must be >= 0, got {step}")
    T = params.total_steps
    if step > T:
        log.warning("schedule exhausted: step %d > total_steps %d, lr clamped to 0", step, T)
        return 0.0
    # Ratios are taken first so the knot and endpoints are exact: x/x == 1.0
    # and 0/x == 0.0 in IEEE arithmetic, making lr(W) == peak and lr(T) == 0.
    W = params.warmup_steps
    if step <= W:
        if W == 0:
            return params.peak_lr
        return params.peak_lr * (step / W)
    return params.peak_lr * ((T - step) / (T - W))


@dataclass(frozen=True)
class BudgetPlan:
    """Frozen step accounting for one run.

    total_steps is the schedule horizon; budget_steps is how many of those
    the wall-clock budget is expected to cover. With days_factor == 1 the two
    coincide and training ends exactly when the learning rate reaches zero.
    """

    budget_seconds: float
    days_factor: float
    steps_per_second: float
    total_steps: int
    budget_steps: int


def plan_budget(budget_seconds: float, days_factor: float, steps_per_second: float) -> BudgetPlan:
    """Translate (budget, schedule horizon factor, measured throughput) into steps."""
    if budget_seconds <= 0:
        raise ConfigError(f"budget_seconds must be positive, got {budget_seconds}")
    if days_factor <= 0:
        raise ConfigError(f"days_factor must be positive, got {days_factor}")
    if steps_per_second <= 0:
        raise ConfigError(f"steps_per_second must be positive, got {steps_per_second}")
    # Both counts are floored at one step so a degenerate sub-step budget
    # still trains, and the factor-1 identity budget_steps == total_steps holds.
    total = max(1, round_half_up(days_factor * budget_seconds * steps_per_second))
    budget = min(total, max(1, round_half_up(budget_seconds * steps_per_second)))
    return BudgetPlan(
        budget_seconds=budget_seconds,
        days_factor=days_factor,
        steps_per_second=steps_per_second,
        total_steps=total,
        budget_steps=budget,
    )


def calibrate_throughput(
    step_fn: Callable[[], None],
    warm_steps: int,
    clock: Callable[[], float] = time.monotonic,
) -> float:
    """Measure steps/second by timing warm_steps invocations of step_fn.

    The first two timings are discarded (warm-up jitter) and the median of
    the rest wins. Callers normally run this on a throwaway copy of the
    trainer so calibration stays out of the budget accounting.
    """
    if warm_steps < 5:
        raise ConfigError(f"warm_steps must be >= 5, got {warm_steps}")
    durations: list[float] = []
    for _ in range(warm_steps):
        t0 = clock()
        step_fn()
        durations.append(clock() - t0)
    med = statistics.median(durations[2:])
    if med <= 0:
        raise ConfigError("measured step time is zero; clock resolution too coarse")
    return 1.0 / med
