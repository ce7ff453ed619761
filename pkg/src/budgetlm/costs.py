"""Compute-cost accounting: GB-hours, dollar estimates, samples-per-day tables.

Cloud rates are inputs, not constants. The default rate range below is
back-solved so the toolkit's baseline 2304 GB-hour budget (8 GPUs x 12 GB x
24 h) lands in the $300-$400 bracket; pass explicit rates for anything
current.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError

SECONDS_PER_DAY = 86400.0

DEFAULT_RATE_RANGE = (0.1302, 0.1736)  # $/GB-hour


@dataclass(frozen=True)
class HardwareSpec:
    gpu_count: int
    gpu_memory_gb: float

    def __post_init__(self) -> None:
        if self.gpu_count <= 0 or self.gpu_memory_gb <= 0:
            raise ConfigError("hardware values must be positive")


@dataclass(frozen=True)
class ThroughputRecord:
    """One measured configuration: how fast it covers samples."""

    label: str
    bsz: int
    steps: int
    samples: int
    samples_per_second: float

    def __post_init__(self) -> None:
        if self.samples != self.bsz * self.steps:
            raise ConfigError(
                f"{self.label}: samples ({self.samples}) must equal bsz*steps "
                f"({self.bsz * self.steps})"
            )

    @classmethod
    def for_target(
        cls, label: str, bsz: int, samples_per_second: float, samples_target: int
    ) -> "ThroughputRecord":
        """Build a record covering at least samples_target (steps rounded up)."""
        if bsz <= 0 or samples_target <= 0:
            raise ConfigError("bsz and samples_target must be positive")
        steps = math.ceil(samples_target / bsz)
        return cls(
            label=label,
            bsz=bsz,
            steps=steps,
            samples=bsz * steps,
            samples_per_second=samples_per_second,
        )


def gb_hours(hw: HardwareSpec, hours: float) -> float:
    """Memory-capacity x time budget currency: gpu_count * gpu_memory_gb * hours."""
    if hours <= 0:
        raise ConfigError(f"hours must be positive, got {hours}")
    return hw.gpu_count * hw.gpu_memory_gb * hours


def dollar_estimate(
    gbh: float, rate_range: tuple[float, float] = DEFAULT_RATE_RANGE
) -> tuple[float, float]:
    """Elementwise GB-hours * $/GB-hour over a (low, high) rate range."""
    if gbh < 0:
        raise ConfigError(f"gb_hours must be >= 0, got {gbh}")
    lo, hi = rate_range
    if lo < 0 or hi < lo:
        raise ConfigError(f"rate range must satisfy 0 <= low <= high, got {rate_range}")
    return (gbh * lo, gbh * hi)


def days_to_cover(samples_target: float, samples_per_second: float) -> float:
    """Days needed to stream samples_target examples at a measured rate."""
    if samples_per_second <= 0:
        raise ConfigError(f"samples_per_second must be positive, got {samples_per_second}")
    if samples_target <= 0:
        raise ConfigError(f"samples_target must be positive, got {samples_target}")
    return samples_target / (samples_per_second * SECONDS_PER_DAY)


def emit_table(records: list[ThroughputRecord], samples_target: int) -> str:
    """Fixed-width comparison table: label, bsz, steps, samples, days."""
    rows = []
    for rec in records:
        days = days_to_cover(samples_target, rec.samples_per_second)
        rows.append((rec.label, rec.bsz, rec.steps, rec.samples, days))
    header = f"{'config':<24} {'bsz':>6} {'steps':>9} {'samples':>12} {'days':>7}"
    lines = [header, "-" * len(header)]
    for label, bsz, steps, samples, days in rows:
        lines.append(f"{label:<24} {bsz:>6d} {steps:>9d} {samples:>12d} {days:>7.2f}")
    return "\n".join(lines)
